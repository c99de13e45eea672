//! The fitted-model file.

use std::path::Path;

use gpsmc::data::{Normalization, TimeKind, TimeSeries};
use gpsmc::kernel::parse;
use gpsmc::smc::ParticleCollection;
use gpsmc::ModelState;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const MODEL_VERSION: &str = "gpsmc-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    /// See [`TimeSeries::hash`].
    pub hash: String,
    pub n: usize,
    pub kind: TimeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleRecord {
    /// Normalized weight.
    pub weight: f64,
    pub log_weight: f64,
    pub kernel: String,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub config: Value,
    pub data: DataRecord,
    pub normalization: Normalization,
    pub log_marginal: f64,
    pub particles: Vec<ParticleRecord>,
}

impl ModelArtifact {
    pub fn new(
        config: Value,
        series: &TimeSeries,
        normalization: Normalization,
        pc: &ParticleCollection<ModelState>,
    ) -> Result<ModelArtifact> {
        let weights = pc.normalized_weights()?;
        let particles = pc
            .particles
            .iter()
            .zip(&pc.log_weights)
            .zip(weights)
            .map(|((p, lw), w)| ParticleRecord {
                weight: w,
                log_weight: *lw,
                kernel: p.expr.to_string(),
                noise: p.noise,
            })
            .collect();
        Ok(ModelArtifact {
            version: MODEL_VERSION.into(),
            config,
            data: DataRecord {
                hash: series.hash(),
                n: series.len(),
                kind: series.kind,
            },
            normalization,
            log_marginal: pc.log_marginal(),
            particles,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(e.into()))?;
        let a: ModelArtifact =
            serde_json::from_str(&text).map_err(|e| CliError::Data(e.into()))?;
        if a.version != MODEL_VERSION {
            return Err(CliError::Data(gpsmc::Error::InvalidArgument(format!(
                "unsupported model version `{}`",
                a.version
            ))));
        }
        Ok(a)
    }

    /// Fails unless `series` is the data the model was fitted to.
    pub fn check_data(&self, series: &TimeSeries) -> Result<()> {
        let found = series.hash();
        if found != self.data.hash {
            return Err(CliError::Data(gpsmc::Error::StaleModel {
                expected: self.data.hash.clone(),
                found,
            }));
        }
        Ok(())
    }

    /// Rebuilds the weighted particles.
    pub fn collection(&self) -> Result<ParticleCollection<ModelState>> {
        let mut particles = Vec::with_capacity(self.particles.len());
        for p in &self.particles {
            let expr = parse(&p.kernel).map_err(CliError::Data)?;
            particles.push(ModelState::new(expr, p.noise));
        }
        Ok(ParticleCollection {
            particles,
            log_weights: self.particles.iter().map(|p| p.log_weight).collect(),
            increments: Vec::new(),
            step: 0,
        })
    }

    /// Total weight per structure, heaviest first.
    pub fn top_structures(&self) -> Vec<(String, f64)> {
        let mut acc: Vec<(String, f64)> = Vec::new();
        for p in &self.particles {
            let s = parse(&p.kernel)
                .map(|e| e.structure_string())
                .unwrap_or_else(|_| p.kernel.clone());
            match acc.iter_mut().find(|(k, _)| *k == s) {
                Some(e) => e.1 += p.weight,
                None => acc.push((s, p.weight)),
            }
        }
        acc.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        acc
    }
}
