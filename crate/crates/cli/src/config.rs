//! Run configuration: a JSON file mirroring [`RunConfig`], plus flag overrides.

use std::path::{Path, PathBuf};

use gpsmc::data::TimeFormat;
use gpsmc::moves::MoveConfig;
use gpsmc::smc::{ScheduleKind, SmcConfig};
use gpsmc::PcfgConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataColumns {
    pub time_column: String,
    pub value_column: String,
    pub time_format: TimeFormat,
}

impl Default for DataColumns {
    fn default() -> Self {
        DataColumns {
            time_column: "t".into(),
            value_column: "y".into(),
            time_format: TimeFormat::Auto,
        }
    }
}

/// Settings of the `benchmark` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Compute budgets. SMC runs `b` rejuvenation steps per data batch, the
    /// MCMC-only regime `b` times the number of batches, and greedy search
    /// `b` optimizer iterations per initialization.
    pub budgets: Vec<usize>,
    pub greedy_max_depth: usize,
    pub greedy_restarts: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            budgets: vec![5, 10, 20],
            greedy_max_depth: 3,
            greedy_restarts: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub particles: usize,
    pub rejuvenation_steps: usize,
    pub schedule: ScheduleKind,
    pub ess_threshold: f64,
    pub moves: MoveConfig,
    pub pcfg: PcfgConfig,
    pub horizon: usize,
    /// Central interval level, e.g. 0.95.
    pub level: f64,
    /// Seasonal period for MASE and MSIS.
    pub season: usize,
    pub data: DataColumns,
    pub benchmark: BenchmarkConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let smc = SmcConfig::default();
        RunConfig {
            seed: smc.seed,
            particles: smc.particles,
            rejuvenation_steps: smc.rejuvenation_steps,
            schedule: smc.schedule,
            ess_threshold: smc.ess_threshold,
            moves: MoveConfig::default(),
            pcfg: PcfgConfig::default(),
            horizon: 18,
            level: 0.95,
            season: gpsmc::metrics::MONTHLY_PERIOD,
            data: DataColumns::default(),
            benchmark: BenchmarkConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; they take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub rejuvenation_steps: Option<usize>,
    pub horizon: Option<usize>,
    pub level: Option<f64>,
    pub out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(gpsmc::Error::Config(msg.into()))
}

impl RunConfig {
    /// Reads the optional config file and applies `overrides`.
    ///
    /// A seed must be given by one of the two; there is no fallback.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
                {
                    Value::Object(m) => m,
                    _ => return Err(config_err(format!("{}: expected a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(key.into(), v);
            }
        };
        set("seed", overrides.seed.map(Value::from));
        set("particles", overrides.particles.map(Value::from));
        set("rejuvenation_steps", overrides.rejuvenation_steps.map(Value::from));
        set("horizon", overrides.horizon.map(Value::from));
        set("level", overrides.level.map(Value::from));
        set(
            "out",
            overrides.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        if !map.contains_key("seed") {
            return Err(config_err("no seed given; pass --seed or set `seed` in the config file"));
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.smc().validate().map_err(CliError::Config)?;
        self.moves.validate().map_err(CliError::Config)?;
        self.pcfg.validate().map_err(CliError::Config)?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(config_err(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.season == 0 {
            return Err(config_err("season must be positive"));
        }
        if self.benchmark.budgets.is_empty() || self.benchmark.budgets.contains(&0) {
            return Err(config_err("benchmark budgets must be positive and non-empty"));
        }
        if self.benchmark.greedy_max_depth == 0 {
            return Err(config_err("greedy_max_depth must be at least 1"));
        }
        Ok(())
    }

    pub fn smc(&self) -> SmcConfig {
        SmcConfig {
            particles: self.particles,
            rejuvenation_steps: self.rejuvenation_steps,
            schedule: self.schedule,
            ess_threshold: self.ess_threshold,
            seed: self.seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.level
    }

    /// The settings that determine a fitted model, without output locations.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out");
        }
        v
    }
}
