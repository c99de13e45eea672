//! The four subcommands, each split into a pure library call and a thin
//! wrapper that writes files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use gpsmc::baseline::{greedy_search, mcmc_search, SearchConfig, TraceRow};
use gpsmc::data::{encode_date, future_times, load_csv, normalize, split, TimeSeries};
use gpsmc::forecast::{forecast_intervals, Forecast, Mixture};
use gpsmc::metrics::{evaluate, smape, MetricReport};
use gpsmc::smc::{make_schedule, run_smc, GpModel, ParticleCollection, SmcOutput, StepDiagnostics};
use gpsmc::ModelState;
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(output_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(output_err(path))
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(output_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |e: csv::Error| CliError::Other(e.into());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(output_err(path))
}

pub fn load_series(path: &Path, cfg: &RunConfig) -> Result<TimeSeries> {
    load_csv(
        path,
        &cfg.data.time_column,
        &cfg.data.value_column,
        cfg.data.time_format,
    )
    .map_err(CliError::Data)
}

fn model(cfg: &RunConfig) -> GpModel {
    GpModel {
        pcfg: cfg.pcfg.clone(),
        moves: cfg.moves.clone(),
    }
}

pub struct Fitted {
    pub artifact: ModelArtifact,
    pub output: SmcOutput<ModelState>,
}

pub fn fit_series(series: &TimeSeries, cfg: &RunConfig) -> Result<Fitted> {
    let norm = normalize(series).map_err(CliError::Data)?;
    let output = run_smc(&model(cfg), norm.observations(), &cfg.smc())?;
    let artifact = ModelArtifact::new(cfg.echo(), series, norm.record, &output.collection)?;
    Ok(Fitted { artifact, output })
}

#[derive(Serialize)]
struct DiagnosticsRow {
    step: usize,
    n_obs: usize,
    ess: f64,
    resampled: bool,
    log_marginal: f64,
    structure_acceptance: f64,
    hmc_acceptance: f64,
    rejuvenation_flops: u64,
}

impl From<&StepDiagnostics> for DiagnosticsRow {
    fn from(d: &StepDiagnostics) -> Self {
        DiagnosticsRow {
            step: d.step,
            n_obs: d.n_obs,
            ess: d.ess,
            resampled: d.resampled,
            log_marginal: d.log_marginal,
            structure_acceptance: d.structure_acceptance,
            hmc_acceptance: d.hmc_acceptance,
            rejuvenation_flops: d.rejuvenation_flops,
        }
    }
}

const DIAGNOSTICS_HEADER: [&str; 8] = [
    "step",
    "n_obs",
    "ess",
    "resampled",
    "log_marginal",
    "structure_acceptance",
    "hmc_acceptance",
    "rejuvenation_flops",
];

/// Human-readable listing of the heaviest structures.
pub fn summary(artifact: &ModelArtifact, limit: usize) -> String {
    let mut s = format!(
        "{} particles, {} observations, log marginal likelihood {:.4}\n",
        artifact.particles.len(),
        artifact.data.n,
        artifact.log_marginal
    );
    for (structure, w) in artifact.top_structures().into_iter().take(limit) {
        s.push_str(&format!("{w:>8.4}  {structure}\n"));
    }
    s
}

/// Fits the data at `data` and writes model.json, diagnostics.csv and
/// summary.txt to the output directory.
pub fn cmd_fit(data: &Path, cfg: &RunConfig) -> Result<Fitted> {
    let series = load_series(data, cfg)?;
    let fitted = fit_series(&series, cfg)?;
    create_dir(&cfg.out)?;
    fitted.artifact.save(&cfg.out.join("model.json"))?;
    let rows: Vec<DiagnosticsRow> = fitted.output.diagnostics.iter().map(Into::into).collect();
    write_csv(&cfg.out.join("diagnostics.csv"), &DIAGNOSTICS_HEADER, &rows)?;
    write_text(&cfg.out.join("summary.txt"), &summary(&fitted.artifact, 10))?;
    Ok(fitted)
}

/// Forecasts in original units, with stamps in the source format.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastTable {
    pub stamps: Vec<String>,
    pub forecast: Forecast,
}

impl ForecastTable {
    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }
}

/// Forecasts from weighted particles in model units at original-unit times.
pub fn forecast_collection(
    pc: &ParticleCollection<ModelState>,
    series: &TimeSeries,
    record: &gpsmc::data::Normalization,
    stamps: Vec<String>,
    times: Vec<f64>,
    level: f64,
) -> Result<ForecastTable> {
    let alpha = 1.0 - level;
    if times.is_empty() {
        return Ok(ForecastTable {
            stamps,
            forecast: Forecast {
                times,
                mean: Vec::new(),
                lower: Vec::new(),
                upper: Vec::new(),
                alpha,
                mixture: Mixture { components: Vec::new() },
            },
        });
    }
    let t = record.times(&series.times);
    let y = record.values(&series.values);
    let obs = gpsmc::Observations::new(&t, &y);
    let mut f = forecast_intervals(pc, obs, &record.times(&times), alpha)?;
    f.map_values(record.value_mean, record.value_scale);
    Ok(ForecastTable {
        stamps,
        forecast: f.with_times(times),
    })
}

pub fn forecast_model(
    artifact: &ModelArtifact,
    series: &TimeSeries,
    horizon: usize,
    level: f64,
) -> Result<ForecastTable> {
    artifact.check_data(series)?;
    let (stamps, times) = future_times(series, horizon).map_err(CliError::Data)?;
    forecast_collection(
        &artifact.collection()?,
        series,
        &artifact.normalization,
        stamps,
        times,
        level,
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastRow {
    pub time: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

const FORECAST_HEADER: [&str; 4] = ["time", "mean", "lower", "upper"];

pub fn forecast_rows(table: &ForecastTable) -> Vec<ForecastRow> {
    let f = &table.forecast;
    (0..table.len())
        .map(|i| ForecastRow {
            time: table.stamps[i].clone(),
            mean: f.mean[i],
            lower: f.lower[i],
            upper: f.upper[i],
        })
        .collect()
}

/// Writes forecast.csv and mixture.json.
pub fn cmd_forecast(model_path: &Path, data: &Path, cfg: &RunConfig) -> Result<ForecastTable> {
    let artifact = ModelArtifact::load(model_path)?;
    let series = load_series(data, cfg)?;
    let table = forecast_model(&artifact, &series, cfg.horizon, cfg.level)?;
    create_dir(&cfg.out)?;
    write_csv(&cfg.out.join("forecast.csv"), &FORECAST_HEADER, &forecast_rows(&table))?;
    let mixture = serde_json::to_string_pretty(&table).expect("forecast serializes");
    write_text(&cfg.out.join("mixture.json"), &(mixture + "\n"))?;
    Ok(table)
}

fn encode_stamp(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().or_else(|| encode_date(s))
}

/// Reads a forecast CSV and orders its rows by time.
pub fn read_forecast(path: &Path) -> Result<Vec<(f64, ForecastRow)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(e.into()))?;
    let mut rows = Vec::new();
    for (i, r) in reader.deserialize::<ForecastRow>().enumerate() {
        let r = r.map_err(|e| CliError::Data(e.into()))?;
        let t = encode_stamp(&r.time).ok_or_else(|| {
            CliError::Data(gpsmc::Error::Data {
                path: path.to_path_buf(),
                row: i + 2,
                message: format!("cannot parse time `{}`", r.time),
            })
        })?;
        rows.push((t, r));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows)
}

fn alignment_err(msg: String) -> CliError {
    CliError::Data(gpsmc::Error::InvalidArgument(msg))
}

/// Scores forecast rows against held-out values matched by time.
pub fn evaluate_files(
    forecast: &Path,
    truth: &Path,
    insample: &Path,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    let rows = read_forecast(forecast)?;
    let truth = load_series(truth, cfg)?;
    let insample = load_series(insample, cfg)?;
    if rows.len() != truth.len() {
        return Err(alignment_err(format!(
            "forecast has {} rows but the truth has {}",
            rows.len(),
            truth.len()
        )));
    }
    for ((t, r), u) in rows.iter().zip(&truth.times) {
        if t != u {
            return Err(alignment_err(format!("forecast time `{}` has no matching truth row", r.time)));
        }
    }
    let col = |f: fn(&ForecastRow) -> f64| rows.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
    Ok(evaluate(
        &truth.values,
        &col(|r| r.mean),
        &col(|r| r.lower),
        &col(|r| r.upper),
        &insample.values,
        cfg.season,
        cfg.alpha(),
    )?)
}

/// Writes metrics.json.
pub fn cmd_eval(forecast: &Path, truth: &Path, insample: &Path, cfg: &RunConfig) -> Result<MetricReport> {
    let report = evaluate_files(forecast, truth, insample, cfg)?;
    create_dir(&cfg.out)?;
    let text = serde_json::to_string_pretty(&report).expect("metrics serialize");
    write_text(&cfg.out.join("metrics.json"), &(text + "\n"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub budget: usize,
    pub smape: Option<f64>,
    pub wallclock_ms: f64,
    /// Cholesky flops spent in rejuvenation; empty for greedy search.
    pub cholesky_flops: Option<u64>,
    pub status: String,
}

const BENCHMARK_HEADER: [&str; 6] = ["method", "budget", "smape", "wallclock_ms", "cholesky_flops", "status"];
const TRACE_HEADER: [&str; 5] = ["depth", "structure", "bic", "loglik", "elapsed_ms"];

pub struct Benchmark {
    pub rows: Vec<BenchmarkRow>,
    /// Greedy traces keyed by budget.
    pub traces: Vec<(usize, Vec<TraceRow>)>,
}

/// Runs SMC, MCMC-only and greedy search at every budget, holding out the
/// last `cfg.horizon` points for scoring. Failures are recorded per row.
pub fn run_benchmark(series: &TimeSeries, cfg: &RunConfig) -> Result<Benchmark> {
    let (train, test) = split(series, cfg.horizon).map_err(CliError::Data)?;
    let norm = normalize(&train).map_err(CliError::Data)?;
    let obs = norm.observations();
    let batches = make_schedule(train.len(), cfg.schedule)?.len().max(1);
    let score = |pc: &ParticleCollection<ModelState>| -> Result<f64> {
        let table = forecast_collection(
            pc,
            &train,
            &norm.record,
            test.stamps.clone(),
            test.times.clone(),
            cfg.level,
        )?;
        Ok(smape(&test.values, &table.forecast.mean)?)
    };
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let gp = model(cfg);
    for &budget in &cfg.benchmark.budgets {
        let mut record = |method: &str, start: Instant, r: Result<(f64, Option<u64>)>| {
            let wallclock_ms = start.elapsed().as_secs_f64() * 1e3;
            let (smape, cholesky_flops, status) = match r {
                Ok((s, f)) => (Some(s), f, "ok".to_string()),
                Err(e) => {
                    log::warn!("{method} at budget {budget} failed: {e}");
                    (None, None, e.to_string())
                }
            };
            rows.push(BenchmarkRow {
                method: method.into(),
                budget,
                smape,
                wallclock_ms,
                cholesky_flops,
                status,
            });
        };

        let start = Instant::now();
        let smc_cfg = gpsmc::smc::SmcConfig {
            rejuvenation_steps: budget,
            ..cfg.smc()
        };
        let r = run_smc(&gp, obs, &smc_cfg)
            .map_err(CliError::from)
            .and_then(|o| Ok((score(&o.collection)?, Some(o.rejuvenation_flops()))));
        record("smc", start, r);

        let start = Instant::now();
        let mcmc_cfg = gpsmc::smc::SmcConfig {
            rejuvenation_steps: budget * batches,
            ..cfg.smc()
        };
        let r = mcmc_search(&gp, obs, &mcmc_cfg)
            .map_err(CliError::from)
            .and_then(|o| Ok((score(&o.collection)?, Some(o.rejuvenation_flops()))));
        record("mcmc", start, r);

        let start = Instant::now();
        let search = SearchConfig {
            max_depth: cfg.benchmark.greedy_max_depth,
            restarts: cfg.benchmark.greedy_restarts,
            iterations: budget,
            seed: cfg.seed,
        };
        let r = greedy_search(obs, &search).map_err(CliError::from).and_then(|g| {
            let pc = ParticleCollection {
                particles: vec![ModelState::new(g.best.expr.clone(), g.best.noise)],
                log_weights: vec![0.0],
                increments: Vec::new(),
                step: 0,
            };
            let s = score(&pc)?;
            traces.push((budget, g.trace));
            Ok((s, None))
        });
        record("greedy", start, r);
    }
    Ok(Benchmark { rows, traces })
}

#[derive(Serialize)]
struct TraceCsvRow<'a> {
    budget: usize,
    depth: usize,
    structure: &'a str,
    bic: f64,
    loglik: f64,
    elapsed_ms: f64,
}

/// Writes benchmark.csv and greedy_trace.csv.
pub fn cmd_benchmark(data: &Path, cfg: &RunConfig) -> Result<Benchmark> {
    let series = load_series(data, cfg)?;
    let bench = run_benchmark(&series, cfg)?;
    create_dir(&cfg.out)?;
    write_csv(&cfg.out.join("benchmark.csv"), &BENCHMARK_HEADER, &bench.rows)?;
    let trace: Vec<TraceCsvRow> = bench
        .traces
        .iter()
        .flat_map(|(budget, rows)| {
            rows.iter().map(move |r| TraceCsvRow {
                budget: *budget,
                depth: r.depth,
                structure: &r.structure,
                bic: r.bic,
                loglik: r.loglik,
                elapsed_ms: r.elapsed_ms,
            })
        })
        .collect();
    let mut header = vec!["budget"];
    header.extend(TRACE_HEADER);
    write_csv(&cfg.out.join("greedy_trace.csv"), &header, &trace)?;
    Ok(bench)
}

