use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpsmc_cli::commands;
use gpsmc_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "gpsmc", version, about = "Gaussian-process time-series structure learning with SMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Rejuvenation steps per data batch.
    #[arg(long, global = true)]
    rejuv: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Central interval level, e.g. 0.95.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write model.json, diagnostics.csv and summary.txt.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Forecast from a fitted model; writes forecast.csv and mixture.json.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// The data the model was fitted to.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a forecast file; writes metrics.json.
    Eval {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        insample: PathBuf,
        /// Seasonal period for MASE and MSIS.
        #[arg(long)]
        season: Option<usize>,
    },
    /// Compare SMC, MCMC-only and greedy search; writes benchmark.csv.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        particles: c.particles,
        rejuvenation_steps: c.rejuv,
        horizon: c.horizon,
        level: c.level,
        out: c.out.clone(),
    };
    // Commands that draw no random numbers do not need a seed.
    let seeded = matches!(cli.command, Command::Fit { .. } | Command::Benchmark { .. });
    let overrides = if seeded || overrides.seed.is_some() {
        overrides
    } else {
        Overrides { seed: Some(0), ..overrides }
    };
    let mut cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Fit { data } => {
            let fitted = commands::cmd_fit(data, &cfg)?;
            print!("{}", commands::summary(&fitted.artifact, 5));
        }
        Command::Forecast { model, data } => {
            let table = commands::cmd_forecast(model, data, &cfg)?;
            log::info!("wrote {} forecast rows", table.len());
        }
        Command::Eval { forecast, truth, insample, season } => {
            if let Some(m) = season {
                cfg.season = *m;
                cfg.validate()?;
            }
            let r = commands::cmd_eval(forecast, truth, insample, &cfg)?;
            println!("smape {:.6}  mase {:.6}  msis {:.6}", r.smape, r.mase, r.msis);
        }
        Command::Benchmark { data } => {
            let b = commands::cmd_benchmark(data, &cfg)?;
            for r in &b.rows {
                let smape = r.smape.map_or("-".to_string(), |s| format!("{s:.4}"));
                println!("{:<7} {:>5} {:>9} {:>10.1} ms  {}", r.method, r.budget, smape, r.wallclock_ms, r.status);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match cli.common.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
