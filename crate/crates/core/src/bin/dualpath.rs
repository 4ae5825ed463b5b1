use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualpath::beam::beampattern;
use dualpath::container::Container;
use dualpath::harness::{run_sweep, ExperimentConfig, SweepOptions};
use dualpath::order::{order_selection_study, write_study_csv};
use dualpath::Error;

#[derive(Parser)]
#[command(name = "dualpath", about = "Dual-path MCLP dereverberation and sparse distortionless beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, env = "DUALPATH_WORKERS")]
        workers: Option<usize>,
        /// Keep complete trials from an earlier, interrupted run.
        #[arg(long)]
        resume: bool,
    },
    /// Run the prediction-order study for the config's T60 values and print
    /// the table.
    Orders {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "DUALPATH_WORKERS")]
        workers: Option<usize>,
    },
    /// Print the beampattern of stored weights at one bin as CSV.
    Beampattern {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        bin: usize,
        /// Angular step in degrees.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Print the version.
    Version,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_sweep(&cfg, &SweepOptions { out_dir: out.clone(), workers, resume })?;
            let failed = outcome.results.iter().filter(|r| r.status != dualpath::harness::TrialStatus::Ok).count();
            println!("{} rows written to {} ({failed} failed)", outcome.results.len(), out.display());
            for s in &outcome.summary {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
                println!(
                    "t60 = {:.2} s, snr = {:.1} dB, {:<13} SI-SNR {} dB (gain {} dB)",
                    s.t60,
                    s.snr_db,
                    s.pipeline,
                    fmt(s.si_snr_out_median),
                    fmt(s.improvement_median)
                );
            }
        }
        Command::Orders { config, workers } => {
            let cfg = ExperimentConfig::load(&config)?;
            let workers = workers.or(cfg.workers);
            let entries = pool(workers)?.install(|| order_selection_study(&cfg.study_settings()?, &cfg.distinct_t60(), &cfg.thresholds()))?;
            write_study_csv(&entries, &cfg.thresholds(), stdout.lock())?;
        }
        Command::Beampattern { weights, bin, step } => {
            let c = Container::load(&weights)?;
            let (w, geom) = match (&c.weights, &c.geometry) {
                (Some(w), Some(g)) => (w, g),
                _ => {
                    return Err(Error::Container(format!(
                        "{} lacks beamformer weights or array geometry",
                        weights.display()
                    )))
                }
            };
            if bin >= c.bins {
                return Err(Error::InvalidConfig(format!("bin {bin} out of range (0..{})", c.bins)));
            }
            if !(step > 0.0) {
                return Err(Error::InvalidConfig("step must be positive".into()));
            }
            let count = (360.0 / step).floor() as usize;
            let degs: Vec<f64> = (0..=count).map(|i| -180.0 + i as f64 * step).collect();
            let thetas: Vec<f64> = degs.iter().map(|d| d.to_radians()).collect();
            let gain = beampattern(&w.w[bin], geom, bin, c.bins, c.sample_rate, &thetas);
            let mut out = csv::Writer::from_writer(stdout.lock());
            out.write_record(["theta_deg", "gain", "gain_db"])?;
            for (d, g) in degs.iter().zip(&gain) {
                out.write_record([d.to_string(), g.to_string(), (20.0 * g.max(1e-300).log10()).to_string()])?;
            }
            out.flush().map_err(|e| Error::Container(e.to_string()))?;
        }
        Command::Version => {
            let mut out = stdout.lock();
            let _ = writeln!(out, "dualpath {}", env!("CARGO_PKG_VERSION"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
