use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Pipeline, SweepPoint};
use super::trial::{run_trial, Artifacts, Orders, TimedResult, TrialResult, TrialStatus};
use crate::error::{Error, Result};
use crate::order::{order_selection_study, write_study_csv, StudyEntry};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const ORDERS_FILE: &str = "orders.csv";

pub const RESULTS_HEADER: [&str; 13] = [
    "t60",
    "snr_db",
    "trial_id",
    "pipeline",
    "k_t",
    "k_f",
    "si_snr_in",
    "si_snr_out",
    "lsd_out",
    "iters_mclp",
    "iters_beam",
    "status",
    "error",
];

pub const SUMMARY_HEADER: [&str; 11] = [
    "t60",
    "snr_db",
    "pipeline",
    "trials",
    "failed",
    "si_snr_in_median",
    "si_snr_out_median",
    "si_snr_out_iqr",
    "improvement_median",
    "improvement_iqr",
    "lsd_out_median",
];

pub const TIMING_HEADER: [&str; 5] = ["t60", "snr_db", "trial_id", "pipeline", "wall_time"];

/// Median and interquartile range of one pipeline at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t60: f64,
    pub snr_db: f64,
    pub pipeline: Pipeline,
    pub trials: usize,
    pub failed: usize,
    pub si_snr_in_median: Option<f64>,
    pub si_snr_out_median: Option<f64>,
    pub si_snr_out_iqr: Option<f64>,
    pub improvement_median: Option<f64>,
    pub improvement_iqr: Option<f64>,
    pub lsd_out_median: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    /// Overrides `workers` from the config.
    pub workers: Option<usize>,
    /// Keep complete trials already in `results.csv`.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub results: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
    /// Orders used per sweep point.
    pub orders: Vec<(SweepPoint, Orders)>,
    pub study: Option<Vec<StudyEntry>>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn iqr(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.75)? - quantile(&v, 0.25)?)
}

/// Per-(point, pipeline) aggregates in sweep order. Failed trials are
/// counted but excluded from the statistics.
pub fn summarize(cfg: &ExperimentConfig, rows: &[TrialResult]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for p in cfg.points() {
        for &pipeline in &cfg.pipelines {
            let sel: Vec<&TrialResult> = rows
                .iter()
                .filter(|r| r.t60 == p.t60 && r.snr_db == p.snr_db && r.pipeline == pipeline)
                .collect();
            let ok: Vec<&TrialResult> = sel.iter().copied().filter(|r| r.status == TrialStatus::Ok).collect();
            let col = |f: fn(&TrialResult) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let out_vals = col(|r| r.si_snr_out);
            let gains = col(TrialResult::improvement);
            out.push(SummaryRow {
                t60: p.t60,
                snr_db: p.snr_db,
                pipeline,
                trials: sel.len(),
                failed: sel.len() - ok.len(),
                si_snr_in_median: median(&col(|r| r.si_snr_in)),
                si_snr_out_median: median(&out_vals),
                si_snr_out_iqr: iqr(&out_vals),
                improvement_median: median(&gains),
                improvement_iqr: iqr(&gains),
                lsd_out_median: median(&col(|r| r.lsd_out)),
            });
        }
    }
    out
}

/// Prediction orders per sweep point: the configured ones, or the order
/// study's selection for the point's T60 when `orders.auto` is set.
pub fn resolve_orders(cfg: &ExperimentConfig) -> Result<(Vec<(SweepPoint, Orders)>, Option<Vec<StudyEntry>>)> {
    let fixed = Orders {
        k_t: cfg.mclp.k_t,
        k_f: cfg.mclp.k_f,
    };
    if !cfg.orders.auto {
        return Ok((cfg.points().into_iter().map(|p| (p, fixed)).collect(), None));
    }
    let study = order_selection_study(&cfg.study_settings()?, &cfg.distinct_t60(), &cfg.thresholds())?;
    let orders = cfg
        .points()
        .into_iter()
        .map(|p| {
            let e = study.iter().find(|e| e.t60 == p.t60).expect("study covers every sweep T60");
            let o = Orders {
                k_t: e.time.order,
                k_f: e.freq.order,
            };
            log::info!("t60 = {}, snr = {}: K_t = {}, K_f = {}", p.t60, p.snr_db, o.k_t, o.k_f);
            (p, o)
        })
        .collect();
    Ok((orders, Some(study)))
}

fn csv_writer(file: File) -> csv::Writer<File> {
    csv::WriterBuilder::new().has_headers(false).from_writer(file)
}

fn expected_key(points: &[(SweepPoint, Orders)], trials: usize, pipelines: &[Pipeline], row: usize) -> (f64, f64, usize, Pipeline) {
    let per_job = pipelines.len();
    let job = row / per_job;
    let p = points[job / trials].0;
    (p.t60, p.snr_db, job % trials, pipelines[row % per_job])
}

/// Reads the complete-trial prefix of an existing results file.
fn read_prefix(path: &Path, cfg: &ExperimentConfig, points: &[(SweepPoint, Orders)]) -> Result<Vec<TrialResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().ne(RESULTS_HEADER) {
        return Err(Error::InvalidConfig(format!("{} has an unexpected header; cannot resume", path.display())));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<TrialResult>() {
        // A torn final line ends the usable prefix.
        match rec {
            Ok(r) => rows.push(r),
            Err(_) => break,
        }
    }
    let per_job = cfg.pipelines.len();
    let total = points.len() * cfg.trials * per_job;
    rows.truncate((rows.len() / per_job * per_job).min(total));
    for (i, r) in rows.iter().enumerate() {
        if (r.t60, r.snr_db, r.trial_id, r.pipeline) != expected_key(points, cfg.trials, &cfg.pipelines, i) {
            return Err(Error::InvalidConfig(format!(
                "{} row {} does not match the config; cannot resume",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(rows)
}

fn write_rows<S: Serialize>(w: &mut csv::Writer<File>, rows: impl IntoIterator<Item = S>, path: &Path) -> Result<()> {
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TimingRow<'a> {
    t60: f64,
    snr_db: f64,
    trial_id: usize,
    pipeline: &'a str,
    wall_time: f64,
}

/// Runs every `(point, trial, pipeline)` combination and writes
/// `results.csv`, `timing.csv`, `summary.csv` and, with automatic orders,
/// `orders.csv` into `opts.out_dir`.
///
/// Trials run in parallel, but rows are written in sweep order through a
/// reorder buffer and flushed after every trial, so `results.csv` is always
/// a prefix of the final file. With `opts.resume` that prefix is kept and
/// only the remaining trials run.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let out = &opts.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let workers = opts.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(Error::InvalidConfig("worker count must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;

    let (orders, study) = pool.install(|| resolve_orders(cfg))?;
    if let Some(study) = &study {
        let path = out.join(ORDERS_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_study_csv(study, &cfg.thresholds(), f)?;
    }

    let results_path = out.join(RESULTS_FILE);
    let timing_path = out.join(TIMING_FILE);
    let mut rows = if opts.resume && results_path.exists() {
        read_prefix(&results_path, cfg, &orders)?
    } else {
        Vec::new()
    };
    let mut results = csv_writer(File::create(&results_path).map_err(|e| Error::io(&results_path, e))?);
    results.write_record(RESULTS_HEADER)?;
    write_rows(&mut results, &rows, &results_path)?;
    let fresh_timing = !(opts.resume && timing_path.exists());
    let timing_file = OpenOptions::new()
        .create(true)
        .append(!fresh_timing)
        .write(true)
        .truncate(fresh_timing)
        .open(&timing_path)
        .map_err(|e| Error::io(&timing_path, e))?;
    let mut timing = csv_writer(timing_file);
    if fresh_timing {
        timing.write_record(TIMING_HEADER)?;
    }

    let per_job = cfg.pipelines.len();
    let total_jobs = orders.len() * cfg.trials;
    let first = rows.len() / per_job;
    if first > 0 {
        log::info!("resuming after {first} of {total_jobs} trials");
    }
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<TimedResult>>)>();
    let run_job = |job: usize| -> Result<Vec<TimedResult>> {
        let (pi, trial_id) = (job / cfg.trials, job % cfg.trials);
        let (point, o) = orders[pi];
        let stem = format!("p{pi:03}_trial{trial_id:04}");
        let artifacts = Artifacts { dir: out, stem };
        let save = cfg.output.save_audio || cfg.output.save_weights;
        run_trial(cfg, point, trial_id, o, save.then_some(&artifacts))
    };

    let mut failure: Option<Error> = None;
    std::thread::scope(|s| {
        let abort = &abort;
        let pool = &pool;
        s.spawn(move || {
            pool.install(|| {
                (first..total_jobs).into_par_iter().for_each_with(tx, |tx, job| {
                    if abort.load(Ordering::Relaxed) {
                        return;
                    }
                    let _ = tx.send((job, run_job(job)));
                })
            })
        });
        let mut buffer = BTreeMap::new();
        let mut next = first;
        for (job, res) in rx {
            buffer.insert(job, res);
            while let Some(res) = buffer.remove(&next) {
                next += 1;
                if failure.is_some() {
                    continue;
                }
                let written = res.and_then(|batch| {
                    write_rows(&mut results, batch.iter().map(|t| &t.result), &results_path)?;
                    write_rows(
                        &mut timing,
                        batch.iter().map(|t| TimingRow {
                            t60: t.result.t60,
                            snr_db: t.result.snr_db,
                            trial_id: t.result.trial_id,
                            pipeline: t.result.pipeline.as_str(),
                            wall_time: t.wall_time,
                        }),
                        &timing_path,
                    )?;
                    Ok(batch)
                });
                match written {
                    Ok(batch) => {
                        log::info!("trial {next}/{total_jobs} done");
                        rows.extend(batch.into_iter().map(|t| t.result));
                    }
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        failure = Some(e);
                    }
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let summary = summarize(cfg, &rows);
    let summary_path = out.join(SUMMARY_FILE);
    let mut w = csv_writer(File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?);
    w.write_record(SUMMARY_HEADER)?;
    write_rows(&mut w, &summary, &summary_path)?;
    let mut f = w.into_inner().map_err(|e| Error::io(&summary_path, e.into_error()))?;
    f.flush().map_err(|e| Error::io(&summary_path, e))?;

    Ok(SweepOutcome {
        results: rows,
        summary,
        orders,
        study,
    })
}
