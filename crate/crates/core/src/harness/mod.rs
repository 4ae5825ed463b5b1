//! Monte Carlo experiment orchestration: config parsing, per-trial
//! pipelines and sweeps with CSV output.

mod config;
mod sweep;
mod trial;

pub use config::{
    ArraySection, BeamSection, ExperimentConfig, MclpSection, OrdersSection, OutputSection, Pipeline, SceneSection,
    SweepPoint, SweepSection, ThresholdSection,
};
pub use sweep::{
    median, quantile, resolve_orders, run_sweep, summarize, SummaryRow, SweepOptions, SweepOutcome, ORDERS_FILE,
    RESULTS_FILE, RESULTS_HEADER, SUMMARY_FILE, SUMMARY_HEADER, TIMING_FILE, TIMING_HEADER,
};
pub use trial::{
    beamform, dereverberate, prepare, run_trial, score, score_time, simulate, trial_seed, Artifacts, Dereverberated,
    Orders, PreparedTrial, TimedResult, TrialResult, TrialStatus,
};
