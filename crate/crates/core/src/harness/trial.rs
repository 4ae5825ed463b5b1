use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Pipeline, SweepPoint};
use crate::beam::{apply_weights, estimate_weights, BeamWeights};
use crate::container::{Container, StoredWeights};
use crate::error::{Error, Result};
use crate::mclp::{estimate_filters, DualPathFilters};
use crate::metrics::{early_samples, eval_target, lsd, si_snr, EvalPair};
use crate::room::{derive_seed, mix_scene, simulate_trial, SimulatedTrial};
use crate::tf::{istft, read_wav, stft, write_wav, TfTensor, TimeSignal, WavEncoding};

/// Seed stream of per-trial scenes. Trial `i` sees the same source and noise
/// at every sweep point.
const STREAM_TRIAL: u64 = 3;

pub fn trial_seed(seed: u64, trial_id: usize) -> u64 {
    derive_seed(seed, STREAM_TRIAL, trial_id as u64)
}

/// Prediction orders used at a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orders {
    pub k_t: usize,
    pub k_f: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One CSV row. Metrics are empty when `status` is `failed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub t60: f64,
    pub snr_db: f64,
    pub trial_id: usize,
    pub pipeline: Pipeline,
    pub k_t: usize,
    pub k_f: usize,
    pub si_snr_in: Option<f64>,
    pub si_snr_out: Option<f64>,
    pub lsd_out: Option<f64>,
    pub iters_mclp: usize,
    pub iters_beam: usize,
    pub status: TrialStatus,
    pub error: String,
}

impl TrialResult {
    fn failed(point: SweepPoint, trial_id: usize, pipeline: Pipeline, orders: Orders, err: &Error) -> Self {
        Self {
            t60: point.t60,
            snr_db: point.snr_db,
            trial_id,
            pipeline,
            k_t: orders.k_t,
            k_f: orders.k_f,
            si_snr_in: None,
            si_snr_out: None,
            lsd_out: None,
            iters_mclp: 0,
            iters_beam: 0,
            status: TrialStatus::Failed,
            error: err.to_string(),
        }
    }

    pub fn improvement(&self) -> Option<f64> {
        Some(self.si_snr_out? - self.si_snr_in?)
    }
}

/// A result row with its wall-clock time in seconds.
#[derive(Debug, Clone)]
pub struct TimedResult {
    pub result: TrialResult,
    pub wall_time: f64,
}

/// Simulated scene plus everything the pipelines share.
pub struct PreparedTrial {
    pub sim: SimulatedTrial,
    /// STFT of the mixture.
    pub y: TfTensor,
    /// Early-reverberant target at the reference microphone.
    pub target: TimeSignal,
    pub si_snr_in: f64,
    pub reference: usize,
}

/// Simulates trial `trial_id` at `point`.
pub fn simulate(cfg: &ExperimentConfig, point: SweepPoint, trial_id: usize) -> Result<SimulatedTrial> {
    let template = cfg.template()?;
    let seed = trial_seed(cfg.seed, trial_id);
    let mut sim = simulate_trial(&template, point.t60, point.snr_db, seed)?;
    if let Some(path) = &cfg.scene.source_wav {
        let wav = read_wav(path)?;
        if wav.sample_rate() != template.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "{} has sample rate {}, scene.sample_rate is {}",
                path.display(),
                wav.sample_rate(),
                template.sample_rate
            )));
        }
        let len = sim.sources[0].len();
        sim.sources[0] = wav.select_channel(0).with_len(len);
        sim.mixture = mix_scene(&sim.sources, &sim.rirs, point.snr_db, derive_seed(seed, 2, 0))?.with_len(len);
    }
    Ok(sim)
}

pub fn prepare(cfg: &ExperimentConfig, point: SweepPoint, trial_id: usize) -> Result<PreparedTrial> {
    let sim = simulate(cfg, point, trial_id)?;
    let reference = cfg.array.reference;
    let target = eval_target(&sim.rirs[0], &sim.sources[0], reference, early_samples(sim.mixture.sample_rate()))?;
    let si_snr_in = si_snr(&EvalPair::new(&sim.mixture.select_channel(reference), &target)?);
    let y = stft(&sim.mixture, &cfg.stft)?;
    Ok(PreparedTrial {
        sim,
        y,
        target,
        si_snr_in,
        reference,
    })
}

/// MCLP output.
pub struct Dereverberated {
    pub x: TfTensor,
    pub filters: DualPathFilters,
    pub iters: usize,
}

pub fn dereverberate(cfg: &ExperimentConfig, y: &TfTensor, orders: Orders) -> Result<Dereverberated> {
    let mut mc = cfg.mclp.solver_config();
    mc.k_t = orders.k_t;
    mc.k_f = orders.k_f;
    let mc = mc.with_relative_sparsity(y, cfg.mclp.lambda_z_rel);
    let (filters, state) = estimate_filters(y, &mc)?;
    Ok(Dereverberated {
        x: state.estimate,
        filters,
        iters: state.iter,
    })
}

/// Beamformer steered at the target with `λ_w = lambda_w_rel · mean|x|`.
pub fn beamform(cfg: &ExperimentConfig, sim: &SimulatedTrial, x: &TfTensor, lambda_w_rel: f64) -> Result<(TfTensor, BeamWeights)> {
    let geom = cfg.array_geometry()?;
    let bc = cfg.beam.solver_config().with_relative_sparsity(x, lambda_w_rel);
    let weights = estimate_weights(x, sim.scene.source_doas[0], &geom, &bc)?;
    Ok((apply_weights(x, &weights.w)?, weights))
}

/// `(SI-SNR, LSD)` of the single-channel TF estimate `out` against the
/// target.
pub fn score(cfg: &ExperimentConfig, prep: &PreparedTrial, out: &TfTensor) -> Result<(f64, f64, TimeSignal)> {
    score_time(cfg, prep, istft(out, &cfg.stft)?.with_len(prep.target.len()))
}

/// Like [`score`] for a time-domain estimate.
pub fn score_time(cfg: &ExperimentConfig, prep: &PreparedTrial, est: TimeSignal) -> Result<(f64, f64, TimeSignal)> {
    let pair = EvalPair::new(&est, &prep.target)?;
    let s = si_snr(&pair);
    let l = lsd(&pair, &cfg.stft)?;
    if !s.is_finite() || !l.is_finite() {
        return Err(Error::InvalidSignal("non-finite metric".into()));
    }
    Ok((s, l, est))
}

/// Where per-trial artifacts go, and the file stem to use.
pub struct Artifacts<'a> {
    pub dir: &'a Path,
    pub stem: String,
}

struct PipelineOutput {
    audio: TimeSignal,
    si_snr: f64,
    lsd: f64,
    iters_mclp: usize,
    iters_beam: usize,
    filters: Option<DualPathFilters>,
    weights: Option<StoredWeights>,
}

/// Runs every configured pipeline on one simulated trial.
///
/// Processing errors become failed rows; only artifact I/O errors are
/// returned. MCLP and beamformer outputs are shared between pipelines that
/// use the same prediction orders, which is what makes `temporal_only` and
/// `proposed` identical when `K_f = 0`.
pub fn run_trial(
    cfg: &ExperimentConfig,
    point: SweepPoint,
    trial_id: usize,
    orders: Orders,
    artifacts: Option<&Artifacts<'_>>,
) -> Result<Vec<TimedResult>> {
    let start = Instant::now();
    let prep = prepare(cfg, point, trial_id);
    let prep_time = start.elapsed().as_secs_f64();
    let prep = match prep {
        Ok(p) => p,
        Err(e) => {
            log::warn!("trial {trial_id} at t60 = {}, snr = {}: {e}", point.t60, point.snr_db);
            return Ok(cfg
                .pipelines
                .iter()
                .map(|&p| TimedResult {
                    result: TrialResult::failed(point, trial_id, p, orders, &e),
                    wall_time: prep_time,
                })
                .collect());
        }
    };

    let mut mclp_cache: HashMap<usize, (std::result::Result<Dereverberated, String>, f64)> = HashMap::new();
    let mut beam_cache: HashMap<usize, (std::result::Result<(TfTensor, BeamWeights), String>, f64)> = HashMap::new();
    let mut rows = Vec::with_capacity(cfg.pipelines.len());

    for &pipeline in &cfg.pipelines {
        let k_f = if pipeline == Pipeline::TemporalOnly { 0 } else { orders.k_f };
        let used = Orders { k_t: orders.k_t, k_f };
        let mut elapsed = prep_time;
        let outcome: Result<PipelineOutput> = (|| {
            if pipeline == Pipeline::Passthrough {
                let t = Instant::now();
                let (s, l, audio) = score_time(cfg, &prep, prep.sim.mixture.select_channel(prep.reference))?;
                elapsed += t.elapsed().as_secs_f64();
                return Ok(PipelineOutput { audio, si_snr: s, lsd: l, iters_mclp: 0, iters_beam: 0, filters: None, weights: None });
            }
            let (mclp, t_mclp) = mclp_cache.entry(k_f).or_insert_with(|| {
                let t = Instant::now();
                let r = dereverberate(cfg, &prep.y, used).map_err(|e| e.to_string());
                (r, t.elapsed().as_secs_f64())
            });
            elapsed += *t_mclp;
            let mclp = mclp.as_ref().map_err(|e| Error::InvalidSignal(e.clone()))?;
            let t = Instant::now();
            if pipeline == Pipeline::MclpOnly {
                let (s, l, audio) = score(cfg, &prep, &mclp.x.channel(prep.reference))?;
                elapsed += t.elapsed().as_secs_f64();
                return Ok(PipelineOutput {
                    audio,
                    si_snr: s,
                    lsd: l,
                    iters_mclp: mclp.iters,
                    iters_beam: 0,
                    filters: Some(mclp.filters.clone()),
                    weights: None,
                });
            }
            let (beam, t_beam) = beam_cache.entry(k_f).or_insert_with(|| {
                let t = Instant::now();
                let r = beamform(cfg, &prep.sim, &mclp.x, cfg.beam.lambda_w_rel).map_err(|e| e.to_string());
                (r, t.elapsed().as_secs_f64())
            });
            elapsed += *t_beam;
            let (out, weights) = beam.as_ref().map_err(|e| Error::InvalidSignal(e.clone()))?;
            let (s, l, audio) = score(cfg, &prep, out)?;
            elapsed += t.elapsed().as_secs_f64();
            Ok(PipelineOutput {
                audio,
                si_snr: s,
                lsd: l,
                iters_mclp: mclp.iters,
                iters_beam: weights.iters.iter().copied().max().unwrap_or(0),
                filters: Some(mclp.filters.clone()),
                weights: Some(StoredWeights {
                    theta: prep.sim.scene.source_doas[0],
                    w: weights.w.clone(),
                }),
            })
        })();

        let result = match outcome {
            Ok(out) => {
                if let Some(a) = artifacts {
                    save_artifacts(cfg, &prep, a, pipeline, &out)?;
                }
                TrialResult {
                    t60: point.t60,
                    snr_db: point.snr_db,
                    trial_id,
                    pipeline,
                    k_t: used.k_t,
                    k_f: used.k_f,
                    si_snr_in: Some(prep.si_snr_in),
                    si_snr_out: Some(out.si_snr),
                    lsd_out: Some(out.lsd),
                    iters_mclp: out.iters_mclp,
                    iters_beam: out.iters_beam,
                    status: TrialStatus::Ok,
                    error: String::new(),
                }
            }
            Err(e) => {
                log::warn!("trial {trial_id} ({pipeline}) at t60 = {}, snr = {}: {e}", point.t60, point.snr_db);
                TrialResult::failed(point, trial_id, pipeline, used, &e)
            }
        };
        rows.push(TimedResult { result, wall_time: elapsed });
    }
    Ok(rows)
}

fn save_artifacts(cfg: &ExperimentConfig, prep: &PreparedTrial, a: &Artifacts<'_>, pipeline: Pipeline, out: &PipelineOutput) -> Result<()> {
    if cfg.output.save_audio {
        let dir = a.dir.join("audio");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_wav(dir.join(format!("{}_{pipeline}.wav", a.stem)), &out.audio, WavEncoding::Float32)?;
    }
    if cfg.output.save_weights && (out.filters.is_some() || out.weights.is_some()) {
        let dir = a.dir.join("weights");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let y = &prep.y;
        let mut c = Container::new(y.mics(), y.frames(), y.bins(), y.sample_rate(), y.frame_len());
        c.geometry = Some(cfg.array_geometry()?);
        c.filters = out.filters.clone();
        c.weights = out.weights.clone();
        c.save(dir.join(format!("{}_{pipeline}.dpmf", a.stem)))?;
    }
    Ok(())
}
