//! Prediction-order selection from Monte Carlo Pearson lag curves.
//!
//! For `I` trials aligned at a common onset, `ϱ(0, t)` is the Pearson
//! correlation, taken across trials, between the value at lag 0 and the
//! value at lag `t`. The order for a threshold `δ` is the first lag where
//! the curve falls to `δ` or below; two thresholds are averaged.

use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::room::{derive_seed, mix_scene, simulate_rir, synth_speechlike, ArrayGeometry, SceneTemplate};
use crate::tf::{stft, StftConfig, TfTensor, TimeSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagDomain {
    /// Lags in STFT frames.
    Time,
    /// Lags in frequency bins.
    Frequency,
}

impl LagDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            LagDomain::Time => "time",
            LagDomain::Frequency => "frequency",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagCurve {
    /// `rho[t] = ϱ(0, t)`; `NaN` where a population has zero variance.
    pub rho: Vec<f64>,
    pub domain: LagDomain,
    pub trials: usize,
}

impl LagCurve {
    pub fn max_lag(&self) -> usize {
        self.rho.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPair {
    pub delta_1: f64,
    pub delta_2: f64,
}

impl Default for ThresholdPair {
    fn default() -> Self {
        Self {
            delta_1: 0.15,
            delta_2: 0.30,
        }
    }
}

impl ThresholdPair {
    pub fn validate(&self) -> Result<()> {
        let lo = self.delta_1.min(self.delta_2);
        let hi = self.delta_1.max(self.delta_2);
        if lo > 0.0 && hi < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "thresholds must satisfy 0 < δ < 1, got ({}, {})",
                self.delta_1, self.delta_2
            )))
        }
    }
}

/// Pearson correlation of two equally long populations; `None` when either
/// has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Lag curve from one aligned sequence per trial.
pub fn lag_curve(trials: &[Vec<f64>], max_lag: usize, domain: LagDomain) -> Result<LagCurve> {
    if trials.len() < 2 {
        return Err(Error::InvalidSignal("lag curves need at least two trials".into()));
    }
    if let Some(i) = trials.iter().position(|t| t.len() <= max_lag) {
        return Err(Error::InvalidSignal(format!(
            "trial {i} has {} samples, need more than max lag {max_lag}",
            trials[i].len()
        )));
    }
    let origin: Vec<f64> = trials.iter().map(|t| t[0]).collect();
    let mut undefined = 0;
    let rho = (0..=max_lag)
        .map(|lag| {
            let at: Vec<f64> = trials.iter().map(|t| t[lag]).collect();
            pearson(&origin, &at).unwrap_or_else(|| {
                undefined += 1;
                f64::NAN
            })
        })
        .collect();
    if undefined > 0 {
        warn!("{undefined} lags have zero variance across trials; correlation undefined");
    }
    Ok(LagCurve {
        rho,
        domain,
        trials: trials.len(),
    })
}

/// Element-wise mean over curves, skipping undefined entries.
pub fn average_curves(curves: &[LagCurve]) -> Result<LagCurve> {
    let first = curves.first().ok_or_else(|| Error::InvalidSignal("no curves to average".into()))?;
    if curves.iter().any(|c| c.rho.len() != first.rho.len() || c.domain != first.domain) {
        return Err(Error::DimensionMismatch("curves differ in length or domain".into()));
    }
    let rho = (0..first.rho.len())
        .map(|t| {
            let vals: Vec<f64> = curves.iter().map(|c| c.rho[t]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    Ok(LagCurve {
        rho,
        domain: first.domain,
        trials: first.trials,
    })
}

/// Crossings for both thresholds and the selected order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderSelection {
    pub k_delta1: usize,
    pub k_delta2: usize,
    /// `round((K_δ1 + K_δ2) / 2)`.
    pub order: usize,
}

/// Smallest lag with `ϱ ≤ δ`.
pub fn crossing(curve: &LagCurve, delta: f64) -> Result<usize> {
    curve.rho.iter().position(|&r| r <= delta).ok_or(Error::NoCrossing {
        threshold: delta,
        max_lag: curve.max_lag(),
    })
}

pub fn select_order(curve: &LagCurve, thresholds: &ThresholdPair) -> Result<OrderSelection> {
    thresholds.validate()?;
    let k_delta1 = crossing(curve, thresholds.delta_1)?;
    let k_delta2 = crossing(curve, thresholds.delta_2)?;
    // Half-integers round up.
    let order = (k_delta1 + k_delta2).div_ceil(2);
    Ok(OrderSelection { k_delta1, k_delta2, order })
}

/// Excitation used by the order study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudySource {
    /// [`synth_speechlike`] with a fresh seed per trial.
    #[default]
    Speech,
    /// Unit-variance white Gaussian noise.
    WhiteNoise,
}

/// Settings of a Monte Carlo order study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub template: SceneTemplate,
    pub stft: StftConfig,
    pub source: StudySource,
    /// Observation SNR; `f64::INFINITY` studies the noiseless reverberant
    /// image.
    pub snr_db: f64,
    pub trials: usize,
    pub seed: u64,
    /// Largest lag in frames.
    pub max_lag_time: usize,
    /// Largest lag in bins.
    pub max_lag_freq: usize,
}

impl StudySettings {
    /// Defaults: noiseless speech-like trials and lags up to 60 frames and
    /// 30 bins.
    pub fn new(template: SceneTemplate, stft: StftConfig, trials: usize, seed: u64) -> Self {
        Self {
            template,
            stft,
            source: StudySource::Speech,
            snr_db: f64::INFINITY,
            trials,
            seed,
            max_lag_time: 60,
            max_lag_freq: 30,
        }
    }
}

/// Curves and selected orders for one T60.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyEntry {
    pub t60: f64,
    pub time_curve: LagCurve,
    pub freq_curve: LagCurve,
    pub time: OrderSelection,
    pub freq: OrderSelection,
}

/// Reference-mic magnitudes, normalized to unit energy, starting at the
/// direct-path frame.
fn aligned_magnitudes(y: &TfTensor, onset: usize) -> Vec<Vec<f64>> {
    let bins = y.bins();
    let energy: f64 = (onset..y.frames()).flat_map(|n| (0..bins).map(move |w| (n, w))).map(|(n, w)| y.get(0, n, w).norm_sqr()).sum();
    let scale = if energy > 0.0 { 1.0 / energy.sqrt() } else { 1.0 };
    (onset..y.frames())
        .map(|n| (0..bins).map(|w| y.get(0, n, w).norm() * scale).collect())
        .collect()
}

const ENVELOPE_HALF_WIDTH: usize = 8;

/// `f[w]` divided by its mean over `w ± half` (zero where the mean is zero).
fn flatten_envelope(f: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; f.len() + 1];
    for (i, v) in f.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..f.len())
        .map(|w| {
            let lo = w.saturating_sub(half);
            let hi = (w + half + 1).min(f.len());
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            if mean > 0.0 {
                f[w] / mean
            } else {
                0.0
            }
        })
        .collect()
}

/// Time curve: per bin across trials, averaged over bins. Frequency curve:
/// per `(frame, origin bin)` across trials on envelope-flattened
/// magnitudes, averaged.
fn study_curves(mags: &[Vec<Vec<f64>>], max_t: usize, max_f: usize) -> Result<(LagCurve, LagCurve)> {
    let frames = mags.iter().map(Vec::len).min().unwrap_or(0);
    let bins = mags[0][0].len();
    if frames <= max_t {
        return Err(Error::InvalidSignal(format!(
            "only {frames} frames after onset, need more than {max_t}"
        )));
    }
    if bins <= max_f {
        return Err(Error::InvalidSignal(format!("only {bins} bins, need more than {max_f}")));
    }
    let time: Vec<LagCurve> = (0..bins)
        .map(|w| {
            let seqs: Vec<Vec<f64>> = mags.iter().map(|m| (0..=max_t).map(|t| m[t][w]).collect()).collect();
            lag_curve(&seqs, max_t, LagDomain::Time)
        })
        .collect::<Result<_>>()?;
    // Divide by the local spectral envelope so broad spectral shape, which
    // varies between trials, does not correlate every pair of bins.
    let frame_norm: Vec<Vec<Vec<f64>>> = mags
        .iter()
        .map(|m| m.iter().map(|f| flatten_envelope(f, ENVELOPE_HALF_WIDTH)).collect())
        .collect();
    let freq: Vec<LagCurve> = (0..frames)
        .flat_map(|n| (0..bins - max_f).map(move |w0| (n, w0)))
        .map(|(n, w0)| {
            let seqs: Vec<Vec<f64>> = frame_norm.iter().map(|m| m[n][w0..=w0 + max_f].to_vec()).collect();
            lag_curve(&seqs, max_f, LagDomain::Frequency)
        })
        .collect::<Result<_>>()?;
    Ok((average_curves(&time)?, average_curves(&freq)?))
}

fn study_source(kind: StudySource, duration: f64, fs: u32, seed: u64) -> Result<TimeSignal> {
    match kind {
        StudySource::Speech => synth_speechlike(duration, fs, seed),
        StudySource::WhiteNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = (duration * fs as f64).round() as usize;
            TimeSignal::mono((0..len).map(|_| rng.sample(StandardNormal)).collect(), fs)
        }
    }
}

/// Runs `trials` simulated scenes per T60 and selects `K_t` and `K_f`.
pub fn order_selection_study(
    settings: &StudySettings,
    t60_list: &[f64],
    thresholds: &ThresholdPair,
) -> Result<Vec<StudyEntry>> {
    thresholds.validate()?;
    settings.stft.validate()?;
    if settings.trials < 2 {
        return Err(Error::InvalidConfig("order study needs at least two trials".into()));
    }
    // Only the reference microphone is observed.
    let array = &settings.template.array;
    let reference = array.mic_positions[array.reference_index];
    let mut template = settings.template.clone();
    template.array = ArrayGeometry::new(vec![reference], 0, array.speed_of_sound)?;
    let fs = template.sample_rate;
    let len = (template.duration * fs as f64).round() as usize;
    t60_list
        .iter()
        .map(|&t60| {
            let scene = template.scene(t60, settings.snr_db)?;
            let rir = simulate_rir(&scene, &template.array, 0)?;
            let onset = rir.direct_index(0).unwrap_or(0) / settings.stft.hop;
            let mags: Vec<Vec<Vec<f64>>> = (0..settings.trials)
                .into_par_iter()
                .map(|i| {
                    // Trial i reuses the same source at every T60 so the
                    // curves differ only through the room.
                    let seed = derive_seed(settings.seed, 0, i as u64);
                    let src = study_source(settings.source, template.duration, fs, derive_seed(seed, 1, 0))?;
                    let y = mix_scene(&[src], std::slice::from_ref(&rir), settings.snr_db, derive_seed(seed, 2, 0))?
                        .with_len(len);
                    Ok(aligned_magnitudes(&stft(&y, &settings.stft)?, onset))
                })
                .collect::<Result<_>>()?;
            let (time_curve, freq_curve) = study_curves(&mags, settings.max_lag_time, settings.max_lag_freq)?;
            let time = select_order(&time_curve, thresholds)?;
            let freq = select_order(&freq_curve, thresholds)?;
            info!("t60 = {t60}: K_t = {}, K_f = {}", time.order, freq.order);
            Ok(StudyEntry {
                t60,
                time_curve,
                freq_curve,
                time,
                freq,
            })
        })
        .collect()
}

pub const STUDY_HEADER: [&str; 7] = ["t60", "delta_1", "delta_2", "K_delta1", "K_delta2", "K_selected", "domain"];

/// Writes one row per T60 and domain.
pub fn write_study_csv<W: Write>(entries: &[StudyEntry], thresholds: &ThresholdPair, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STUDY_HEADER)?;
    for e in entries {
        for (sel, domain) in [(e.time, LagDomain::Time), (e.freq, LagDomain::Frequency)] {
            w.write_record([
                e.t60.to_string(),
                thresholds.delta_1.to_string(),
                thresholds.delta_2.to_string(),
                sel.k_delta1.to_string(),
                sel.k_delta2.to_string(),
                sel.order.to_string(),
                domain.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
