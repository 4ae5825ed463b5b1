//! Evaluation metrics: SI-SNR and log-spectral distance against the early
//! component at the reference microphone.

use crate::error::{Error, Result};
use crate::room::{convolve, Rir};
use crate::tf::{stft, StftConfig, TimeSignal};

/// Guard added to error energies and magnitudes.
pub const METRIC_EPS: f64 = 1e-12;

/// Length of the early part after the direct path, in seconds.
pub const EARLY_WINDOW: f64 = 0.05;

/// Mono estimate and reference, truncated to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    estimate: Vec<f64>,
    reference: Vec<f64>,
    sample_rate: u32,
}

impl EvalPair {
    pub fn new(estimate: &TimeSignal, reference: &TimeSignal) -> Result<Self> {
        if estimate.num_channels() != 1 || reference.num_channels() != 1 {
            return Err(Error::InvalidSignal("metrics need mono signals".into()));
        }
        if estimate.sample_rate() != reference.sample_rate() {
            return Err(Error::InvalidSignal(format!(
                "sample rates differ: {} vs {}",
                estimate.sample_rate(),
                reference.sample_rate()
            )));
        }
        let len = estimate.len().min(reference.len());
        let reference = reference.channel(0)[..len].to_vec();
        if reference.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidSignal("reference is all zero".into()));
        }
        Ok(Self {
            estimate: estimate.channel(0)[..len].to_vec(),
            reference,
            sample_rate: estimate.sample_rate(),
        })
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

/// Scale-invariant SNR in dB. The estimate is first rescaled to the
/// reference norm so the `METRIC_EPS` guard does not depend on its gain.
pub fn si_snr(pair: &EvalPair) -> f64 {
    let r = &pair.reference;
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let ee: f64 = pair.estimate.iter().map(|v| v * v).sum();
    if ee == 0.0 {
        return 10.0 * (METRIC_EPS / (rr + METRIC_EPS)).log10();
    }
    let g = (rr / ee).sqrt();
    let est: Vec<f64> = pair.estimate.iter().map(|v| v * g).collect();
    let alpha = est.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let err: f64 = est.iter().zip(r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    10.0 * (target.max(METRIC_EPS) / (err + METRIC_EPS)).log10()
}

/// Log-spectral distance in dB: mean over frames of the RMS over bins of
/// the log-magnitude difference.
pub fn lsd(pair: &EvalPair, cfg: &StftConfig) -> Result<f64> {
    let to_sig = |v: &[f64]| TimeSignal::mono(v.to_vec(), pair.sample_rate);
    let e = stft(&to_sig(&pair.estimate)?, cfg)?;
    let r = stft(&to_sig(&pair.reference)?, cfg)?;
    let db = |v: f64| 20.0 * (v + METRIC_EPS).log10();
    let bins = r.bins();
    let total: f64 = (0..r.frames())
        .map(|n| {
            let ms: f64 = (0..bins)
                .map(|w| (db(e.get(0, n, w).norm()) - db(r.get(0, n, w).norm())).powi(2))
                .sum::<f64>()
                / bins as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / r.frames() as f64)
}

/// Index separating early from late taps at mic `m`: the direct path plus
/// `early_samples`.
pub fn early_split(rir: &Rir, m: usize, early_samples: usize) -> usize {
    rir.direct_index(m).map_or(0, |d| d + early_samples)
}

/// `EARLY_WINDOW` in samples.
pub fn early_samples(sample_rate: u32) -> usize {
    (EARLY_WINDOW * sample_rate as f64).round() as usize
}

/// Evaluation reference: `source` convolved with the taps of `rir` at mic
/// `m` up to `early_samples` past the direct path, no noise. The output is
/// truncated to the source length.
pub fn eval_target(rir: &Rir, source: &TimeSignal, m: usize, early_samples: usize) -> Result<TimeSignal> {
    if rir.sample_rate != source.sample_rate() {
        return Err(Error::InvalidSignal("RIR and source sample rates differ".into()));
    }
    if m >= rir.num_mics() {
        return Err(Error::DimensionMismatch(format!("mic {m} out of range")));
    }
    let (early, _) = rir.split(m, early_split(rir, m, early_samples));
    let mut y = convolve(source.channel(0), &early);
    y.truncate(source.len());
    TimeSignal::mono(y, source.sample_rate())
}
