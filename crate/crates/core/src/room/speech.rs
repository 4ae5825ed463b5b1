use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tf::TimeSignal;

/// Corner above which the long-term spectrum falls at 6 dB/octave.
const TILT_CORNER_HZ: f64 = 500.0;

/// Deterministic speech-like test signal.
///
/// A train of syllables (≈ 0.16–0.24 s long, separated by 40–80 ms gaps, so
/// roughly four per second), each either voiced (glottal pulse train with a
/// gliding pitch between 90 and 220 Hz) or unvoiced (white noise), shaped by
/// a raised-cosine envelope. The result is filtered to a flat spectrum below
/// 500 Hz and a 1/f magnitude above it, and peak-normalized to 0.5. The first
/// syllable starts at sample 0.
pub fn synth_speechlike(duration: f64, sample_rate: u32, seed: u64) -> Result<TimeSignal> {
    if !(duration > 0.0) || sample_rate == 0 {
        return Err(Error::InvalidSignal("duration and sample rate must be positive".into()));
    }
    let fs = sample_rate as f64;
    let len = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; len];

    let mut start = 0usize;
    while start < len {
        let dur = (rng.random_range(0.16..0.24) * fs) as usize;
        let gap = (rng.random_range(0.04..0.08) * fs) as usize;
        let amp = rng.random_range(0.4..1.0);
        let voiced = rng.random_bool(0.75);
        let f0_start = rng.random_range(90.0..220.0);
        let f0_end = f0_start * rng.random_range(0.8..1.2);
        let mut phase = rng.random_range(0.0..1.0);
        for i in 0..dur.min(len - start) {
            let frac = i as f64 / dur as f64;
            let env = amp * (PI * frac).sin().powi(2);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let excitation = if voiced {
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += f0 / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    // Scale pulses so voiced and unvoiced segments carry
                    // comparable power.
                    (fs / f0).sqrt()
                } else {
                    0.0
                };
                pulse + 0.05 * noise
            } else {
                0.6 * noise
            };
            x[start + i] = env * excitation;
        }
        start += dur + gap;
    }

    apply_tilt(&mut x, fs);
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    TimeSignal::mono(x, sample_rate)
}

/// Zero-phase spectral shaping `min(1, f_c / f)` applied through one
/// zero-padded FFT of the whole signal.
fn apply_tilt(x: &mut [f64], fs: f64) {
    let n = (2 * x.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * fs / n as f64;
        if f > TILT_CORNER_HZ {
            *v *= TILT_CORNER_HZ / f;
        }
    }
    inv.process(&mut buf);
    for (o, v) in x.iter_mut().zip(&buf) {
        *o = v.re / n as f64;
    }
}
