use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use super::rir::Rir;
use crate::error::{Error, Result};
use crate::tf::TimeSignal;

/// Full linear convolution via zero-padded FFT; output length
/// `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|v| v.re * scale).collect()
}

/// Reverberant image of each source at every mic, summed over sources:
/// `Σ_q conv(s_q, h_{q,m})`.
pub fn reverberant_image(sources: &[TimeSignal], rirs: &[Rir]) -> Result<TimeSignal> {
    if sources.is_empty() || sources.len() != rirs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sources but {} RIR sets",
            sources.len(),
            rirs.len()
        )));
    }
    let fs = sources[0].sample_rate();
    let mics = rirs[0].num_mics();
    for (s, r) in sources.iter().zip(rirs) {
        if s.sample_rate() != fs || r.sample_rate != fs {
            return Err(Error::DimensionMismatch("sample rates differ between sources and RIRs".into()));
        }
        if s.num_channels() != 1 {
            return Err(Error::DimensionMismatch("sources must be mono".into()));
        }
        if r.num_mics() != mics {
            return Err(Error::DimensionMismatch("RIR sets differ in mic count".into()));
        }
    }
    let len = sources
        .iter()
        .zip(rirs)
        .map(|(s, r)| s.len() + r.len().max(1) - 1)
        .max()
        .unwrap_or(0);
    let mut out = vec![vec![0.0; len]; mics];
    for (s, r) in sources.iter().zip(rirs) {
        for (m, ch) in out.iter_mut().enumerate() {
            for (o, v) in ch.iter_mut().zip(convolve(s.channel(0), &r.taps[m])) {
                *o += v;
            }
        }
    }
    TimeSignal::new(out, fs)
}

/// Convolutive mixture plus white Gaussian noise at `snr_db`, where SNR is the
/// ratio of mic-averaged reverberant power to mic-averaged noise power.
/// `snr_db = +∞` disables noise.
pub fn mix_scene(sources: &[TimeSignal], rirs: &[Rir], snr_db: f64, seed: u64) -> Result<TimeSignal> {
    let clean = reverberant_image(sources, rirs)?;
    if snr_db == f64::INFINITY {
        return Ok(clean);
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("SNR is NaN".into()));
    }
    add_noise(clean, snr_db, seed)
}

pub(crate) fn mean_power(x: &TimeSignal) -> f64 {
    let total: f64 = x.channels().iter().flatten().map(|v| v * v).sum();
    total / (x.len() * x.num_channels()) as f64
}

pub(crate) fn add_noise(clean: TimeSignal, snr_db: f64, seed: u64) -> Result<TimeSignal> {
    let signal_power = mean_power(&clean);
    if !(signal_power > 0.0) {
        return Err(Error::InvalidSignal("cannot set SNR against a zero-power signal".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = clean.sample_rate();
    let mut chans = clean.into_channels();
    let noise: Vec<Vec<f64>> = chans
        .iter()
        .map(|c| c.iter().map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let noise_power: f64 =
        noise.iter().flatten().map(|v: &f64| v * v).sum::<f64>() / (noise.len() * noise[0].len()) as f64;
    let gain = (signal_power / noise_power / 10f64.powf(snr_db / 10.0)).sqrt();
    for (c, n) in chans.iter_mut().zip(&noise) {
        for (s, v) in c.iter_mut().zip(n) {
            *s += gain * v;
        }
    }
    TimeSignal::new(chans, fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive(a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..a.len() + b.len() - 1)
            .map(|k| {
                (0..a.len())
                    .filter(|&i| k >= i && k - i < b.len())
                    .map(|i| a[i] * b[k - i])
                    .sum()
            })
            .collect()
    }

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fft_convolution_matches_naive() {
        let a = rand_vec(700, 1);
        let b = rand_vec(300, 2);
        let fast = convolve(&a, &b);
        let slow = naive(&a, &b);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_mix_is_pure_convolution_and_linear() {
        let s1 = TimeSignal::mono(rand_vec(500, 3), 16000).unwrap();
        let s2 = TimeSignal::mono(rand_vec(400, 4), 16000).unwrap();
        let r1 = Rir { taps: vec![rand_vec(64, 5), rand_vec(60, 6)], sample_rate: 16000 };
        let r2 = Rir { taps: vec![rand_vec(50, 7), rand_vec(64, 8)], sample_rate: 16000 };
        let y = mix_scene(&[s1.clone(), s2.clone()], &[r1.clone(), r2.clone()], f64::INFINITY, 0).unwrap();
        for m in 0..2 {
            let mut expect = naive(s1.channel(0), &r1.taps[m]);
            for (e, v) in expect.iter_mut().zip(naive(s2.channel(0), &r2.taps[m])) {
                *e += v;
            }
            for (k, e) in expect.iter().enumerate() {
                assert!((y.channel(m)[k] - e).abs() < 1e-10);
            }
        }
        let doubled = TimeSignal::mono(s1.channel(0).iter().map(|v| 2.0 * v).collect(), 16000).unwrap();
        let y1 = mix_scene(&[s1], std::slice::from_ref(&r1), f64::INFINITY, 0).unwrap();
        let y2 = mix_scene(&[doubled], &[r1], f64::INFINITY, 0).unwrap();
        for (a, b) in y1.channel(1).iter().zip(y2.channel(1)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rir_adds_only_noise() {
        let s = TimeSignal::mono(rand_vec(1000, 9), 16000).unwrap();
        let r = Rir { taps: vec![vec![1.0]], sample_rate: 16000 };
        let y = mix_scene(std::slice::from_ref(&s), std::slice::from_ref(&r), f64::INFINITY, 0).unwrap();
        assert_eq!(y.channel(0), s.channel(0));
        let noisy = mix_scene(std::slice::from_ref(&s), &[r], 20.0, 1).unwrap();
        assert_eq!(noisy.len(), s.len());
    }

    #[test]
    fn zero_db_snr_power_ratio() {
        let fs = 16000;
        let s = TimeSignal::mono(rand_vec(10 * fs as usize, 10), fs).unwrap();
        let r = Rir { taps: vec![vec![0.5, 0.25], vec![1.0]], sample_rate: fs };
        let clean = mix_scene(std::slice::from_ref(&s), std::slice::from_ref(&r), f64::INFINITY, 0).unwrap();
        let noisy = mix_scene(&[s], &[r], 0.0, 42).unwrap();
        let mut ps = 0.0;
        let mut pn = 0.0;
        for m in 0..2 {
            for (c, y) in clean.channel(m).iter().zip(noisy.channel(m)) {
                ps += c * c;
                pn += (y - c).powi(2);
            }
        }
        assert!((ps / pn - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_signal_with_snr_is_rejected() {
        let s = TimeSignal::mono(vec![0.0; 100], 16000).unwrap();
        let r = Rir { taps: vec![vec![1.0]], sample_rate: 16000 };
        assert!(mix_scene(&[s], &[r], 10.0, 0).is_err());
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let s = TimeSignal::mono(vec![1.0; 10], 8000).unwrap();
        let r = Rir { taps: vec![vec![1.0]], sample_rate: 16000 };
        assert!(mix_scene(&[s], &[r], f64::INFINITY, 0).is_err());
    }
}
