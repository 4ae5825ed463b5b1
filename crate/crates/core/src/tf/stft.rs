use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{TfTensor, TimeSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Analysis/synthesis parameters. The FFT length equals `frame_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    /// Builds a config after checking the constant-overlap-add condition.
    pub fn new(frame_len: usize, hop: usize, window: Window) -> Result<Self> {
        let cfg = Self {
            frame_len,
            hop,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frame length must be even and >= 2, got {}",
                self.frame_len
            )));
        }
        if self.hop == 0 || !self.frame_len.is_multiple_of(self.hop) {
            return Err(Error::InvalidConfig(format!(
                "hop {} must evenly divide frame length {}",
                self.hop, self.frame_len
            )));
        }
        let w = self.window.coefficients(self.frame_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|i| w.iter().skip(i).step_by(self.hop).sum())
            .collect();
        let reference = sums[0];
        if sums
            .iter()
            .any(|s| (s - reference).abs() > 1e-10 * reference.abs().max(1.0))
        {
            return Err(Error::InvalidConfig(format!(
                "{:?} window is not constant-overlap-add at hop {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples: the tail is
    /// zero-padded up to the next full hop.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_len {
            return None;
        }
        Some((len - self.frame_len).div_ceil(self.hop) + 1)
    }

    /// Length of the synthesized signal for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames * self.hop + (self.frame_len - self.hop)
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// One-sided short-time Fourier transform of every channel.
pub fn stft(x: &TimeSignal, cfg: &StftConfig) -> Result<TfTensor> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidSignal("empty signal".into()));
    }
    let frames = cfg.frame_count(x.len()).ok_or_else(|| {
        Error::InvalidSignal(format!(
            "signal of {} samples is shorter than one frame ({})",
            x.len(),
            cfg.frame_len
        ))
    })?;
    let mics = x.num_channels();
    let mut out = TfTensor::zeros(mics, frames, cfg.frame_len, cfg.hop, x.sample_rate())?;
    let window = cfg.window.coefficients(cfg.frame_len);
    let fft = plan(cfg.frame_len, false);
    let bins = cfg.bins();
    let frame_len = cfg.frame_len;
    let hop = cfg.hop;

    out.as_mut_slice()
        .par_chunks_mut(bins * mics)
        .enumerate()
        .for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); frame_len],
                    vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                )
            },
            |(buf, scratch), (n, frame)| {
                let start = n * hop;
                for m in 0..mics {
                    let ch = x.channel(m);
                    for (i, b) in buf.iter_mut().enumerate() {
                        let s = ch.get(start + i).copied().unwrap_or(0.0);
                        *b = Complex64::new(s * window[i], 0.0);
                    }
                    fft.process_with_scratch(buf, scratch);
                    for w in 0..bins {
                        frame[w * mics + m] = buf[w];
                    }
                }
            },
        );
    Ok(out)
}

/// Overlap-add inverse of [`stft`].
///
/// Each frame is inverse transformed, overlap-added, and divided by the
/// overlap-added analysis window so that `istft(stft(x))` reproduces `x`
/// wherever the window sum is nonzero.
pub fn istft(y: &TfTensor, cfg: &StftConfig) -> Result<TimeSignal> {
    cfg.validate()?;
    if y.frame_len() != cfg.frame_len || y.hop() != cfg.hop || y.bins() != cfg.bins() {
        return Err(Error::DimensionMismatch(format!(
            "tensor (frame_len {}, hop {}) does not match config (frame_len {}, hop {})",
            y.frame_len(),
            y.hop(),
            cfg.frame_len,
            cfg.hop
        )));
    }
    let frames = y.frames();
    let mics = y.mics();
    let len = cfg.output_len(frames);
    let frame_len = cfg.frame_len;
    let bins = cfg.bins();
    let window = cfg.window.coefficients(frame_len);
    let ifft = plan(frame_len, true);

    let mut norm = vec![0.0; len];
    for n in 0..frames {
        for (i, w) in window.iter().enumerate() {
            norm[n * cfg.hop + i] += w;
        }
    }
    let peak = norm.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-9 * peak;

    // Inverse transform every frame, then overlap-add sequentially.
    let blocks: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); frame_len],
                    vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()],
                )
            },
            |(buf, scratch), n| {
                let mut block = vec![0.0; mics * frame_len];
                for m in 0..mics {
                    for w in 0..bins {
                        buf[w] = y.get(m, n, w);
                    }
                    for w in bins..frame_len {
                        buf[w] = buf[frame_len - w].conj();
                    }
                    ifft.process_with_scratch(buf, scratch);
                    let scale = 1.0 / frame_len as f64;
                    for (i, b) in buf.iter().enumerate() {
                        block[m * frame_len + i] = b.re * scale;
                    }
                }
                block
            },
        )
        .collect();

    let mut channels = vec![vec![0.0; len]; mics];
    for (n, block) in blocks.iter().enumerate() {
        let start = n * cfg.hop;
        for (m, ch) in channels.iter_mut().enumerate() {
            for (dst, src) in ch[start..start + frame_len]
                .iter_mut()
                .zip(&block[m * frame_len..(m + 1) * frame_len])
            {
                *dst += src;
            }
        }
    }
    for ch in &mut channels {
        for (s, &w) in ch.iter_mut().zip(&norm) {
            *s = if w > floor { *s / w } else { 0.0 };
        }
    }
    TimeSignal::new(channels, y.sample_rate())
}
