//! Time and time–frequency signal containers, STFT analysis/synthesis and
//! WAV I/O.

mod stft;
mod wav;

pub use stft::{istft, stft, StftConfig, Window};
pub use wav::{read_wav, write_wav, WavEncoding};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Multichannel real-valued signal, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidSignal("at least one channel required".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidSignal("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Keeps only channel `m`.
    pub fn select_channel(&self, m: usize) -> TimeSignal {
        TimeSignal {
            channels: vec![self.channels[m].clone()],
            sample_rate: self.sample_rate,
        }
    }

    /// Truncates or zero-extends every channel to `len` samples.
    pub fn with_len(mut self, len: usize) -> TimeSignal {
        for c in &mut self.channels {
            c.resize(len, 0.0);
        }
        self
    }
}

/// Complex time–frequency tensor indexed by microphone `m`, frame `n` and
/// one-sided frequency bin `ω`.
///
/// Storage is frame-major with the microphone index innermost so that the
/// array snapshot `y(n, ω)` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TfTensor {
    data: Vec<Complex64>,
    mics: usize,
    frames: usize,
    bins: usize,
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
}

impl TfTensor {
    pub fn zeros(
        mics: usize,
        frames: usize,
        frame_len: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if mics == 0 || frames == 0 || frame_len < 2 || !frame_len.is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "tensor needs M, N >= 1 and an even frame length (M={mics}, N={frames}, frame_len={frame_len})"
            )));
        }
        let bins = frame_len / 2 + 1;
        Ok(Self {
            data: vec![Complex64::new(0.0, 0.0); mics * frames * bins],
            mics,
            frames,
            bins,
            frame_len,
            hop,
            sample_rate,
        })
    }

    /// Same shape and metadata, all-zero contents, `mics` channels.
    pub fn zeros_like(&self, mics: usize) -> TfTensor {
        TfTensor {
            data: vec![Complex64::new(0.0, 0.0); mics * self.frames * self.bins],
            mics,
            ..*self
        }
    }

    pub fn mics(&self) -> usize {
        self.mics
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn frame_len(&self) -> usize {
        self.frame_len
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    fn offset(&self, n: usize, w: usize) -> usize {
        (n * self.bins + w) * self.mics
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, w: usize) -> Complex64 {
        self.data[self.offset(n, w) + m]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, w: usize, v: Complex64) {
        let o = self.offset(n, w) + m;
        self.data[o] = v;
    }

    /// The array snapshot `y(n, ω)`.
    #[inline]
    pub fn snapshot(&self, n: usize, w: usize) -> &[Complex64] {
        let o = self.offset(n, w);
        &self.data[o..o + self.mics]
    }

    #[inline]
    pub fn snapshot_mut(&mut self, n: usize, w: usize) -> &mut [Complex64] {
        let o = self.offset(n, w);
        let m = self.mics;
        &mut self.data[o..o + m]
    }

    /// All bins of frame `n`, `bins * mics` values.
    pub fn frame(&self, n: usize) -> &[Complex64] {
        let o = self.offset(n, 0);
        &self.data[o..o + self.bins * self.mics]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
        let o = self.offset(n, 0);
        let len = self.bins * self.mics;
        &mut self.data[o..o + len]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Single-channel tensor holding channel `m`.
    pub fn channel(&self, m: usize) -> TfTensor {
        let mut out = self.zeros_like(1);
        for (dst, src) in out.data.iter_mut().zip(self.data.chunks_exact(self.mics)) {
            *dst = src[m];
        }
        out
    }

    /// Reorders microphones: output channel `i` is input channel `perm[i]`.
    pub fn permute_mics(&self, perm: &[usize]) -> TfTensor {
        assert_eq!(perm.len(), self.mics);
        let mut out = self.clone();
        for (dst, src) in out
            .data
            .chunks_exact_mut(self.mics)
            .zip(self.data.chunks_exact(self.mics))
        {
            for (d, &p) in dst.iter_mut().zip(perm) {
                *d = src[p];
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> TfTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}
