use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::TimeSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file; PCM samples are scaled by
/// 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let chans = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / chans.max(1)); chans];
    for frame in interleaved.chunks_exact(chans) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    TimeSignal::new(channels, spec.sample_rate)
}

/// Writes all channels interleaved. PCM16 output clips to the 16-bit range.
pub fn write_wav(path: impl AsRef<Path>, x: &TimeSignal, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: x.num_channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for i in 0..x.len() {
        for ch in x.channels() {
            let v = ch[i];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(wav_err(path))?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32).map_err(wav_err(path))?,
            }
        }
    }
    writer.finalize().map_err(wav_err(path))
}
