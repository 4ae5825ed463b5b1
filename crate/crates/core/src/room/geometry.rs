use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Microphone positions plus the reference microphone used for relative
/// delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<Point>,
    pub reference_index: usize,
    pub speed_of_sound: f64,
}

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Point>, reference_index: usize, speed_of_sound: f64) -> Result<Self> {
        let g = Self {
            mic_positions,
            reference_index,
            speed_of_sound,
        };
        g.validate()?;
        Ok(g)
    }

    /// Uniform linear array along the x axis centred on `center`; mic 0 has
    /// the smallest x coordinate and is the reference.
    pub fn ula(mics: usize, spacing: f64, center: Point) -> Result<Self> {
        let offset = (mics as f64 - 1.0) / 2.0;
        let pos = (0..mics)
            .map(|m| [center[0] + (m as f64 - offset) * spacing, center[1], center[2]])
            .collect();
        Self::new(pos, 0, DEFAULT_SPEED_OF_SOUND)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::Geometry("array needs at least one microphone".into()));
        }
        if self.reference_index >= self.mic_positions.len() {
            return Err(Error::Geometry(format!(
                "reference index {} out of range",
                self.reference_index
            )));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::Geometry("speed of sound must be positive".into()));
        }
        for (i, a) in self.mic_positions.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Geometry(format!("mic {i} has non-finite position")));
            }
            for b in &self.mic_positions[i + 1..] {
                if distance(a, b) < 1e-9 {
                    return Err(Error::Geometry(format!("mic {i} position duplicated")));
                }
            }
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn center(&self) -> Point {
        let m = self.num_mics() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for k in 0..3 {
                c[k] += p[k] / m;
            }
        }
        c
    }

    /// Plane-wave arrival delay of mic `m` relative to the reference for a
    /// source at azimuth `theta` (radians from the +x axis in the xy plane).
    /// Microphones closer to the source receive the wavefront earlier, so
    /// their delay is negative.
    pub fn relative_delay(&self, m: usize, theta: f64) -> f64 {
        let r = &self.mic_positions[self.reference_index];
        let p = &self.mic_positions[m];
        let proj = (p[0] - r[0]) * theta.cos() + (p[1] - r[1]) * theta.sin();
        -proj / self.speed_of_sound
    }
}

/// Physical centre frequency of one-sided bin `bin` out of `bins`.
pub fn bin_frequency(bin: usize, bins: usize, sample_rate: f64) -> f64 {
    let fft_len = 2 * (bins - 1);
    bin as f64 * sample_rate / fft_len as f64
}

/// Far-field steering vector `a(θ, ω)`; entry `m` is
/// `exp(-j 2π f(ω) Δt_m(θ))` and the reference entry is exactly 1.
pub fn steering_vector(
    geom: &ArrayGeometry,
    theta: f64,
    bin: usize,
    bins: usize,
    sample_rate: f64,
) -> Vec<Complex64> {
    assert!(bin < bins, "bin {bin} out of range for {bins} bins");
    let f = bin_frequency(bin, bins, sample_rate);
    (0..geom.num_mics())
        .map(|m| {
            if m == geom.reference_index {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * geom.relative_delay(m, theta))
            }
        })
        .collect()
}

/// Azimuth of `target` as seen from `origin`.
pub fn azimuth(origin: &Point, target: &Point) -> f64 {
    (target[1] - origin[1]).atan2(target[0] - origin[0])
}
