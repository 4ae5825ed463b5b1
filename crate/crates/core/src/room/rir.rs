use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use super::geometry::{distance, ArrayGeometry, Point, DEFAULT_SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::tf::{read_wav, write_wav, TimeSignal, WavEncoding};

/// Everything needed to synthesize one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomScene {
    pub room_dims: [f64; 3],
    pub source_positions: Vec<Point>,
    /// Far-field azimuths fed to the beamformer, one per source.
    pub source_doas: Vec<f64>,
    pub t60: f64,
    pub snr_db: f64,
    pub sample_rate: u32,
}

impl RoomScene {
    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Geometry("room dimensions must be positive".into()));
        }
        if self.source_positions.is_empty() {
            return Err(Error::Geometry("scene needs at least one source".into()));
        }
        if self.source_doas.len() != self.source_positions.len() {
            return Err(Error::Geometry("one DOA per source required".into()));
        }
        if !(self.t60 >= 0.0) || !self.t60.is_finite() {
            return Err(Error::Geometry(format!("t60 must be >= 0, got {}", self.t60)));
        }
        if self.sample_rate == 0 {
            return Err(Error::Geometry("sample rate must be positive".into()));
        }
        for (q, p) in self.source_positions.iter().enumerate() {
            if !self.contains(p) {
                return Err(Error::Geometry(format!("source {q} at {p:?} is outside the room")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter().zip(&self.room_dims).all(|(&v, &d)| v > 0.0 && v < d)
    }

    pub fn volume(&self) -> f64 {
        self.room_dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.room_dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Eyring inversion `β = exp(-0.0805 V / (S T60))` from
    /// `T60 = 0.161 V / (-S ln(1 - α))` with `β = sqrt(1 - α)`.
    pub fn eyring_coefficient(&self) -> f64 {
        if self.t60 <= 0.0 {
            return 0.0;
        }
        (-0.0805 * self.volume() / (self.surface() * self.t60)).exp()
    }

    /// Uniform pressure reflection coefficient used by [`simulate_rir`].
    ///
    /// Image sources along different directions hit the walls at different
    /// rates (`Σ |u_i| / L_i` reflections per metre), so a shoebox with the
    /// Eyring coefficient decays non-exponentially and too slowly. The
    /// coefficient is instead chosen so that the direction-averaged
    /// backward-integrated decay reaches -60 dB at `t60`.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.t60 <= 0.0 {
            return 0.0;
        }
        let rates = wall_hit_rates(&self.room_dims);
        let inv_mean: f64 = rates.iter().map(|f| 1.0 / f).sum::<f64>();
        let dist = DEFAULT_SPEED_OF_SOUND * self.t60;
        // Relative decay of Σ_u exp(-κ f_u d) / f_u at distance d.
        let decay_db = |kappa: f64| {
            let e: f64 = rates.iter().map(|f| (-kappa * f * dist).exp() / f).sum();
            10.0 * (e / inv_mean).log10()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while decay_db(hi) > -60.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if decay_db(mid) > -60.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (-0.5 * hi).exp()
    }
}

/// Wall hits per metre of travel over a Fibonacci sphere of directions.
fn wall_hit_rates(dims: &[f64; 3]) -> Vec<f64> {
    const N: usize = 4096;
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..N)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / N as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let u = [r * phi.cos(), r * phi.sin(), z];
            u.iter().zip(dims).map(|(c, l)| c.abs() / l).sum()
        })
        .collect()
}

/// Room impulse responses from one source to every microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    /// `taps[m]` is the response at microphone `m`.
    pub taps: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Rir {
    pub fn num_mics(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first nonzero tap at microphone `m`.
    pub fn direct_index(&self, m: usize) -> Option<usize> {
        self.taps[m].iter().position(|&v| v != 0.0)
    }

    /// Splits mic `m` into taps before and from `split` (early, late).
    pub fn split(&self, m: usize, split: usize) -> (Vec<f64>, Vec<f64>) {
        let taps = &self.taps[m];
        let split = split.min(taps.len());
        let mut early = taps.clone();
        let mut late = taps.clone();
        early[split..].iter_mut().for_each(|v| *v = 0.0);
        late[..split].iter_mut().for_each(|v| *v = 0.0);
        (early, late)
    }

    /// Exports the responses as a multichannel float WAV (one channel per mic).
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let len = self.len();
        let chans = self.taps.iter().map(|t| {
            let mut t = t.clone();
            t.resize(len, 0.0);
            t
        });
        let sig = TimeSignal::new(chans.collect(), self.sample_rate)?;
        write_wav(path, &sig, WavEncoding::Float32)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Rir> {
        let sig = read_wav(path)?;
        let sample_rate = sig.sample_rate();
        Ok(Rir {
            taps: sig.into_channels(),
            sample_rate,
        })
    }
}

/// RIR length in samples: 1.5·T60 past the longest direct path, which keeps
/// the truncated tail more than 90 dB down.
fn rir_length(scene: &RoomScene, max_direct: f64) -> usize {
    let fs = scene.sample_rate as f64;
    (max_direct * fs).ceil() as usize + (1.5 * scene.t60 * fs).ceil() as usize + 1
}

/// Image-method impulse responses of a rectangular room with uniform wall
/// reflection, nearest-sample delays and `1/(4πr)` spreading.
pub fn simulate_rir(scene: &RoomScene, geom: &ArrayGeometry, q: usize) -> Result<Rir> {
    scene.validate()?;
    geom.validate()?;
    let src = *scene
        .source_positions
        .get(q)
        .ok_or_else(|| Error::Geometry(format!("source index {q} out of range")))?;
    for (m, p) in geom.mic_positions.iter().enumerate() {
        if !scene.contains(p) {
            return Err(Error::Geometry(format!("mic {m} at {p:?} is outside the room")));
        }
    }
    let c = geom.speed_of_sound;
    let fs = scene.sample_rate as f64;
    let beta = scene.reflection_coefficient();
    let max_direct = geom
        .mic_positions
        .iter()
        .map(|p| distance(p, &src))
        .fold(0.0, f64::max)
        / c;
    let len = rir_length(scene, max_direct);
    let max_dist = len as f64 / fs * c;
    let dims = scene.room_dims;

    let taps = geom
        .mic_positions
        .par_iter()
        .map(|mic| {
            let mut h = vec![0.0; len];
            if beta == 0.0 {
                let d = distance(mic, &src);
                let k = (d / c * fs).round() as usize;
                h[k] += 1.0 / (4.0 * PI * d);
                return h;
            }
            let range: Vec<i64> = dims
                .iter()
                .map(|&l| (max_dist / (2.0 * l)).ceil() as i64 + 1)
                .collect();
            for lx in -range[0]..=range[0] {
                for px in 0..2i64 {
                    let ix = (1 - 2 * px) as f64 * src[0] + 2.0 * lx as f64 * dims[0];
                    let dx = ix - mic[0];
                    if dx.abs() > max_dist {
                        continue;
                    }
                    let rx = (lx - px).abs() + lx.abs();
                    for ly in -range[1]..=range[1] {
                        for py in 0..2i64 {
                            let iy = (1 - 2 * py) as f64 * src[1] + 2.0 * ly as f64 * dims[1];
                            let dy = iy - mic[1];
                            let dxy2 = dx * dx + dy * dy;
                            if dxy2 > max_dist * max_dist {
                                continue;
                            }
                            let ry = (ly - py).abs() + ly.abs();
                            for lz in -range[2]..=range[2] {
                                for pz in 0..2i64 {
                                    let iz = (1 - 2 * pz) as f64 * src[2] + 2.0 * lz as f64 * dims[2];
                                    let dz = iz - mic[2];
                                    let d = (dxy2 + dz * dz).sqrt();
                                    let k = (d / c * fs).round() as usize;
                                    if k >= len {
                                        continue;
                                    }
                                    let rz = (lz - pz).abs() + lz.abs();
                                    let refl = (rx + ry + rz) as i32;
                                    h[k] += beta.powi(refl) / (4.0 * PI * d);
                                }
                            }
                        }
                    }
                }
            }
            h
        })
        .collect();
    Ok(Rir {
        taps,
        sample_rate: scene.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(t60: f64, src: Point) -> RoomScene {
        RoomScene {
            room_dims: [6.0, 6.0, 3.0],
            source_positions: vec![src],
            source_doas: vec![0.0],
            t60,
            snr_db: f64::INFINITY,
            sample_rate: 16000,
        }
    }

    fn single_mic(p: Point) -> ArrayGeometry {
        ArrayGeometry::new(vec![p], 0, 343.0).unwrap()
    }

    #[test]
    fn anechoic_single_impulse() {
        let g = single_mic([3.0, 3.0, 1.5]);
        let r1 = simulate_rir(&scene(0.0, [4.0, 3.0, 1.5]), &g, 0).unwrap();
        let nz: Vec<usize> = (0..r1.len()).filter(|&k| r1.taps[0][k] != 0.0).collect();
        let delay = (16000.0f64 / 343.0).round() as usize;
        assert_eq!(nz, vec![delay]);
        let r2 = simulate_rir(&scene(0.0, [5.0, 3.0, 1.5]), &g, 0).unwrap();
        let a1 = r1.taps[0][delay];
        let a2 = r2.taps[0][r2.direct_index(0).unwrap()];
        assert!((a2 / a1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn schroeder_decay_matches_t60() {
        let g = single_mic([2.1, 2.7, 1.3]);
        let r = simulate_rir(&scene(0.4, [4.3, 3.6, 1.7]), &g, 0).unwrap();
        let h = &r.taps[0];
        assert!(r.len() as f64 >= 0.4 * 16000.0);
        // Schroeder backward integration.
        let mut edc = vec![0.0; h.len() + 1];
        for k in (0..h.len()).rev() {
            edc[k] = edc[k + 1] + h[k] * h[k];
        }
        let total = edc[0];
        let cross = (0..h.len())
            .find(|&k| 10.0 * (edc[k] / total).log10() <= -60.0)
            .unwrap();
        let direct = r.direct_index(0).unwrap();
        let t = (cross - direct) as f64 / 16000.0;
        assert!((t - 0.4).abs() <= 0.08, "EDC crosses -60 dB at {t} s");
    }

    #[test]
    fn tail_energy_is_negligible() {
        let g = single_mic([2.0, 2.0, 1.0]);
        let r = simulate_rir(&scene(0.3, [4.0, 4.5, 2.0]), &g, 0).unwrap();
        let h = &r.taps[0];
        let total: f64 = h.iter().map(|v| v * v).sum();
        let tail: f64 = h[(0.3 * 16000.0) as usize..].iter().map(|v| v * v).sum();
        assert!(tail <= 1e-3 * total);
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn first_tap_not_before_direct_path() {
        let g = ArrayGeometry::ula(4, 0.03, [3.0, 3.0, 1.5]).unwrap();
        let src = [3.5, 4.2, 1.5];
        let r = simulate_rir(&scene(0.2, src), &g, 0).unwrap();
        for m in 0..4 {
            let d = distance(&g.mic_positions[m], &src);
            assert_eq!(r.direct_index(m).unwrap(), (d / 343.0 * 16000.0).round() as usize);
        }
    }

    #[test]
    fn outside_positions_rejected() {
        let g = single_mic([3.0, 3.0, 1.5]);
        assert!(simulate_rir(&scene(0.2, [7.0, 3.0, 1.5]), &g, 0).is_err());
        let outside = single_mic([3.0, 3.0, 3.5]);
        assert!(simulate_rir(&scene(0.2, [1.0, 1.0, 1.0]), &outside, 0).is_err());
        assert!(simulate_rir(&scene(-0.1, [1.0, 1.0, 1.0]), &g, 0).is_err());
    }

    #[test]
    fn wav_export_round_trip() {
        let g = ArrayGeometry::ula(3, 0.05, [3.0, 3.0, 1.5]).unwrap();
        let r = simulate_rir(&scene(0.1, [4.0, 4.0, 1.2]), &g, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rir.wav");
        r.write_wav(&p).unwrap();
        let back = Rir::read_wav(&p).unwrap();
        assert_eq!(back.num_mics(), 3);
        for m in 0..3 {
            for (a, b) in r.taps[m].iter().zip(&back.taps[m]) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
    }
}
