use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{azimuth, ArrayGeometry, Point};
use super::mix::mix_scene;
use super::rir::{simulate_rir, Rir, RoomScene};
use super::speech::synth_speechlike;
use crate::error::{Error, Result};
use crate::tf::TimeSignal;

/// Independent 64-bit seed for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Fixed room, array and source layout; T60, SNR and seed vary per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTemplate {
    pub room_dims: [f64; 3],
    pub array: ArrayGeometry,
    /// Target first, then interferers.
    pub source_positions: Vec<Point>,
    /// Source duration in seconds.
    pub duration: f64,
    pub sample_rate: u32,
}

impl SceneTemplate {
    /// Places sources at `(azimuth, distance)` from the array centre, in the
    /// centre's horizontal plane.
    pub fn polar_sources(center: Point, placements: &[(f64, f64)]) -> Vec<Point> {
        placements
            .iter()
            .map(|&(az, d)| [center[0] + d * az.cos(), center[1] + d * az.sin(), center[2]])
            .collect()
    }

    pub fn scene(&self, t60: f64, snr_db: f64) -> Result<RoomScene> {
        let c = self.array.center();
        let scene = RoomScene {
            room_dims: self.room_dims,
            source_doas: self.source_positions.iter().map(|p| azimuth(&c, p)).collect(),
            source_positions: self.source_positions.clone(),
            t60,
            snr_db,
            sample_rate: self.sample_rate,
        };
        scene.validate()?;
        for (m, p) in self.array.mic_positions.iter().enumerate() {
            if !scene.contains(p) {
                return Err(Error::Geometry(format!("mic {m} at {p:?} is outside the room")));
            }
        }
        Ok(scene)
    }
}

/// Everything generated for one Monte Carlo trial.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub scene: RoomScene,
    /// Dry sources, target first.
    pub sources: Vec<TimeSignal>,
    /// `rirs[q]` holds the responses of source `q`.
    pub rirs: Vec<Rir>,
    /// Noisy multichannel observation, truncated to the source length.
    pub mixture: TimeSignal,
}

const STREAM_SOURCE: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Synthesizes sources, RIRs and the noisy mixture for one trial. All
/// randomness derives from `seed`.
pub fn simulate_trial(template: &SceneTemplate, t60: f64, snr_db: f64, seed: u64) -> Result<SimulatedTrial> {
    let scene = template.scene(t60, snr_db)?;
    let sources = (0..scene.source_positions.len())
        .map(|q| synth_speechlike(template.duration, template.sample_rate, derive_seed(seed, STREAM_SOURCE, q as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rirs = (0..sources.len())
        .map(|q| simulate_rir(&scene, &template.array, q))
        .collect::<Result<Vec<_>>>()?;
    let len = sources[0].len();
    let mixture = mix_scene(&sources, &rirs, snr_db, derive_seed(seed, STREAM_NOISE, 0))?.with_len(len);
    Ok(SimulatedTrial {
        scene,
        sources,
        rirs,
        mixture,
    })
}
