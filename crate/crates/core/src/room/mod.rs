//! Synthetic evaluation scenes: array geometry and far-field steering
//! vectors, image-method room impulse responses, convolutive mixing with
//! white noise, a speech-like source generator and per-trial scene synthesis.

mod geometry;
mod mix;
mod rir;
mod scene;
mod speech;

pub use geometry::{azimuth, bin_frequency, steering_vector, ArrayGeometry, Point, DEFAULT_SPEED_OF_SOUND};
pub use mix::{convolve, mix_scene, reverberant_image};
pub use rir::{simulate_rir, Rir, RoomScene};
pub use scene::{derive_seed, simulate_trial, SceneTemplate, SimulatedTrial};
pub use speech::synth_speechlike;
