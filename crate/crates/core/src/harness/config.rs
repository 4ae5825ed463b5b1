//! Experiment configuration.
//!
//! Files are TOML restricted in practice to `key = value` lines with dotted
//! section prefixes:
//!
//! ```toml
//! seed = 7
//! trials = 10
//! pipelines = ["passthrough", "temporal_only", "proposed"]
//! sweep.t60 = [0.2, 0.6]
//! sweep.snr_db = [25.0]
//! mclp.k_t = 12
//! beam.lambda_w_rel = 0.01
//! ```
//!
//! Every key is optional except `sweep.t60` and `sweep.snr_db`. Unknown keys
//! are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | master seed |
//! | `trials` | 10 | Monte Carlo trials per sweep point |
//! | `pipelines` | all four | subset of `passthrough`, `mclp_only`, `temporal_only`, `proposed` |
//! | `workers` | rayon default | worker threads; `DUALPATH_WORKERS` and `--workers` override |
//! | `scene.room_dims` | `[6, 6, 3]` | room size in metres |
//! | `scene.duration` | 3.0 | source length in seconds |
//! | `scene.sample_rate` | 16000 | Hz |
//! | `scene.source_azimuth_deg` | 60 | target azimuth seen from the array centre |
//! | `scene.source_distance` | 1.5 | target distance from the array centre in metres |
//! | `scene.interferers` | `[]` | extra sources as `[azimuth_deg, distance]` pairs |
//! | `scene.source_wav` | none | mono WAV used as the target instead of synthetic speech |
//! | `array.mics` | 8 | ULA size |
//! | `array.spacing` | 0.03 | ULA spacing in metres |
//! | `array.center` | room centre | ULA centre `[x, y, z]` |
//! | `array.reference` | 0 | reference microphone |
//! | `array.speed_of_sound` | 343 | m/s |
//! | `stft.frame_len`, `stft.hop`, `stft.window` | 512, 256, `"hann"` | analysis |
//! | `mclp.k_t`, `mclp.k_f`, `mclp.delta_t` | 10, 2, 2 | prediction orders and delay |
//! | `mclp.lambda_z_rel` | 0.01 | `λ_z` relative to the mean magnitude of the observation |
//! | `mclp.rho_g`, `mclp.mu_z`, `mclp.gamma` | 1, 1, 1 | penalty, step and dual step |
//! | `mclp.max_iters`, `mclp.tol`, `mclp.diag_load` | 8, 1e-4, 1e-6 | |
//! | `mclp.weighting` | `"power"` | `"none"` or `"power"` |
//! | `mclp.reweight_iters`, `mclp.weight_floor` | 8, 1e-3 | |
//! | `beam.lambda_w_rel` | 0.01 | `λ_w` relative to the mean magnitude of the beamformer input |
//! | `beam.rho_w`, `beam.mu_w`, `beam.gamma_w` | 1, 1, 1 | |
//! | `beam.rho_1`, `beam.gamma_1` | 1e-3, 1e3 | constraint penalty and dual step |
//! | `beam.max_outer`, `beam.max_inner` | 30, 10 | |
//! | `beam.tol`, `beam.constraint_tol`, `beam.diag_load` | 1e-6, 1e-10, 1.0 | |
//! | `thresholds.delta_1`, `thresholds.delta_2` | 0.15, 0.30 | order-selection thresholds |
//! | `orders.auto` | false | take `K_t`, `K_f` per T60 from the order study |
//! | `orders.trials`, `orders.seed` | 20, `seed` | order-study Monte Carlo size and seed |
//! | `orders.max_lag_time`, `orders.max_lag_freq` | 60, 30 | |
//! | `orders.source` | `"speech"` | `"speech"` or `"white_noise"` |
//! | `sweep.t60`, `sweep.snr_db` | required | the sweep is their Cartesian product |
//! | `output.save_audio`, `output.save_weights` | false, false | per-trial WAV and filter containers |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam::BeamConfig;
use crate::error::{Error, Result};
use crate::mclp::{MclpConfig, Weighting};
use crate::order::{StudySettings, StudySource, ThresholdPair};
use crate::room::{ArrayGeometry, SceneTemplate};
use crate::tf::StftConfig;

/// Processing chain applied to each simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Reference microphone, unprocessed.
    Passthrough,
    /// Dual-path MCLP, reference channel of the estimate.
    MclpOnly,
    /// MCLP with `K_f = 0`, then the beamformer.
    TemporalOnly,
    /// Dual-path MCLP, then the beamformer.
    Proposed,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::Passthrough, Pipeline::MclpOnly, Pipeline::TemporalOnly, Pipeline::Proposed];

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Passthrough => "passthrough",
            Pipeline::MclpOnly => "mclp_only",
            Pipeline::TemporalOnly => "temporal_only",
            Pipeline::Proposed => "proposed",
        }
    }

    pub fn uses_beamformer(self) -> bool {
        matches!(self, Pipeline::TemporalOnly | Pipeline::Proposed)
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub room_dims: [f64; 3],
    pub duration: f64,
    pub sample_rate: u32,
    pub source_azimuth_deg: f64,
    pub source_distance: f64,
    pub interferers: Vec<[f64; 2]>,
    pub source_wav: Option<PathBuf>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            room_dims: [6.0, 6.0, 3.0],
            duration: 3.0,
            sample_rate: 16000,
            source_azimuth_deg: 60.0,
            source_distance: 1.5,
            interferers: Vec::new(),
            source_wav: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraySection {
    pub mics: usize,
    pub spacing: f64,
    pub center: Option<[f64; 3]>,
    pub reference: usize,
    pub speed_of_sound: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            mics: 8,
            spacing: 0.03,
            center: None,
            reference: 0,
            speed_of_sound: 343.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MclpSection {
    pub k_t: usize,
    pub k_f: usize,
    pub delta_t: usize,
    pub lambda_z_rel: f64,
    pub rho_g: f64,
    pub mu_z: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub diag_load: f64,
    pub weighting: Weighting,
    pub reweight_iters: usize,
    pub weight_floor: f64,
}

impl Default for MclpSection {
    fn default() -> Self {
        let lib = MclpConfig::default();
        Self {
            k_t: lib.k_t,
            k_f: lib.k_f,
            delta_t: lib.delta_t,
            lambda_z_rel: 0.01,
            rho_g: lib.rho_g,
            mu_z: lib.mu_z,
            gamma: lib.gamma,
            max_iters: 8,
            tol: lib.tol,
            diag_load: lib.diag_load,
            weighting: Weighting::Power,
            reweight_iters: 8,
            weight_floor: lib.weight_floor,
        }
    }
}

impl MclpSection {
    /// Solver config with `λ_z` still zero; see [`MclpConfig::with_relative_sparsity`].
    pub fn solver_config(&self) -> MclpConfig {
        MclpConfig {
            k_t: self.k_t,
            k_f: self.k_f,
            delta_t: self.delta_t,
            lambda_z: 0.0,
            rho_g: self.rho_g,
            mu_z: self.mu_z,
            gamma: self.gamma,
            max_iters: self.max_iters,
            tol: self.tol,
            diag_load: self.diag_load,
            weighting: self.weighting,
            reweight_iters: self.reweight_iters,
            weight_floor: self.weight_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSection {
    pub lambda_w_rel: f64,
    pub rho_w: f64,
    pub mu_w: f64,
    pub gamma_w: f64,
    pub rho_1: f64,
    pub gamma_1: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub constraint_tol: f64,
    pub diag_load: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        let lib = BeamConfig::default();
        Self {
            lambda_w_rel: 0.01,
            rho_w: lib.rho_w,
            mu_w: lib.mu_w,
            gamma_w: lib.gamma_w,
            rho_1: lib.rho_1,
            gamma_1: lib.gamma_1,
            max_outer: lib.max_outer,
            max_inner: lib.max_inner,
            tol: lib.tol,
            constraint_tol: lib.constraint_tol,
            diag_load: 1.0,
        }
    }
}

impl BeamSection {
    /// Solver config with `λ_w` still zero; see [`BeamConfig::with_relative_sparsity`].
    pub fn solver_config(&self) -> BeamConfig {
        BeamConfig {
            lambda_w: 0.0,
            rho_w: self.rho_w,
            mu_w: self.mu_w,
            gamma_w: self.gamma_w,
            rho_1: self.rho_1,
            gamma_1: self.gamma_1,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            tol: self.tol,
            constraint_tol: self.constraint_tol,
            diag_load: self.diag_load,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    pub delta_1: f64,
    pub delta_2: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        let t = ThresholdPair::default();
        Self {
            delta_1: t.delta_1,
            delta_2: t.delta_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrdersSection {
    pub auto: bool,
    pub trials: usize,
    pub seed: Option<u64>,
    pub max_lag_time: usize,
    pub max_lag_freq: usize,
    pub source: StudySource,
}

impl Default for OrdersSection {
    fn default() -> Self {
        Self {
            auto: false,
            trials: 20,
            seed: None,
            max_lag_time: 60,
            max_lag_freq: 30,
            source: StudySource::Speech,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t60: Vec<f64>,
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub save_audio: bool,
    pub save_weights: bool,
}

fn default_trials() -> usize {
    10
}

fn default_pipelines() -> Vec<Pipeline> {
    Pipeline::ALL.to_vec()
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_pipelines")]
    pub pipelines: Vec<Pipeline>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub mclp: MclpSection,
    #[serde(default)]
    pub beam: BeamSection,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub orders: OrdersSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// One `(T60, SNR)` combination of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub t60: f64,
    pub snr_db: f64,
}

impl ExperimentConfig {
    /// Config with every default and the given sweep.
    pub fn with_sweep(t60: Vec<f64>, snr_db: Vec<f64>) -> Self {
        Self {
            seed: 0,
            trials: default_trials(),
            pipelines: default_pipelines(),
            workers: None,
            scene: SceneSection::default(),
            array: ArraySection::default(),
            stft: StftConfig::default(),
            mclp: MclpSection::default(),
            beam: BeamSection::default(),
            thresholds: ThresholdSection::default(),
            orders: OrdersSection::default(),
            sweep: SweepSection { t60, snr_db },
            output: OutputSection::default(),
        }
    }

    /// Parses and validates a config string; `origin` names it in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials < 1 {
            return bad("trials must be >= 1".into());
        }
        if self.sweep.t60.is_empty() || self.sweep.snr_db.is_empty() {
            return bad("sweep.t60 and sweep.snr_db must be non-empty".into());
        }
        if self.pipelines.is_empty() {
            return bad("pipelines must be non-empty".into());
        }
        let mut seen = self.pipelines.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.pipelines.len() {
            return bad("pipelines contains duplicates".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if self.sweep.snr_db.iter().any(|s| s.is_nan()) {
            return bad("sweep.snr_db contains NaN".into());
        }
        for p in self.points() {
            self.template()?.scene(p.t60, p.snr_db)?;
        }
        if self.array.reference >= self.array.mics {
            return bad(format!("array.reference {} out of range", self.array.reference));
        }
        if !(self.mclp.lambda_z_rel >= 0.0) || !(self.beam.lambda_w_rel >= 0.0) {
            return bad("relative sparsity weights must be >= 0".into());
        }
        self.stft.validate()?;
        self.mclp.solver_config().validate()?;
        self.beam.solver_config().validate()?;
        self.thresholds().validate()?;
        if self.orders.auto && self.orders.trials < 2 {
            return bad("orders.trials must be >= 2".into());
        }
        Ok(())
    }

    /// Sweep points in row order: T60 outer, SNR inner.
    pub fn points(&self) -> Vec<SweepPoint> {
        self.sweep
            .t60
            .iter()
            .flat_map(|&t60| self.sweep.snr_db.iter().map(move |&snr_db| SweepPoint { t60, snr_db }))
            .collect()
    }

    pub fn array_geometry(&self) -> Result<ArrayGeometry> {
        let a = &self.array;
        let d = self.scene.room_dims;
        let center = a.center.unwrap_or([d[0] / 2.0, d[1] / 2.0, d[2] / 2.0]);
        let mut g = ArrayGeometry::ula(a.mics, a.spacing, center)?;
        g.reference_index = a.reference;
        g.speed_of_sound = a.speed_of_sound;
        g.validate()?;
        Ok(g)
    }

    pub fn template(&self) -> Result<SceneTemplate> {
        let array = self.array_geometry()?;
        let s = &self.scene;
        let placements: Vec<(f64, f64)> = std::iter::once([s.source_azimuth_deg, s.source_distance])
            .chain(s.interferers.iter().copied())
            .map(|[az, d]| (az.to_radians(), d))
            .collect();
        Ok(SceneTemplate {
            room_dims: s.room_dims,
            source_positions: SceneTemplate::polar_sources(array.center(), &placements),
            array,
            duration: s.duration,
            sample_rate: s.sample_rate,
        })
    }

    pub fn thresholds(&self) -> ThresholdPair {
        ThresholdPair {
            delta_1: self.thresholds.delta_1,
            delta_2: self.thresholds.delta_2,
        }
    }

    pub fn study_settings(&self) -> Result<StudySettings> {
        let mut s = StudySettings::new(self.template()?, self.stft.clone(), self.orders.trials, self.orders.seed.unwrap_or(self.seed));
        s.source = self.orders.source;
        s.max_lag_time = self.orders.max_lag_time;
        s.max_lag_freq = self.orders.max_lag_freq;
        Ok(s)
    }

    /// Distinct sweep T60 values in first-appearance order.
    pub fn distinct_t60(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &t in &self.sweep.t60 {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }
}
