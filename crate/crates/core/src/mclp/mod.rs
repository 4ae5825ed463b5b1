//! Dual-path multichannel linear prediction.
//!
//! The early component of every array snapshot is modelled as
//!
//! ```text
//! x(n,ω) = y(n,ω) − G_t(ω)ᴴ ỹ_t(n,ω) − G_f(n)ᴴ ỹ_f(n,ω)
//! ```
//!
//! where `ỹ_t` stacks `K_t` delayed frames of the same bin and `ỹ_f` stacks
//! the `2K_f` neighbouring bins of the same frame. The temporal filters
//! `G_t(ω)` are shared over frames, the frequential filters `G_f(n)` over
//! bins. They are estimated by minimizing `Σ ‖x‖² + λ_z ‖x‖₁` through the
//! split `z = x` with the augmented Lagrangian
//!
//! ```text
//! L = Σ_{n,ω} ‖x‖² + λ_z‖z‖₁ + Re{ηᴴ(x − z)} + ‖x − z‖² / (2ρ_G)
//! ```
//!
//! and a block-coordinate cycle: exact minimization in `G_t` (all bins),
//! exact minimization in `G_f` (all frames, using the fresh `G_t`), a
//! proximal-gradient step in `z`, and a dual ascent step in `η`.
//!
//! With [`Weighting::Power`] the data term becomes `Σ ‖x/σ‖²` with
//! `σ²(n,ω)` the channel-mean power of the current estimate, refreshed
//! during the first iterations (iteratively reweighted least squares, as in
//! WPE). `z` and `η` then live in the whitened domain `x/σ`. Unweighted
//! least squares removes every component of the signal that is predictable
//! from the past, direct speech included; the weights make the fit favour a
//! sparse, non-predictable output instead.
//!
//! Gradient convention: `∇_z V` is the real gradient with respect to
//! `(Re z, Im z)` packed as a complex number, i.e. `2 ∂V/∂z̄`. For
//! `V = Re{ηᴴ(x − z)} + ‖x − z‖²/(2ρ)` this is `−η − (x − z)/ρ`, which is
//! Lipschitz in `z` with constant `1/ρ`; `μ_z = 1/ρ_G` makes the `z` step
//! the exact proximal minimizer.

mod solver;
mod stack;

pub use solver::{
    apply_filters, power_scale, augmented_lagrangian, estimate_filters, update_eta, update_gf, update_gt, update_z,
    z_gradient,
};
pub use stack::{stack_frequential, stack_temporal};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::tf::TfTensor;

/// Per-entry weighting of the data term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain least squares.
    #[default]
    None,
    /// Inverse power of the current estimate.
    Power,
}

/// Solver parameters. `lambda_z` is absolute (same units as `|y|`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MclpConfig {
    /// Temporal prediction order in frames.
    pub k_t: usize,
    /// Frequential prediction order in bins (each side).
    pub k_f: usize,
    /// Prediction delay Δ_t; the first temporal tap is frame `n − Δ_t − 1`.
    pub delta_t: usize,
    pub lambda_z: f64,
    pub rho_g: f64,
    pub mu_z: f64,
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once the relative filter change falls below this.
    pub tol: f64,
    /// Loading factor: `ε = diag_load · trace / dim`.
    pub diag_load: f64,
    pub weighting: Weighting,
    /// Number of iterations that start by refreshing the weights.
    pub reweight_iters: usize,
    /// Power floor relative to the mean power of `y`.
    pub weight_floor: f64,
}

impl Default for MclpConfig {
    fn default() -> Self {
        Self {
            k_t: 10,
            k_f: 2,
            delta_t: 2,
            lambda_z: 0.0,
            rho_g: 1.0,
            mu_z: 1.0,
            gamma: 1.0,
            max_iters: 20,
            tol: 1e-4,
            diag_load: 1e-6,
            weighting: Weighting::None,
            reweight_iters: 20,
            weight_floor: 1e-3,
        }
    }
}

impl MclpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.delta_t < 1 {
            return bad("delta_t must be >= 1".into());
        }
        if !(self.lambda_z >= 0.0) {
            return bad(format!("lambda_z must be >= 0, got {}", self.lambda_z));
        }
        for (name, v) in [("rho_g", self.rho_g), ("mu_z", self.mu_z), ("gamma", self.gamma)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.diag_load > 0.0) {
            return bad("diag_load must be positive".into());
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be >= 0".into());
        }
        if !(self.weight_floor > 0.0) || !self.weight_floor.is_finite() {
            return bad("weight_floor must be positive".into());
        }
        Ok(())
    }

    /// Weight `1/(2ρ_G)` of the quadratic penalty.
    pub(crate) fn penalty(&self) -> f64 {
        0.5 / self.rho_g
    }

    /// Defaults scaled to the data: `λ_z = rel · mean|y|`.
    pub fn with_relative_sparsity(mut self, y: &TfTensor, rel: f64) -> Self {
        self.lambda_z = rel * y.mean_magnitude();
        self
    }
}

/// Temporal filters per bin and frequential filters per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPathFilters {
    /// `gt[ω]` is `K_t·M × M`; block `k` (rows `(k−1)M..kM`) weights frame
    /// `n − Δ_t − k`.
    pub gt: Vec<CMatrix>,
    /// `gf[n]` is `(2K_f+1)·M × M`; block `j + K_f` weights bin `ω + j`. The
    /// centre block is always zero.
    pub gf: Vec<CMatrix>,
    pub mics: usize,
    pub k_t: usize,
    pub k_f: usize,
    pub delta_t: usize,
}

impl DualPathFilters {
    pub fn zeros(mics: usize, frames: usize, bins: usize, k_t: usize, k_f: usize, delta_t: usize) -> Self {
        Self {
            gt: vec![CMatrix::zeros(k_t * mics, mics); bins],
            gf: vec![CMatrix::zeros((2 * k_f + 1) * mics, mics); frames],
            mics,
            k_t,
            k_f,
            delta_t,
        }
    }

    pub fn frames(&self) -> usize {
        self.gf.len()
    }

    pub fn bins(&self) -> usize {
        self.gt.len()
    }

    pub(crate) fn check_against(&self, y: &TfTensor) -> Result<()> {
        let m = self.mics;
        let ok = y.mics() == m
            && y.frames() == self.frames()
            && y.bins() == self.bins()
            && self.gt.iter().all(|g| g.shape() == (self.k_t * m, m))
            && self.gf.iter().all(|g| g.shape() == ((2 * self.k_f + 1) * m, m));
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "filters (M={m}, N={}, Ω={}, K_t={}, K_f={}) do not fit tensor (M={}, N={}, Ω={})",
                self.frames(),
                self.bins(),
                self.k_t,
                self.k_f,
                y.mics(),
                y.frames(),
                y.bins()
            )))
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.gt.iter().chain(&self.gf).map(|g| g.norm_squared()).sum()
    }
}

/// Per-iteration values of the augmented Lagrangian around each block step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDescent {
    pub before: f64,
    pub after_gt: f64,
    pub after_gf: f64,
    pub after_dual: f64,
    /// Weights were refreshed at the start of this iteration, so the filter
    /// steps were ridge-loaded rather than proximal.
    pub reweighted: bool,
}

/// Split variable, multiplier and convergence history.
#[derive(Debug, Clone)]
pub struct MclpState {
    /// Split variable, in the whitened domain `x/σ`.
    pub z: TfTensor,
    pub eta: TfTensor,
    /// `1/σ(n,ω)`, frame-major (`n·Ω + ω`); all ones when unweighted.
    pub scale: Vec<f64>,
    pub iter: usize,
    /// Augmented Lagrangian at the end of each outer iteration.
    pub objective_trace: Vec<f64>,
    pub descent_trace: Vec<BlockDescent>,
    /// `‖x − z‖_F` after each outer iteration.
    pub primal_residual_trace: Vec<f64>,
    pub converged: bool,
    /// Final early-component estimate `x̂`.
    pub estimate: TfTensor,
}

impl MclpState {
    /// Cold start: `z = y`, `η = 0`, unit weights.
    pub fn new(y: &TfTensor) -> Self {
        Self {
            z: y.clone(),
            eta: y.zeros_like(y.mics()),
            scale: vec![1.0; y.frames() * y.bins()],
            iter: 0,
            objective_trace: Vec::new(),
            descent_trace: Vec::new(),
            primal_residual_trace: Vec::new(),
            converged: false,
            estimate: y.clone(),
        }
    }
}
