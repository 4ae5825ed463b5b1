//! Sparse minimum-power distortionless beamformer.
//!
//! Per bin `ω` the weights solve
//!
//! ```text
//! min_w  Σ_n |wᴴx̂(n)|² + λ_w Σ_n |wᴴx̂(n)|   s.t.  wᴴa(θ_s) = 1
//! ```
//!
//! by ADMM on the split `z_w(n) = wᴴx̂(n)` with multipliers `η_w(n)`. The
//! weight step minimizes the augmented Lagrangian with the constraint added
//! as `Re{η₁*(wᴴa − 1)} + |wᴴa − 1|²/(2ρ₁)`; an inner loop updates `η₁`
//! until the constraint holds.
//!
//! `ρ₁` and `γ₁` are relative to the bin's mean channel power
//! `κ = tr(R)/M`: the effective penalty is `ρ₁/κ` and the effective step
//! `γ₁κ`. This keeps the constraint equally tight in loud and quiet bins and
//! makes the weights invariant to scaling `x̂` and `λ_w` together. `z_w` and
//! `η_w` are stored in the units of `x̂`, `η₁` in units of `κ`.

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fill_lower, her_upper, loading, CMatrix, LoadedSystem};
use crate::prox::soft_threshold_scalar;
use crate::room::{steering_vector, ArrayGeometry};
use crate::tf::TfTensor;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Residual `|wᴴa − 1|` accepted as distortionless.
pub const CONSTRAINT_ACCEPT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub lambda_w: f64,
    pub rho_w: f64,
    pub mu_w: f64,
    pub gamma_w: f64,
    pub rho_1: f64,
    pub gamma_1: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative weight change that ends the outer loop.
    pub tol: f64,
    /// Constraint residual that ends the inner loop.
    pub constraint_tol: f64,
    pub diag_load: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            lambda_w: 0.0,
            rho_w: 1.0,
            mu_w: 1.0,
            gamma_w: 1.0,
            rho_1: 1e-3,
            gamma_1: 1e3,
            max_outer: 30,
            max_inner: 10,
            tol: 1e-6,
            constraint_tol: 1e-10,
            diag_load: 1e-6,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda_w >= 0.0) {
            return bad(format!("lambda_w must be >= 0, got {}", self.lambda_w));
        }
        for (name, v) in [
            ("rho_w", self.rho_w),
            ("mu_w", self.mu_w),
            ("gamma_w", self.gamma_w),
            ("rho_1", self.rho_1),
            ("gamma_1", self.gamma_1),
            ("diag_load", self.diag_load),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.max_outer < 1 || self.max_inner < 1 {
            return bad("iteration caps must be >= 1".into());
        }
        if !(self.tol >= 0.0) || !(self.constraint_tol >= 0.0) {
            return bad("tolerances must be >= 0".into());
        }
        Ok(())
    }

    /// `λ_w = rel · mean|x̂|`.
    pub fn with_relative_sparsity(mut self, x: &TfTensor, rel: f64) -> Self {
        self.lambda_w = rel * x.mean_magnitude();
        self
    }

    fn penalty(&self) -> f64 {
        0.5 / self.rho_w
    }
}

/// Weights and ADMM variables for every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    /// `w[ω]`, length `M`.
    pub w: Vec<Vec<Complex64>>,
    /// Split variable `z_w(n, ω)`, single channel.
    pub z_w: TfTensor,
    /// Split multipliers `η_w(n, ω)`, single channel.
    pub eta_w: TfTensor,
    /// Constraint multiplier per bin.
    pub eta_1: Vec<Complex64>,
    /// Outer iterations used per bin.
    pub iters: Vec<usize>,
    /// Final `|wᴴa − 1|` per bin.
    pub constraint_residual: Vec<f64>,
    pub converged: Vec<bool>,
}

impl BeamWeights {
    /// Cold start: `w = a/(aᴴa)`, `z_w = wᴴx̂`, `η_w = 0`, `η₁ = 0`.
    pub fn init(x: &TfTensor, steering: &[Vec<Complex64>]) -> Result<Self> {
        check_steering(x, steering)?;
        let w: Vec<Vec<Complex64>> = steering
            .iter()
            .map(|a| {
                let aa: f64 = a.iter().map(|v| v.norm_sqr()).sum();
                a.iter().map(|v| v / aa).collect()
            })
            .collect();
        let mut z_w = x.zeros_like(1);
        for n in 0..x.frames() {
            for (b, wb) in w.iter().enumerate() {
                z_w.set(0, n, b, inner(wb, x.snapshot(n, b)));
            }
        }
        let bins = x.bins();
        Ok(Self {
            w,
            eta_w: x.zeros_like(1),
            z_w,
            eta_1: vec![ZERO; bins],
            iters: vec![0; bins],
            constraint_residual: vec![0.0; bins],
            converged: vec![false; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.w.len()
    }

    pub fn mics(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    /// Fraction of bins meeting [`CONSTRAINT_ACCEPT`].
    pub fn constraint_satisfaction(&self) -> f64 {
        let ok = self.constraint_residual.iter().filter(|&&r| r <= CONSTRAINT_ACCEPT).count();
        ok as f64 / self.bins().max(1) as f64
    }
}

/// `wᴴv`.
#[inline]
pub(crate) fn inner(w: &[Complex64], v: &[Complex64]) -> Complex64 {
    w.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn check_steering(x: &TfTensor, steering: &[Vec<Complex64>]) -> Result<()> {
    if steering.len() != x.bins() || steering.iter().any(|a| a.len() != x.mics()) {
        return Err(Error::DimensionMismatch(format!(
            "steering vectors ({} bins) do not fit tensor (M={}, Ω={})",
            steering.len(),
            x.mics(),
            x.bins()
        )));
    }
    if steering.iter().any(|a| a.iter().all(|v| v.norm_sqr() == 0.0)) {
        return Err(Error::InvalidConfig("steering vector must be nonzero".into()));
    }
    Ok(())
}

/// Steering vectors `a(θ, ω)` for every bin of `x`.
pub fn steering_vectors(geom: &ArrayGeometry, theta: f64, bins: usize, sample_rate: u32) -> Vec<Vec<Complex64>> {
    (0..bins)
        .map(|b| steering_vector(geom, theta, b, bins, sample_rate as f64))
        .collect()
}

/// Everything about one bin that stays fixed during the iterations.
struct BinSystem {
    /// Factor of `(1+c)R + εI + aaᴴ/(2ρ₁')`.
    sys: LoadedSystem,
    /// Mean channel power `κ`.
    kappa: f64,
}

fn bin_system(x: &TfTensor, a: &[Complex64], cfg: &BeamConfig, b: usize) -> Result<BinSystem> {
    let m = x.mics();
    let mut cov = CMatrix::zeros(m, m);
    for n in 0..x.frames() {
        her_upper(&mut cov, x.snapshot(n, b));
    }
    fill_lower(&mut cov);
    let tr: f64 = (0..m).map(|i| cov[(i, i)].re).sum();
    let kappa = if tr > 0.0 { tr / m as f64 } else { 1.0 };
    let eps = loading(&cov, cfg.diag_load);
    let pen1 = kappa / (2.0 * cfg.rho_1);
    let mut mat = &cov * Complex64::new(1.0 + cfg.penalty(), 0.0);
    for i in 0..m {
        for j in 0..m {
            mat[(i, j)] += a[i] * a[j].conj() * pen1;
        }
    }
    let sys = LoadedSystem::new(mat, eps).ok_or(Error::IllConditioned { what: "bin", index: b })?;
    Ok(BinSystem { sys, kappa })
}

/// Weight update with the inner constraint loop, returning `(w, η₁)`.
#[allow(clippy::too_many_arguments)]
fn w_step(
    x: &TfTensor,
    a: &[Complex64],
    bs: &BinSystem,
    z: &[Complex64],
    eta: &[Complex64],
    eta_1: Complex64,
    cfg: &BeamConfig,
    b: usize,
) -> (Vec<Complex64>, Complex64) {
    let m = x.mics();
    let c = cfg.penalty();
    let mut base = vec![ZERO; m];
    for n in 0..x.frames() {
        let coef = z[n].conj() * c - eta[n].conj() * 0.5;
        for (bv, xv) in base.iter_mut().zip(x.snapshot(n, b)) {
            *bv += xv * coef;
        }
    }
    let pen1 = bs.kappa / (2.0 * cfg.rho_1);
    let step1 = cfg.gamma_1 * bs.kappa;
    let mut eta_1 = eta_1;
    let mut w = Vec::new();
    for _ in 0..cfg.max_inner {
        let coef = Complex64::new(pen1, 0.0) - eta_1.conj() * 0.5;
        let rhs = CMatrix::from_iterator(m, 1, base.iter().zip(a).map(|(bv, av)| bv + av * coef));
        w = bs.sys.solve(&rhs).as_slice().to_vec();
        let r = inner(&w, a) - 1.0;
        eta_1 += r * step1;
        if r.norm() < cfg.constraint_tol {
            break;
        }
    }
    (w, eta_1)
}

#[inline]
fn zw_step(s: Complex64, z: Complex64, eta: Complex64, cfg: &BeamConfig) -> Complex64 {
    let grad = -eta - (s - z) / cfg.rho_w;
    soft_threshold_scalar(z - grad / cfg.mu_w, cfg.lambda_w / cfg.mu_w)
}

fn bin_column(t: &TfTensor, b: usize) -> Vec<Complex64> {
    (0..t.frames()).map(|n| t.get(0, n, b)).collect()
}

fn check_weights(x: &TfTensor, weights: &BeamWeights) -> Result<()> {
    let shape_ok = weights.bins() == x.bins()
        && weights.w.iter().all(|w| w.len() == x.mics())
        && weights.z_w.frames() == x.frames()
        && weights.z_w.bins() == x.bins();
    if shape_ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "weights (M={}, Ω={}) do not fit tensor (M={}, N={}, Ω={})",
            weights.mics(),
            weights.bins(),
            x.mics(),
            x.frames(),
            x.bins()
        )))
    }
}

/// Closed-form weight step at bin `b` (inner `η₁` loop included); returns
/// the new `w` and `η₁`.
pub fn update_w(
    x: &TfTensor,
    a: &[Complex64],
    weights: &BeamWeights,
    cfg: &BeamConfig,
    b: usize,
) -> Result<(Vec<Complex64>, Complex64)> {
    check_weights(x, weights)?;
    if a.len() != x.mics() || a.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::InvalidConfig("steering vector must be nonzero with M entries".into()));
    }
    let bs = bin_system(x, a, cfg, b)?;
    let z = bin_column(&weights.z_w, b);
    let eta = bin_column(&weights.eta_w, b);
    Ok(w_step(x, a, &bs, &z, &eta, weights.eta_1[b], cfg, b))
}

/// `z_w ← S_{λ_w/μ_w}(z_w − ∇V/μ_w)` at `(n, b)` with `∇V = −η_w − (wᴴx̂ − z_w)/ρ_w`.
pub fn update_zw(x: &TfTensor, w: &[Complex64], weights: &BeamWeights, cfg: &BeamConfig, n: usize, b: usize) -> Complex64 {
    zw_step(inner(w, x.snapshot(n, b)), weights.z_w.get(0, n, b), weights.eta_w.get(0, n, b), cfg)
}

/// `η_w ← η_w + γ_w (wᴴx̂ − z_w)` at `(n, b)`.
pub fn update_etaw(
    x: &TfTensor,
    w: &[Complex64],
    z_w: Complex64,
    eta_w: Complex64,
    cfg: &BeamConfig,
    n: usize,
    b: usize,
) -> Complex64 {
    eta_w + (inner(w, x.snapshot(n, b)) - z_w) * cfg.gamma_w
}

struct BinResult {
    w: Vec<Complex64>,
    z: Vec<Complex64>,
    eta: Vec<Complex64>,
    eta_1: Complex64,
    iters: usize,
    residual: f64,
    converged: bool,
}

fn solve_bin(x: &TfTensor, a: &[Complex64], init: &BeamWeights, cfg: &BeamConfig, b: usize) -> Result<BinResult> {
    let frames = x.frames();
    let mut w = init.w[b].clone();
    let mut z = bin_column(&init.z_w, b);
    let mut eta = bin_column(&init.eta_w, b);
    let mut eta_1 = init.eta_1[b];
    let mut iters = 0;
    let mut converged = false;
    if x.mics() == 1 {
        // The constraint alone fixes a single weight.
        let residual = (inner(&w, a) - 1.0).norm();
        return Ok(BinResult { w, z, eta, eta_1, iters, residual, converged: true });
    }
    let bs = bin_system(x, a, cfg, b)?;
    for it in 1..=cfg.max_outer {
        iters = it;
        let (w_new, e1) = w_step(x, a, &bs, &z, &eta, eta_1, cfg, b);
        eta_1 = e1;
        for n in 0..frames {
            let s = inner(&w_new, x.snapshot(n, b));
            z[n] = zw_step(s, z[n], eta[n], cfg);
            eta[n] += (s - z[n]) * cfg.gamma_w;
        }
        let change: f64 = w_new.iter().zip(&w).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = w_new.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        w = w_new;
        if !norm.is_finite() {
            return Err(Error::Divergence { step: "update_w", iteration: it, value: norm });
        }
        let residual = (inner(&w, a) - 1.0).norm();
        if change <= cfg.tol * norm && residual <= CONSTRAINT_ACCEPT {
            converged = true;
            break;
        }
    }
    let residual = (inner(&w, a) - 1.0).norm();
    Ok(BinResult { w, z, eta, eta_1, iters, residual, converged })
}

/// Runs the ADMM iterations independently in every bin.
pub fn estimate_weights_with(x: &TfTensor, steering: &[Vec<Complex64>], cfg: &BeamConfig) -> Result<BeamWeights> {
    cfg.validate()?;
    if !x.is_finite() {
        return Err(Error::InvalidSignal("beamformer input has non-finite entries".into()));
    }
    let mut out = BeamWeights::init(x, steering)?;
    let results: Vec<BinResult> = (0..x.bins())
        .into_par_iter()
        .map(|b| solve_bin(x, &steering[b], &out, cfg, b))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for (b, r) in results.into_iter().enumerate() {
        for n in 0..x.frames() {
            out.z_w.set(0, n, b, r.z[n]);
            out.eta_w.set(0, n, b, r.eta[n]);
        }
        worst = worst.max(r.residual);
        out.w[b] = r.w;
        out.eta_1[b] = r.eta_1;
        out.iters[b] = r.iters;
        out.constraint_residual[b] = r.residual;
        out.converged[b] = r.converged;
    }
    if worst > CONSTRAINT_ACCEPT {
        warn!("distortionless constraint not met: worst |wᴴa − 1| = {worst:.3e}");
    }
    Ok(out)
}

/// [`estimate_weights_with`] using far-field steering towards `theta`.
pub fn estimate_weights(x: &TfTensor, theta: f64, geom: &ArrayGeometry, cfg: &BeamConfig) -> Result<BeamWeights> {
    if geom.num_mics() != x.mics() {
        return Err(Error::DimensionMismatch(format!(
            "geometry has {} mics, tensor has {}",
            geom.num_mics(),
            x.mics()
        )));
    }
    let steering = steering_vectors(geom, theta, x.bins(), x.sample_rate());
    estimate_weights_with(x, &steering, cfg)
}

/// `ŝ(n, ω) = ŵ(ω)ᴴ x̂(n, ω)` as a single-channel tensor.
pub fn apply_weights(x: &TfTensor, w: &[Vec<Complex64>]) -> Result<TfTensor> {
    if w.len() != x.bins() || w.iter().any(|v| v.len() != x.mics()) {
        return Err(Error::DimensionMismatch(format!(
            "weights ({} bins) do not fit tensor (M={}, Ω={})",
            w.len(),
            x.mics(),
            x.bins()
        )));
    }
    let mut out = x.zeros_like(1);
    for n in 0..x.frames() {
        for (b, wb) in w.iter().enumerate() {
            out.set(0, n, b, inner(wb, x.snapshot(n, b)));
        }
    }
    Ok(out)
}

/// Per-bin augmented Lagrangian in original units (diagnostics and tests).
pub fn bin_lagrangian(
    x: &TfTensor,
    a: &[Complex64],
    w: &[Complex64],
    z: &[Complex64],
    eta: &[Complex64],
    eta_1: Complex64,
    cfg: &BeamConfig,
    b: usize,
) -> f64 {
    let m = x.mics();
    let tr: f64 = (0..x.frames()).map(|n| x.snapshot(n, b).iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
    let kappa = if tr > 0.0 { tr / m as f64 } else { 1.0 };
    let mut l = 0.0;
    for n in 0..x.frames() {
        let s = inner(w, x.snapshot(n, b));
        let d = s - z[n];
        l += s.norm_sqr() + cfg.lambda_w * z[n].norm() + (eta[n].conj() * d).re + cfg.penalty() * d.norm_sqr();
    }
    let q = inner(w, a) - 1.0;
    l + (eta_1.conj() * q).re + kappa / (2.0 * cfg.rho_1) * q.norm_sqr()
}

/// `|wᴴa(θ)|` over `thetas` for one bin.
pub fn beampattern(w: &[Complex64], geom: &ArrayGeometry, bin: usize, bins: usize, sample_rate: u32, thetas: &[f64]) -> Vec<f64> {
    thetas
        .iter()
        .map(|&t| inner(w, &steering_vector(geom, t, bin, bins, sample_rate as f64)).norm())
        .collect()
}

#[cfg(test)]
mod tests;
