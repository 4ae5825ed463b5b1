use log::debug;
use num_complex::Complex64;
use rayon::prelude::*;

use super::stack::{frequential_offsets, frequential_source, temporal_source};
use super::{BlockDescent, DualPathFilters, MclpConfig, MclpState, Weighting};
use crate::error::{Error, Result};
use crate::linalg::{fill_lower, her_upper, loading, CMatrix, LoadedSystem};
use crate::prox::soft_threshold_scalar;
use crate::tf::TfTensor;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

// ---------------------------------------------------------------------------
// Predictions and residual

/// `G_t(ω)ᴴ ỹ_t(n,ω)` for every frame of bin `w`, frame-major `N·M`.
fn predict_temporal_bin(y: &TfTensor, g: &CMatrix, w: usize, delta_t: usize, k_t: usize) -> Vec<Complex64> {
    let m = y.mics();
    let mut out = vec![ZERO; y.frames() * m];
    for n in 0..y.frames() {
        let p = &mut out[n * m..(n + 1) * m];
        for k in 1..=k_t {
            let Some(src) = temporal_source(n, delta_t, k) else { break };
            let ys = y.snapshot(src, w);
            let row0 = (k - 1) * m;
            for (i, pi) in p.iter_mut().enumerate() {
                let col = g.column(i);
                for (j, yj) in ys.iter().enumerate() {
                    *pi += col[row0 + j].conj() * yj;
                }
            }
        }
    }
    out
}

/// `G_f(n)ᴴ ỹ_f(n,ω)` for every bin of frame `n`, bin-major `Ω·M`.
fn predict_frequential_frame(y: &TfTensor, g: &CMatrix, n: usize, k_f: usize) -> Vec<Complex64> {
    let m = y.mics();
    let bins = y.bins();
    let mut out = vec![ZERO; bins * m];
    for w in 0..bins {
        let p = &mut out[w * m..(w + 1) * m];
        for j in frequential_offsets(k_f) {
            let Some(src) = frequential_source(w, j, bins) else { continue };
            let ys = y.snapshot(n, src);
            let row0 = (j + k_f as isize) as usize * m;
            for (i, pi) in p.iter_mut().enumerate() {
                let col = g.column(i);
                for (jj, yj) in ys.iter().enumerate() {
                    *pi += col[row0 + jj].conj() * yj;
                }
            }
        }
    }
    out
}

fn predict_temporal(y: &TfTensor, f: &DualPathFilters) -> TfTensor {
    let m = y.mics();
    let mut out = y.zeros_like(m);
    if f.k_t == 0 {
        return out;
    }
    let per_bin: Vec<Vec<Complex64>> = (0..y.bins())
        .into_par_iter()
        .map(|w| predict_temporal_bin(y, &f.gt[w], w, f.delta_t, f.k_t))
        .collect();
    for (w, p) in per_bin.iter().enumerate() {
        for n in 0..y.frames() {
            out.snapshot_mut(n, w).copy_from_slice(&p[n * m..(n + 1) * m]);
        }
    }
    out
}

fn predict_frequential(y: &TfTensor, f: &DualPathFilters) -> TfTensor {
    let mut out = y.zeros_like(y.mics());
    if f.k_f == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(y.bins() * y.mics())
        .enumerate()
        .for_each(|(n, frame)| frame.copy_from_slice(&predict_frequential_frame(y, &f.gf[n], n, f.k_f)));
    out
}

fn residual(y: &TfTensor, pt: &TfTensor, pf: &TfTensor) -> TfTensor {
    let mut x = y.clone();
    for ((xv, a), b) in x.as_mut_slice().iter_mut().zip(pt.as_slice()).zip(pf.as_slice()) {
        *xv = *xv - a - b;
    }
    x
}

/// Early-component estimate `x̂ = y − G_tᴴ ỹ_t − G_fᴴ ỹ_f` for all `(n, ω)`.
pub fn apply_filters(y: &TfTensor, filters: &DualPathFilters) -> Result<TfTensor> {
    filters.check_against(y)?;
    let pt = predict_temporal(y, filters);
    let pf = predict_frequential(y, filters);
    Ok(residual(y, &pt, &pf))
}

/// Augmented Lagrangian of the split problem, using the split variable,
/// multiplier and weights held in `state`.
pub fn augmented_lagrangian(y: &TfTensor, filters: &DualPathFilters, state: &MclpState, cfg: &MclpConfig) -> Result<f64> {
    filters.check_against(y)?;
    check_state(y, state)?;
    let pt = predict_temporal(y, filters);
    let pf = predict_frequential(y, filters);
    Ok(lagrangian_from(y, &pt, &pf, state, cfg))
}

fn check_state(y: &TfTensor, state: &MclpState) -> Result<()> {
    let n = y.as_slice().len();
    if state.z.as_slice().len() != n || state.eta.as_slice().len() != n || state.scale.len() != y.frames() * y.bins() {
        return Err(Error::DimensionMismatch("solver state does not fit the observation tensor".into()));
    }
    Ok(())
}

fn lagrangian_from(y: &TfTensor, pt: &TfTensor, pf: &TfTensor, state: &MclpState, cfg: &MclpConfig) -> f64 {
    let c = cfg.penalty();
    let m = y.mics();
    fn chunks(t: &TfTensor) -> Vec<&[Complex64]> {
        t.as_slice().chunks(t.mics()).collect()
    }
    let (ys, ps, fs, zs, es) = (chunks(y), chunks(pt), chunks(pf), chunks(&state.z), chunks(&state.eta));
    (0..ys.len())
        .map(|e| {
            let s = state.scale[e];
            (0..m)
                .map(|i| {
                    let x = (ys[e][i] - ps[e][i] - fs[e][i]) * s;
                    let (zv, ev) = (zs[e][i], es[e][i]);
                    let d = x - zv;
                    x.norm_sqr() + cfg.lambda_z * zv.norm() + (ev.conj() * d).re + c * d.norm_sqr()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Whitening scale `1/σ` with `σ²(n,ω) = max(mean_m |x|², floor · p_ref)`,
/// multiplied by `√p_ref` so that whitened values keep the units of `x`.
pub fn power_scale(x: &TfTensor, p_ref: f64, floor: f64) -> Vec<f64> {
    let m = x.mics();
    if !(p_ref > 0.0) {
        return vec![1.0; x.frames() * x.bins()];
    }
    x.as_slice()
        .chunks(m)
        .map(|v| {
            let p = v.iter().map(|c| c.norm_sqr()).sum::<f64>() / m as f64;
            (p_ref / p.max(floor * p_ref)).sqrt()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Normal-equation systems

/// `(1 + 1/(2ρ)) Σ_n s² ỹ_t ỹ_tᴴ` for bin `w`.
fn temporal_gram(y: &TfTensor, w: usize, scale: &[f64], cfg: &MclpConfig) -> CMatrix {
    let m = y.mics();
    let d = cfg.k_t * m;
    let mut a = CMatrix::zeros(d, d);
    let mut buf = vec![ZERO; d];
    for n in 0..y.frames() {
        let s = scale[n * y.bins() + w];
        buf.iter_mut().for_each(|v| *v = ZERO);
        for k in 1..=cfg.k_t {
            if let Some(src) = temporal_source(n, cfg.delta_t, k) {
                for (b, v) in buf[(k - 1) * m..k * m].iter_mut().zip(y.snapshot(src, w)) {
                    *b = v * s;
                }
            }
        }
        her_upper(&mut a, &buf);
    }
    fill_lower(&mut a);
    a * Complex64::new(1.0 + cfg.penalty(), 0.0)
}

/// Reduced wide-band stack of bin `w` at frame `n`: the `2K_f` non-centre
/// blocks only.
fn reduced_frequential(y: &TfTensor, n: usize, w: usize, k_f: usize, buf: &mut [Complex64]) {
    let m = y.mics();
    for (b, j) in frequential_offsets(k_f).enumerate() {
        let dst = &mut buf[b * m..(b + 1) * m];
        match frequential_source(w, j, y.bins()) {
            Some(src) => dst.copy_from_slice(y.snapshot(n, src)),
            None => dst.iter_mut().for_each(|v| *v = ZERO),
        }
    }
}

/// `(1 + 1/(2ρ)) Σ_ω s² ỹ_f ỹ_fᴴ` for frame `n` over the non-centre blocks.
fn frequential_gram(y: &TfTensor, n: usize, scale: &[f64], cfg: &MclpConfig) -> CMatrix {
    let d = 2 * cfg.k_f * y.mics();
    let mut a = CMatrix::zeros(d, d);
    let mut buf = vec![ZERO; d];
    for w in 0..y.bins() {
        reduced_frequential(y, n, w, cfg.k_f, &mut buf);
        let s = scale[n * y.bins() + w];
        buf.iter_mut().for_each(|v| *v *= s);
        her_upper(&mut a, &buf);
    }
    fill_lower(&mut a);
    a * Complex64::new(1.0 + cfg.penalty(), 0.0)
}

fn factor(a: CMatrix, cfg: &MclpConfig, what: &'static str, index: usize) -> Result<LoadedSystem> {
    let eps = loading(&a, cfg.diag_load);
    LoadedSystem::new(a, eps).ok_or(Error::IllConditioned { what, index })
}

/// Right-hand side weight `v = s ((1+c) s (y − p_other) + η/2 − c z)`.
#[inline]
fn rhs_weight(c: f64, s: f64, y: Complex64, other: Complex64, eta: Complex64, z: Complex64) -> Complex64 {
    ((y - other) * ((1.0 + c) * s) + eta * 0.5 - z * c) * s
}

/// Proximally loaded exact block minimizer for `G_t(ω)`:
/// `((1+c)A + εI) G = Σ_n ỹ_t vᴴ + ε G_prev`.
#[allow(clippy::too_many_arguments)]
fn gt_step(
    y: &TfTensor,
    sys: &LoadedSystem,
    pf: &TfTensor,
    z: &TfTensor,
    eta: &TfTensor,
    scale: &[f64],
    cfg: &MclpConfig,
    w: usize,
    g_prev: &CMatrix,
) -> CMatrix {
    let m = y.mics();
    let c = cfg.penalty();
    let mut rhs = g_prev * Complex64::new(sys.epsilon, 0.0);
    let mut v = vec![ZERO; m];
    for n in 0..y.frames() {
        let (ys, ps, zs, es) = (y.snapshot(n, w), pf.snapshot(n, w), z.snapshot(n, w), eta.snapshot(n, w));
        let s = scale[n * y.bins() + w];
        for i in 0..m {
            v[i] = rhs_weight(c, s, ys[i], ps[i], es[i], zs[i]).conj();
        }
        for k in 1..=cfg.k_t {
            let Some(src) = temporal_source(n, cfg.delta_t, k) else { break };
            let yt = y.snapshot(src, w);
            for (jcol, vj) in v.iter().enumerate() {
                let mut col = rhs.column_mut(jcol);
                for (r, yr) in yt.iter().enumerate() {
                    col[(k - 1) * m + r] += yr * vj;
                }
            }
        }
    }
    sys.solve(&rhs)
}

/// Frequential counterpart of [`gt_step`] for frame `n`, using the current
/// temporal predictions. Returns the full-size matrix with a zero centre
/// block.
#[allow(clippy::too_many_arguments)]
fn gf_step(
    y: &TfTensor,
    sys: &LoadedSystem,
    pt: &TfTensor,
    z: &TfTensor,
    eta: &TfTensor,
    scale: &[f64],
    cfg: &MclpConfig,
    n: usize,
    g_prev: &CMatrix,
) -> CMatrix {
    let m = y.mics();
    let k_f = cfg.k_f;
    let d = 2 * k_f * m;
    let c = cfg.penalty();
    let mut rhs = CMatrix::zeros(d, m);
    for (b, j) in frequential_offsets(k_f).enumerate() {
        let full = (j + k_f as isize) as usize * m;
        for col in 0..m {
            for r in 0..m {
                rhs[(b * m + r, col)] = g_prev[(full + r, col)] * sys.epsilon;
            }
        }
    }
    let mut buf = vec![ZERO; d];
    let mut v = vec![ZERO; m];
    for w in 0..y.bins() {
        let (ys, ps, zs, es) = (y.snapshot(n, w), pt.snapshot(n, w), z.snapshot(n, w), eta.snapshot(n, w));
        let s = scale[n * y.bins() + w];
        for i in 0..m {
            v[i] = rhs_weight(c, s, ys[i], ps[i], es[i], zs[i]).conj();
        }
        reduced_frequential(y, n, w, k_f, &mut buf);
        for (jcol, vj) in v.iter().enumerate() {
            let mut col = rhs.column_mut(jcol);
            for (r, br) in buf.iter().enumerate() {
                col[r] += br * vj;
            }
        }
    }
    let reduced = sys.solve(&rhs);
    let mut out = CMatrix::zeros((2 * k_f + 1) * m, m);
    for (b, j) in frequential_offsets(k_f).enumerate() {
        let full = (j + k_f as isize) as usize * m;
        for col in 0..m {
            for r in 0..m {
                out[(full + r, col)] = reduced[(b * m + r, col)];
            }
        }
    }
    out
}

/// `∇_z V = −η − (x − z)/ρ` (real gradient packed as complex).
pub fn z_gradient(x: &[Complex64], z: &[Complex64], eta: &[Complex64], rho: f64) -> Vec<Complex64> {
    x.iter()
        .zip(z)
        .zip(eta)
        .map(|((xv, zv), ev)| -ev - (xv - zv) / rho)
        .collect()
}

#[inline]
fn z_step_into(x: &[Complex64], z: &mut [Complex64], eta: &[Complex64], cfg: &MclpConfig) {
    let tau = cfg.lambda_z / cfg.mu_z;
    for ((zv, xv), ev) in z.iter_mut().zip(x).zip(eta) {
        let grad = -ev - (xv - *zv) / cfg.rho_g;
        *zv = soft_threshold_scalar(*zv - grad / cfg.mu_z, tau);
    }
}

#[inline]
fn eta_step_into(x: &[Complex64], z: &[Complex64], eta: &mut [Complex64], gamma: f64) {
    for ((ev, xv), zv) in eta.iter_mut().zip(x).zip(z) {
        *ev += (xv - zv) * gamma;
    }
}

// ---------------------------------------------------------------------------
// Single-block operations

/// Exact (proximally loaded) minimizer of the augmented Lagrangian over
/// `G_t(ω)` with `G_f`, `z` and `η` fixed. `filters.gt[w]` is the anchor.
pub fn update_gt(y: &TfTensor, filters: &DualPathFilters, state: &MclpState, cfg: &MclpConfig, w: usize) -> Result<CMatrix> {
    filters.check_against(y)?;
    check_state(y, state)?;
    let sys = factor(temporal_gram(y, w, &state.scale, cfg), cfg, "bin", w)?;
    let pf = predict_frequential(y, filters);
    Ok(gt_step(y, &sys, &pf, &state.z, &state.eta, &state.scale, cfg, w, &filters.gt[w]))
}

/// Exact (proximally loaded) minimizer over `G_f(n)`; `filters.gt` plays the
/// role of the freshly updated temporal filters.
pub fn update_gf(y: &TfTensor, filters: &DualPathFilters, state: &MclpState, cfg: &MclpConfig, n: usize) -> Result<CMatrix> {
    filters.check_against(y)?;
    check_state(y, state)?;
    if cfg.k_f == 0 {
        return Ok(CMatrix::zeros(y.mics(), y.mics()));
    }
    let sys = factor(frequential_gram(y, n, &state.scale, cfg), cfg, "frame", n)?;
    let pt = predict_temporal(y, filters);
    Ok(gf_step(y, &sys, &pt, &state.z, &state.eta, &state.scale, cfg, n, &filters.gf[n]))
}

/// Whitened residual `s(n,ω) x(n,ω)`.
fn residual_at(y: &TfTensor, filters: &DualPathFilters, s: f64, n: usize, w: usize) -> Vec<Complex64> {
    let m = y.mics();
    let pt = if filters.k_t > 0 {
        predict_temporal_bin(y, &filters.gt[w], w, filters.delta_t, filters.k_t)[n * m..(n + 1) * m].to_vec()
    } else {
        vec![ZERO; m]
    };
    let pf = if filters.k_f > 0 {
        predict_frequential_frame(y, &filters.gf[n], n, filters.k_f)[w * m..(w + 1) * m].to_vec()
    } else {
        vec![ZERO; m]
    };
    y.snapshot(n, w)
        .iter()
        .zip(pt.iter().zip(&pf))
        .map(|(yv, (a, b))| (yv - a - b) * s)
        .collect()
}

/// Proximal-gradient step `z ← S_{λ/μ}(z − ∇_z V / μ)` at `(n, ω)`.
pub fn update_z(
    y: &TfTensor,
    filters: &DualPathFilters,
    state: &MclpState,
    cfg: &MclpConfig,
    n: usize,
    w: usize,
) -> Vec<Complex64> {
    let x = residual_at(y, filters, state.scale[n * y.bins() + w], n, w);
    let mut z = state.z.snapshot(n, w).to_vec();
    z_step_into(&x, &mut z, state.eta.snapshot(n, w), cfg);
    z
}

/// Dual ascent `η ← η + γ (x − z)` at `(n, ω)` with the given `z`, starting
/// from the multiplier in `state`.
pub fn update_eta(
    y: &TfTensor,
    filters: &DualPathFilters,
    state: &MclpState,
    z: &[Complex64],
    cfg: &MclpConfig,
    n: usize,
    w: usize,
) -> Vec<Complex64> {
    let x = residual_at(y, filters, state.scale[n * y.bins() + w], n, w);
    let mut out = state.eta.snapshot(n, w).to_vec();
    eta_step_into(&x, z, &mut out, cfg.gamma);
    out
}

// ---------------------------------------------------------------------------
// Full solver

fn check_finite(value: f64, step: &'static str, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { step, iteration, value })
    }
}

fn factor_all(y: &TfTensor, scale: &[f64], cfg: &MclpConfig) -> Result<(Vec<LoadedSystem>, Vec<LoadedSystem>)> {
    let sys_t = if cfg.k_t > 0 {
        (0..y.bins())
            .into_par_iter()
            .map(|w| factor(temporal_gram(y, w, scale, cfg), cfg, "bin", w))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let sys_f = if cfg.k_f > 0 {
        (0..y.frames())
            .into_par_iter()
            .map(|n| factor(frequential_gram(y, n, scale, cfg), cfg, "frame", n))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok((sys_t, sys_f))
}

/// Replaces the weights, carrying `z` and `η` over so that `z/s` and `η s`
/// stay fixed.
fn rescale_state(state: &mut MclpState, scale: Vec<f64>, m: usize) {
    for (e, (&old, &new)) in state.scale.iter().zip(&scale).enumerate() {
        let r = new / old;
        state.z.as_mut_slice()[e * m..(e + 1) * m].iter_mut().for_each(|v| *v *= r);
        state.eta.as_mut_slice()[e * m..(e + 1) * m].iter_mut().for_each(|v| *v /= r);
    }
    state.scale = scale;
}

/// Runs the block cycle `G_t → G_f → z → η` until `max_iters` or until the
/// relative filter change drops below `tol`.
///
/// The normal-equation matrices depend only on `y` and the weights, so they
/// are factored once per weight update. Loading is applied proximally
/// (`ε ‖G − G_prev‖²`), so every filter sweep is monotone in the augmented
/// Lagrangian and the fixed points are those of the unloaded problem. Weight
/// refreshes change the objective itself and use a plain ridge in that
/// iteration; such iterations are flagged in the descent trace.
pub fn estimate_filters(y: &TfTensor, cfg: &MclpConfig) -> Result<(DualPathFilters, MclpState)> {
    cfg.validate()?;
    if !y.is_finite() {
        return Err(Error::InvalidSignal("observation tensor has non-finite entries".into()));
    }
    let m = y.mics();
    let mut filters = DualPathFilters::zeros(m, y.frames(), y.bins(), cfg.k_t, cfg.k_f, cfg.delta_t);
    let mut state = MclpState::new(y);
    if cfg.k_t == 0 && cfg.k_f == 0 {
        state.converged = true;
        return Ok((filters, state));
    }

    let weighted = cfg.weighting == Weighting::Power && cfg.reweight_iters > 0;
    let p_ref = y.energy() / y.as_slice().len() as f64;
    if weighted {
        rescale_state(&mut state, power_scale(y, p_ref, cfg.weight_floor), m);
    }
    let (mut sys_t, mut sys_f) = factor_all(y, &state.scale, cfg)?;

    let mut pt = y.zeros_like(m);
    let mut pf = y.zeros_like(m);
    let mut current = lagrangian_from(y, &pt, &pf, &state, cfg);

    for iter in 1..=cfg.max_iters {
        // After a weight refresh the filter steps are ridge-loaded towards
        // zero instead of towards the previous iterate, which would pin the
        // poorly determined directions to a fit of the old weights.
        let reweighted = weighted && iter <= cfg.reweight_iters;
        if reweighted && iter > 1 {
            let x = residual(y, &pt, &pf);
            rescale_state(&mut state, power_scale(&x, p_ref, cfg.weight_floor), m);
            (sys_t, sys_f) = factor_all(y, &state.scale, cfg)?;
            current = lagrangian_from(y, &pt, &pf, &state, cfg);
        }
        let anchor = |g: &CMatrix| if reweighted { CMatrix::zeros(g.nrows(), g.ncols()) } else { g.clone() };
        let before = current;
        let mut change = 0.0;

        if cfg.k_t > 0 {
            let new_gt: Vec<CMatrix> = (0..y.bins())
                .into_par_iter()
                .map(|w| gt_step(y, &sys_t[w], &pf, &state.z, &state.eta, &state.scale, cfg, w, &anchor(&filters.gt[w])))
                .collect();
            change += new_gt.iter().zip(&filters.gt).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
            filters.gt = new_gt;
            pt = predict_temporal(y, &filters);
        }
        let after_gt = check_finite(lagrangian_from(y, &pt, &pf, &state, cfg), "update_gt", iter)?;

        if cfg.k_f > 0 {
            let new_gf: Vec<CMatrix> = (0..y.frames())
                .into_par_iter()
                .map(|n| gf_step(y, &sys_f[n], &pt, &state.z, &state.eta, &state.scale, cfg, n, &anchor(&filters.gf[n])))
                .collect();
            change += new_gf.iter().zip(&filters.gf).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
            filters.gf = new_gf;
            pf = predict_frequential(y, &filters);
        }
        let after_gf = check_finite(lagrangian_from(y, &pt, &pf, &state, cfg), "update_gf", iter)?;

        let mut x = residual(y, &pt, &pf);
        x.as_mut_slice()
            .par_chunks_mut(m)
            .zip(state.scale.par_iter())
            .for_each(|(v, s)| v.iter_mut().for_each(|c| *c *= *s));
        state
            .z
            .as_mut_slice()
            .par_chunks_mut(m)
            .zip(x.as_slice().par_chunks(m))
            .zip(state.eta.as_slice().par_chunks(m))
            .for_each(|((z, x), e)| z_step_into(x, z, e, cfg));
        check_finite(state.z.energy(), "update_z", iter)?;
        eta_step_into(x.as_slice(), state.z.as_slice(), state.eta.as_mut_slice(), cfg.gamma);

        current = check_finite(lagrangian_from(y, &pt, &pf, &state, cfg), "update_eta", iter)?;
        let primal: f64 = x
            .as_slice()
            .iter()
            .zip(state.z.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();

        state.iter = iter;
        state.objective_trace.push(current);
        state.primal_residual_trace.push(primal);
        state.descent_trace.push(BlockDescent {
            before,
            after_gt,
            after_gf,
            after_dual: current,
            reweighted,
        });

        let norm = filters.frobenius_sq();
        let rel = if norm > 0.0 { (change / norm).sqrt() } else { 0.0 };
        debug!("mclp iter {iter}: L = {current:.6e}, primal = {primal:.3e}, rel change = {rel:.3e}");
        let reweight_pending = weighted && iter < cfg.reweight_iters;
        if rel < cfg.tol && !reweight_pending {
            state.converged = true;
            break;
        }
    }

    state.estimate = residual(y, &pt, &pf);
    Ok((filters, state))
}
