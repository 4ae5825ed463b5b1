use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn ula(m: usize) -> ArrayGeometry {
    ArrayGeometry::ula(m, 0.04, [3.0, 3.0, 1.5]).unwrap()
}

/// Plane waves from `doas` with random complex amplitudes plus white noise.
fn plane_wave_tensor(m: usize, frames: usize, doas: &[(f64, f64)], noise: f64, seed: u64) -> (TfTensor, ArrayGeometry) {
    let geom = ula(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = TfTensor::zeros(m, frames, 16, 8, 16000).unwrap();
    let bins = x.bins();
    for b in 0..bins {
        let steer: Vec<_> = doas.iter().map(|&(t, _)| steering_vector(&geom, t, b, bins, 16000.0)).collect();
        for n in 0..frames {
            let amps: Vec<_> = doas.iter().map(|&(_, g)| cn(&mut rng) * g).collect();
            for i in 0..m {
                let v: Complex64 = steer.iter().zip(&amps).map(|(a, s)| a[i] * s).sum::<Complex64>() + cn(&mut rng) * noise;
                x.set(i, n, b, v);
            }
        }
    }
    (x, geom)
}

fn random_tensor(m: usize, frames: usize, seed: u64) -> TfTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = TfTensor::zeros(m, frames, 16, 8, 16000).unwrap();
    x.as_mut_slice().iter_mut().for_each(|v| *v = cn(&mut rng));
    x
}

/// Loaded MPDR `(R + εI)⁻¹a / (aᴴ(R + εI)⁻¹a)` through a generic LU solve.
fn mpdr_oracle(x: &TfTensor, a: &[Complex64], b: usize, diag_load: f64) -> Vec<Complex64> {
    let m = x.mics();
    let mut r = DMatrix::<Complex64>::zeros(m, m);
    for n in 0..x.frames() {
        let v = DMatrix::from_column_slice(m, 1, x.snapshot(n, b));
        r += &v * v.adjoint();
    }
    let tr: f64 = (0..m).map(|i| r[(i, i)].re).sum();
    let eps = if tr > 0.0 { diag_load * tr / m as f64 } else { 1.0 };
    r += DMatrix::identity(m, m) * Complex64::new(eps, 0.0);
    let av = DMatrix::from_column_slice(m, 1, a);
    let ri_a = r.lu().solve(&av).unwrap();
    let denom = (av.adjoint() * &ri_a)[(0, 0)];
    ri_a.iter().map(|v| v / denom.conj()).collect()
}

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
    let n: f64 = b.iter().map(|q| q.norm_sqr()).sum();
    (d / n).sqrt()
}

fn tight() -> BeamConfig {
    BeamConfig { tol: 1e-13, max_outer: 60, ..BeamConfig::default() }
}

#[test]
fn single_mic_weight_is_one() {
    let x = random_tensor(1, 20, 1);
    let geom = ula(1);
    let bw = estimate_weights(&x, 0.3, &geom, &BeamConfig::default()).unwrap();
    assert!(bw.w.iter().all(|w| w == &vec![Complex64::new(1.0, 0.0)]));
    let s = apply_weights(&x, &bw.w).unwrap();
    assert_eq!(s, x);
}

#[test]
fn matches_loaded_mpdr() {
    for seed in 0..3 {
        let (x, geom) = plane_wave_tensor(4, 128, &[(0.4, 1.0), (2.0, 2.0)], 0.3, seed);
        let cfg = tight();
        let bw = estimate_weights(&x, 0.4, &geom, &cfg).unwrap();
        let steer = steering_vectors(&geom, 0.4, x.bins(), 16000);
        for b in 0..x.bins() {
            let err = rel(&bw.w[b], &mpdr_oracle(&x, &steer[b], b, cfg.diag_load));
            assert!(err <= 1e-6, "bin {b}: rel err {err}");
            assert!(bw.constraint_residual[b] <= 1e-6);
        }
    }
}

#[test]
fn nulls_interferer() {
    let (x, geom) = plane_wave_tensor(4, 128, &[(0.5, 1.0), (2.2, 3.0)], 0.01, 7);
    let bw = estimate_weights(&x, 0.5, &geom, &BeamConfig::default()).unwrap();
    // Low bins have too little aperture to separate the two directions.
    for b in 3..x.bins() {
        let p = beampattern(&bw.w[b], &geom, b, x.bins(), 16000, &[0.5, 2.2]);
        assert!((p[0] - 1.0).abs() <= 1e-6);
        assert!(p[1] < 0.2, "bin {b}: interferer gain {}", p[1]);
    }
}

#[test]
fn single_source_passes_undistorted() {
    let (x, geom) = plane_wave_tensor(4, 100, &[(1.1, 1.0)], 0.0, 8);
    let bw = estimate_weights(&x, 1.1, &geom, &BeamConfig::default()).unwrap();
    let s = apply_weights(&x, &bw.w).unwrap();
    let out = s.energy();
    let refp = x.channel(geom.reference_index).energy();
    assert!((out / refp - 1.0).abs() <= 0.01);
}

#[test]
fn silent_input_gives_minimum_norm_solution() {
    let x = TfTensor::zeros(3, 10, 16, 8, 16000).unwrap();
    let geom = ula(3);
    let bw = estimate_weights(&x, 0.7, &geom, &BeamConfig::default()).unwrap();
    let steer = steering_vectors(&geom, 0.7, x.bins(), 16000);
    for b in 0..x.bins() {
        let expect: Vec<Complex64> = steer[b].iter().map(|v| v / 3.0).collect();
        assert!(rel(&bw.w[b], &expect) < 1e-9);
    }
}

#[test]
fn constraint_holds_with_sparsity() {
    let (x, geom) = plane_wave_tensor(4, 64, &[(0.4, 1.0), (2.0, 1.0)], 0.5, 9);
    let cfg = BeamConfig::default().with_relative_sparsity(&x, 0.05);
    let bw = estimate_weights(&x, 0.4, &geom, &cfg).unwrap();
    assert!(bw.constraint_satisfaction() >= 0.99);
}

#[test]
fn apply_weights_basics() {
    let x = random_tensor(3, 6, 2);
    let e1 = vec![vec![Complex64::new(1.0, 0.0), ZERO, ZERO]; x.bins()];
    assert_eq!(apply_weights(&x, &e1).unwrap(), x.channel(0));
    let zero = x.scaled(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w: Vec<Vec<Complex64>> = (0..x.bins()).map(|_| (0..3).map(|_| cn(&mut rng)).collect()).collect();
    assert!(apply_weights(&zero, &w).unwrap().as_slice().iter().all(|v| v.norm() == 0.0));
    // Conjugate-linear in w.
    let alpha = Complex64::new(0.3, -1.2);
    let w2: Vec<Vec<Complex64>> = w.iter().map(|v| v.iter().map(|c| c * alpha).collect()).collect();
    let a = apply_weights(&x, &w).unwrap();
    let b = apply_weights(&x, &w2).unwrap();
    for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((p * alpha.conj() - q).norm() < 1e-12);
    }
    assert!(apply_weights(&x, &w[..2]).is_err());
}

#[test]
fn zw_and_etaw_steps() {
    let x = random_tensor(2, 5, 4);
    let geom = ula(2);
    let steer = steering_vectors(&geom, 0.2, x.bins(), 16000);
    let mut bw = BeamWeights::init(&x, &steer).unwrap();
    let cfg = BeamConfig { lambda_w: 0.4, rho_w: 0.7, mu_w: 2.0, gamma_w: 0.3, ..BeamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = vec![cn(&mut rng), cn(&mut rng)];
    bw.z_w.set(0, 2, 3, cn(&mut rng));
    bw.eta_w.set(0, 2, 3, cn(&mut rng));
    let s = inner(&w, x.snapshot(2, 3));
    let (z, e) = (bw.z_w.get(0, 2, 3), bw.eta_w.get(0, 2, 3));
    let step = z + (e + (s - z) / 0.7) / 2.0;
    let expect = soft_threshold_scalar(step, 0.2);
    let got = update_zw(&x, &w, &bw, &cfg, 2, 3);
    assert!((got - expect).norm() < 1e-14);
    assert!(got.norm() <= step.norm());
    assert!((update_etaw(&x, &w, got, e, &cfg, 2, 3) - (e + (s - got) * 0.3)).norm() < 1e-14);
    assert_eq!(update_etaw(&x, &w, s, e, &cfg, 2, 3), e);
    let g0 = BeamConfig { gamma_w: 0.0, ..cfg.clone() };
    assert_eq!(update_etaw(&x, &w, got, e, &g0, 2, 3), e);

    // All-zero output, multiplier and split stay zero.
    let zx = x.scaled(0.0);
    let zb = BeamWeights::init(&zx, &steer).unwrap();
    assert_eq!(update_zw(&zx, &w, &zb, &cfg, 1, 1), ZERO);
}

#[test]
fn split_is_consistent_without_sparsity() {
    let (x, geom) = plane_wave_tensor(3, 40, &[(0.9, 1.0)], 0.2, 10);
    let bw = estimate_weights(&x, 0.9, &geom, &tight()).unwrap();
    let s = apply_weights(&x, &bw.w).unwrap();
    for (p, q) in s.as_slice().iter().zip(bw.z_w.as_slice()) {
        assert!((p - q).norm() <= 1e-9 * (1.0 + p.norm()));
    }
}

#[test]
fn weight_step_is_stationary() {
    let (x, geom) = plane_wave_tensor(3, 30, &[(0.9, 1.0), (2.5, 1.0)], 0.3, 11);
    let steer = steering_vectors(&geom, 0.9, x.bins(), 16000);
    let mut bw = BeamWeights::init(&x, &steer).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    bw.eta_w.as_mut_slice().iter_mut().for_each(|v| *v = cn(&mut rng) * 0.1);
    bw.eta_1[4] = cn(&mut rng);
    let cfg = BeamConfig { lambda_w: 0.2, max_inner: 1, ..BeamConfig::default() };
    let b = 4;
    let (w, _) = update_w(&x, &steer[b], &bw, &cfg, b).unwrap();
    let z = bin_column(&bw.z_w, b);
    let eta = bin_column(&bw.eta_w, b);
    let tr: f64 = (0..x.frames()).map(|n| x.snapshot(n, b).iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
    let eps = cfg.diag_load * tr / 3.0;
    let obj = |w: &[Complex64]| {
        bin_lagrangian(&x, &steer[b], w, &z, &eta, bw.eta_1[b], &cfg, b) + eps * w.iter().map(|v| v.norm_sqr()).sum::<f64>()
    };
    let f0 = obj(&w);
    for _ in 0..4 {
        let dir: Vec<_> = (0..3).map(|_| cn(&mut rng)).collect();
        let h = 1e-5;
        let wp: Vec<_> = w.iter().zip(&dir).map(|(a, d)| a + d * h).collect();
        let wm: Vec<_> = w.iter().zip(&dir).map(|(a, d)| a - d * h).collect();
        let d = (obj(&wp) - obj(&wm)) / (2.0 * h);
        assert!(d.abs() < 1e-6 * f0.abs().max(1.0), "directional derivative {d}");
    }
}

#[test]
fn rejects_bad_inputs() {
    let x = random_tensor(3, 6, 13);
    assert!(estimate_weights(&x, 0.0, &ula(4), &BeamConfig::default()).is_err());
    let zero_a = vec![vec![ZERO; 3]; x.bins()];
    assert!(estimate_weights_with(&x, &zero_a, &BeamConfig::default()).is_err());
    let bad = BeamConfig { rho_1: 0.0, ..BeamConfig::default() };
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scale_covariant(seed in 0u64..500, c in 0.01..100.0f64, lam in 0.0..0.3f64) {
        let (x, geom) = plane_wave_tensor(3, 24, &[(0.6, 1.0), (2.0, 1.0)], 0.3, seed);
        let cfg = BeamConfig { lambda_w: lam, ..BeamConfig::default() };
        let a = estimate_weights(&x, 0.6, &geom, &cfg).unwrap();
        let cfg_c = BeamConfig { lambda_w: lam * c, ..cfg };
        let b = estimate_weights(&x.scaled(c), 0.6, &geom, &cfg_c).unwrap();
        for (p, q) in a.w.iter().zip(&b.w) {
            prop_assert!(rel(q, p) <= 1e-8);
        }
    }

    #[test]
    fn output_power_near_mpdr(seed in 0u64..500) {
        let (x, geom) = plane_wave_tensor(4, 64, &[(0.6, 1.0), (2.4, 2.0)], 0.3, seed);
        let cfg = BeamConfig::default().with_relative_sparsity(&x, 0.01);
        let bw = estimate_weights(&x, 0.6, &geom, &cfg).unwrap();
        let steer = steering_vectors(&geom, 0.6, x.bins(), 16000);
        let oracle: Vec<_> = (0..x.bins()).map(|b| mpdr_oracle(&x, &steer[b], b, cfg.diag_load)).collect();
        let p_est = apply_weights(&x, &bw.w).unwrap().energy();
        let p_orc = apply_weights(&x, &oracle).unwrap().energy();
        prop_assert!(p_est <= 1.01 * p_orc, "{p_est} vs {p_orc}");
    }
}
