//! Complex soft thresholding, the proximal operator of `τ‖·‖₁`.

use num_complex::Complex64;

/// Shrinks the magnitude of `v` by `tau`, keeping its phase; values with
/// `|v| <= tau` map to zero.
#[inline]
pub fn soft_threshold_scalar(v: Complex64, tau: f64) -> Complex64 {
    debug_assert!(tau >= 0.0);
    let mag = v.norm();
    if mag <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((mag - tau) / mag)
    }
}

/// Elementwise [`soft_threshold_scalar`].
pub fn soft_threshold(v: &[Complex64], tau: f64) -> Vec<Complex64> {
    v.iter().map(|&x| soft_threshold_scalar(x, tau)).collect()
}

/// The three-branch real form: `v - τ` above `τ`, `v + τ` below `-τ`, else 0.
pub fn soft_threshold_real(v: f64, tau: f64) -> f64 {
    if v >= tau {
        v - tau
    } else if v <= -tau {
        v + tau
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn real_branches() {
        assert_eq!(soft_threshold_real(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold_real(1.0, 0.5), 0.5);
        assert_eq!(soft_threshold_real(-1.0, 0.5), -0.5);
        assert_eq!(soft_threshold_scalar(c(0.3), 0.5), c(0.0));
        assert_eq!(soft_threshold_scalar(c(1.0), 0.5), c(0.5));
        assert_eq!(soft_threshold_scalar(c(-1.0), 0.5), c(-0.5));
    }

    #[test]
    fn phase_preserved() {
        let v = Complex64::from_polar(3.0, FRAC_PI_4);
        let s = soft_threshold_scalar(v, 1.0);
        assert!((s - Complex64::from_polar(2.0, FRAC_PI_4)).norm() < 1e-15);
        assert_eq!(soft_threshold_scalar(c(0.0), 0.0), c(0.0));
    }

    fn cvec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| Complex64::new(a, b)), n)
    }

    proptest! {
        #[test]
        fn matches_real_definition(v in -10.0..10.0f64, tau in 0.0..5.0f64) {
            let s = soft_threshold_scalar(c(v), tau);
            prop_assert!((s.re - soft_threshold_real(v, tau)).abs() < 1e-12);
            prop_assert_eq!(s.im, 0.0);
        }

        #[test]
        fn nonexpansive((a, b) in (cvec(6), cvec(6)), tau in 0.0..3.0f64) {
            let sa = soft_threshold(&a, tau);
            let sb = soft_threshold(&b, tau);
            let d_out: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).norm_sqr()).sum();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn never_increases_magnitude(a in cvec(4), tau in 0.0..3.0f64) {
            for (x, s) in a.iter().zip(soft_threshold(&a, tau)) {
                prop_assert!(s.norm() <= x.norm());
            }
        }
    }
}
