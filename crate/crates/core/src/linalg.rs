//! Small dense Hermitian helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Diagonal loading `ε = factor · trace(A) / dim`; an all-zero matrix gets
/// `ε = 1` so the factorization still exists.
pub fn loading(a: &CMatrix, factor: f64) -> f64 {
    let dim = a.nrows();
    if dim == 0 {
        return 0.0;
    }
    let tr: f64 = (0..dim).map(|i| a[(i, i)].re).sum();
    if tr > 0.0 {
        factor * tr / dim as f64
    } else {
        1.0
    }
}

/// Cholesky factor of a loaded Hermitian matrix, kept for repeated solves.
#[derive(Clone)]
pub struct LoadedSystem {
    chol: Option<Cholesky<Complex64, Dyn>>,
    /// Loading actually added to the diagonal.
    pub epsilon: f64,
}

impl LoadedSystem {
    /// Factors `a + ε I`. Returns `None` when the factorization fails.
    pub fn new(mut a: CMatrix, epsilon: f64) -> Option<Self> {
        let dim = a.nrows();
        if dim == 0 {
            return Some(Self { chol: None, epsilon });
        }
        for i in 0..dim {
            a[(i, i)] += Complex64::new(epsilon, 0.0);
            // Enforce an exactly real diagonal.
            a[(i, i)].im = 0.0;
        }
        Some(Self {
            chol: Some(a.cholesky()?),
            epsilon,
        })
    }

    pub fn solve(&self, rhs: &CMatrix) -> CMatrix {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => rhs.clone(),
        }
    }
}

/// Accumulates `a += v vᴴ` on the upper triangle only; call
/// [`fill_lower`] once accumulation is done.
#[inline]
pub fn her_upper(a: &mut CMatrix, v: &[Complex64]) {
    let d = v.len();
    for j in 0..d {
        let vj = v[j].conj();
        if vj.re == 0.0 && vj.im == 0.0 {
            continue;
        }
        let col = &mut a.as_mut_slice()[j * d..j * d + d];
        for i in 0..=j {
            col[i] += v[i] * vj;
        }
    }
}

/// Mirrors the upper triangle into the lower one.
pub fn fill_lower(a: &mut CMatrix) {
    let d = a.nrows();
    for j in 0..d {
        for i in j + 1..d {
            a[(i, j)] = a[(j, i)].conj();
        }
    }
}
