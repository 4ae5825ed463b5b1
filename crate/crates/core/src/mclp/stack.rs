use num_complex::Complex64;

use crate::tf::TfTensor;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Frame index `n - delta_t - k` for lag `k` (1-based), if it exists.
#[inline]
pub(crate) fn temporal_source(n: usize, delta_t: usize, k: usize) -> Option<usize> {
    n.checked_sub(delta_t + k)
}

/// Bin index `ω + j` for frequency offset `j`, if it exists.
#[inline]
pub(crate) fn frequential_source(w: usize, j: isize, bins: usize) -> Option<usize> {
    let s = w as isize + j;
    (s >= 0 && (s as usize) < bins).then_some(s as usize)
}

/// Offsets `-K_f..=K_f` without the masked lag-0 block, in block order.
pub(crate) fn frequential_offsets(k_f: usize) -> impl Iterator<Item = isize> {
    let k = k_f as isize;
    (-k..=k).filter(|&j| j != 0)
}

/// Delayed temporal stack `[y(n-Δ-1); …; y(n-Δ-K_t)]` of length `K_t·M`.
/// Frames before the start of the signal contribute zero blocks.
pub fn stack_temporal(y: &TfTensor, n: usize, w: usize, delta_t: usize, k_t: usize) -> Vec<Complex64> {
    let m = y.mics();
    let mut out = vec![ZERO; k_t * m];
    for k in 1..=k_t {
        if let Some(src) = temporal_source(n, delta_t, k) {
            out[(k - 1) * m..k * m].copy_from_slice(y.snapshot(src, w));
        }
    }
    out
}

/// Wide-band stack `[y(n,ω-K_f); …; y(n,ω); …; y(n,ω+K_f)]` of length
/// `(2K_f+1)·M`. Bins outside the spectrum give zero blocks and the centre
/// block `y(n,ω)` is masked to zero so that a bin is never predicted from
/// itself.
pub fn stack_frequential(y: &TfTensor, n: usize, w: usize, k_f: usize) -> Vec<Complex64> {
    let m = y.mics();
    let mut out = vec![ZERO; (2 * k_f + 1) * m];
    for (block, j) in (-(k_f as isize)..=k_f as isize).enumerate() {
        if j == 0 {
            continue;
        }
        if let Some(src) = frequential_source(w, j, y.bins()) {
            out[block * m..(block + 1) * m].copy_from_slice(y.snapshot(n, src));
        }
    }
    out
}
