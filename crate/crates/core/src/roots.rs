//! Bracketed bisection for monotone scalar equations.

pub const DEFAULT_TOL: f64 = 1e-12;
pub const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisects `f` on `[lo, hi]` given `f(lo)` and `f(hi)` of opposite sign.
///
/// Stops when `|f(mid)| <= tol`, when the bracket can no longer be split in
/// floating point, or after `max_iter` steps. With `tol = 0` the bracket is
/// always collapsed to adjacent floats.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, mut f_lo: f64, f_hi: f64, tol: f64, max_iter: usize) -> Root
where
    F: FnMut(f64) -> f64,
{
    debug_assert!(f_lo.signum() != f_hi.signum() || f_lo == 0.0 || f_hi == 0.0);
    let mut best = if f_lo.abs() <= f_hi.abs() {
        Root { x: lo, residual: f_lo, iterations: 0 }
    } else {
        Root { x: hi, residual: f_hi, iterations: 0 }
    };
    if best.residual.abs() <= tol {
        return best;
    }
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            best.iterations = it;
            return best;
        }
        let fm = f(mid);
        if fm.abs() <= best.residual.abs() {
            best = Root { x: mid, residual: fm, iterations: it };
        }
        if fm.abs() <= tol {
            best.iterations = it;
            return best;
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    best.iterations = max_iter;
    best
}

/// Grows `[lo, hi]` around zero by doubling until an increasing `f` changes
/// sign, stopping at `|x| = cap`. Returns the bracket and end values.
pub fn expand_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, cap: f64) -> Option<(f64, f64, f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut f_lo = f(lo);
    while f_lo > 0.0 {
        if lo <= -cap {
            return None;
        }
        hi = lo;
        lo = (2.0 * lo).max(-cap);
        f_lo = f(lo);
    }
    let mut f_hi = f(hi);
    while f_hi < 0.0 {
        if hi >= cap {
            return None;
        }
        lo = hi;
        f_lo = f_hi;
        hi = (2.0 * hi).min(cap);
        f_hi = f(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() {
        return None;
    }
    Some((lo, hi, f_lo, f_hi))
}
