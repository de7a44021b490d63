//! Bisection for infima of monotone boundary functions.

/// Relative tolerance on the located infimum.
pub const REL_TOL: f64 = 1e-9;
/// Number of grid points used to confirm monotonicity before solving.
pub const MONOTONE_CHECK_POINTS: usize = 64;
const MAX_ITER: usize = 400;

/// Smallest `x` in `[lo, hi]` with `f(x) ≤ 0`, for `f` nonincreasing with
/// `f(lo) > 0 ≥ f(hi)`. Returns `None` when the bracket does not straddle zero.
pub fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    if !(f(lo) > 0.0) || f(hi) > 0.0 {
        return None;
    }
    for _ in 0..MAX_ITER {
        if hi - lo <= REL_TOL * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Doubles `hi` until `f(hi) ≤ 0`, up to `max_doublings` times.
pub fn expand_upper(f: impl Fn(f64) -> f64, mut hi: f64, max_doublings: usize) -> Option<f64> {
    for _ in 0..=max_doublings {
        if f(hi) <= 0.0 {
            return Some(hi);
        }
        hi *= 2.0;
    }
    None
}

/// True when `f` is nonincreasing on an evenly spaced grid over `[lo, hi)`.
pub fn is_nonincreasing_on(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> bool {
    let n = MONOTONE_CHECK_POINTS;
    let mut prev = f64::INFINITY;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let y = f(x);
        // allow round-off at the 1e-12 level
        if y > prev + 1e-12 * prev.abs().max(1.0) {
            return false;
        }
        prev = y;
    }
    true
}
