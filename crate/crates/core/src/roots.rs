//! Bracketed solvers for increasing functions.

use crate::Scalar;

/// Bisection for an increasing `f` with `f(lo) <= target <= f(hi)`.
/// Stops once the bracket is narrower than `tol`.
pub(crate) fn bisect<T: Scalar>(f: impl Fn(T) -> T, target: T, mut lo: T, mut hi: T, tol: T) -> T {
    let half = T::lit(0.5);
    // 200 halvings exhaust any f64 bracket
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + (hi - lo) * half;
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + (hi - lo) * half
}

/// Newton iteration kept inside a shrinking bracket, falling back to bisection
/// whenever a step leaves it. Converges relative to the size of the root, so
/// preimages very close to 0 are resolved to full precision.
pub(crate) fn newton_bracketed<T: Scalar>(
    f_df: impl Fn(T) -> (T, T),
    target: T,
    mut lo: T,
    mut hi: T,
    guess: T,
) -> T {
    let half = T::lit(0.5);
    let rel = T::epsilon() * T::lit(8.0);
    let mut x = if guess > lo && guess < hi {
        guess
    } else {
        lo + (hi - lo) * half
    };
    for _ in 0..100 {
        let (fx, dfx) = f_df(x);
        let r = fx - target;
        if r == T::zero() {
            return x;
        }
        if r < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let step = r / dfx;
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = lo + (hi - lo) * half;
        }
        let moved = (next - x).abs();
        x = next;
        if moved <= rel * x.abs() || hi - lo <= rel * hi.abs() {
            break;
        }
    }
    x
}
