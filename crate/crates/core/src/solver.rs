//! Safeguarded Newton iteration for the root of a decreasing function.

use crate::error::{Error, Result};

/// Default iteration budget; enough for bisection to exhaust `f64` resolution.
pub const MAX_ITER: usize = 400;

/// Find the root of a strictly decreasing `g` inside `[lo, hi]`.
///
/// `g` returns `(value, derivative)` and must satisfy `g(lo) >= 0 >= g(hi)`.
/// Newton steps from `x0` are taken whenever they stay inside the current
/// bracket and shrink the residual fast enough; otherwise the bracket is
/// bisected. Stops once `|g(x)| <= tol` (followed by one polishing Newton
/// step) or when the bracket collapses to adjacent floats.
pub fn decreasing_root<G>(g: G, lo: f64, hi: f64, x0: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    G: Fn(f64) -> (f64, f64),
{
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let mut x = x0.clamp(lo, hi);
    let (mut gx, mut dg) = g(x);
    let mut step_old = hi - lo;

    for _ in 0..max_iter {
        if gx == 0.0 {
            return Ok(x);
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if gx.abs() <= tol {
            return Ok(polish(&g, x, gx, dg, lo, hi));
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }

        let newton = x - gx / dg;
        let use_newton = dg < 0.0
            && newton > lo
            && newton < hi
            && (gx / dg).abs() * 2.0 <= step_old.abs();
        let next = if use_newton {
            newton
        } else {
            lo + 0.5 * (hi - lo)
        };
        step_old = next - x;
        x = next;
        (gx, dg) = g(x);
        if !gx.is_finite() {
            return Err(Error::SolverFailure {
                lo,
                hi,
                residual: gx,
            });
        }
    }
    Err(Error::SolverFailure {
        lo,
        hi,
        residual: gx,
    })
}

fn polish<G: Fn(f64) -> (f64, f64)>(g: &G, x: f64, gx: f64, dg: f64, lo: f64, hi: f64) -> f64 {
    if dg >= 0.0 {
        return x;
    }
    let cand = x - gx / dg;
    if !(cand >= lo && cand <= hi) {
        return x;
    }
    let (gc, _) = g(cand);
    if gc.abs() <= gx.abs() {
        cand
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root_in_one_step() {
        let r = decreasing_root(|x| (3.0 - 2.0 * x, -2.0), -10.0, 10.0, 0.0, 1e-12, MAX_ITER).unwrap();
        assert_eq!(r, 1.5);
    }

    #[test]
    fn falls_back_to_bisection_on_flat_derivative() {
        // derivative reported as zero everywhere: pure bisection
        let r = decreasing_root(|x| (2.0 - x.powi(3), 0.0), 0.0, 4.0, 0.0, 1e-13, MAX_ITER).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn jump_discontinuity_collapses_bracket() {
        let r = decreasing_root(
            |x| (if x < 1.0 { 1.0 } else { -1.0 }, 0.0),
            0.0,
            3.0,
            0.0,
            1e-12,
            MAX_ITER,
        )
        .unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reports_bracket_on_budget_exhaustion() {
        let err = decreasing_root(|x| (1.0 - x, 0.0), 0.0, 1e6, 0.0, 0.0, 3).unwrap_err();
        match err {
            Error::SolverFailure { lo, hi, .. } => assert!(lo < 1.0 && hi > 1.0),
            e => panic!("unexpected {e}"),
        }
    }
}
