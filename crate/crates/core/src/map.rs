//! MAP of `prior × N(m, 1/precision)` in one dimension.

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::prior::{Prior, PriorFamily};
use crate::solver::{decreasing_root, MAX_ITER};

/// Stationarity tolerance, relative to `max(1, precision)`.
pub const MAP_TOL: f64 = 1e-10;

/// Grid size of the global pre-scan used for heavy-tailed priors.
pub const HEAVY_TAIL_SCAN_POINTS: usize = 512;

/// Half-width of the pre-scan, in units of `max(scale, σ)`.
pub const HEAVY_TAIL_SCAN_WIDTH: f64 = 6.0;

/// `ln P(x) - precision (x - m)² / 2`, up to a constant.
pub fn log_posterior(belief: &GaussianBelief, prior: &Prior, x: f64) -> f64 {
    let gauss = match belief.mean() {
        Some(m) => -0.5 * belief.precision() * (x - m) * (x - m),
        None => 0.0,
    };
    prior.ln_kernel(x) + gauss
}

/// Distance from zero to the (sub)gradient of the log-posterior at `x`.
pub fn stationarity_residual(belief: &GaussianBelief, prior: &Prior, x: f64) -> f64 {
    let pull = belief.mean().map_or(0.0, |m| belief.precision() * (m - x));
    let (left, right) = prior.score_limits(x);
    let (a, b) = (pull + left.min(right), pull + left.max(right));
    if a <= 0.0 && 0.0 <= b {
        0.0
    } else {
        a.abs().min(b.abs())
    }
}

/// Maximizer of `P(x) · N(x | m, 1/precision)`.
///
/// The normal prior is solved in closed form. Log-concave priors use the
/// bracket `m ± J/precision`, which must contain the root because the prior
/// score is bounded by `J`. Heavy-tailed priors first scan a grid to pick
/// the global mode, since the posterior can be bimodal while the precision
/// is small.
pub fn map_solve(belief: &GaussianBelief, prior: &Prior) -> Result<f64> {
    let Some(m) = belief.mean() else {
        return prior.mode().ok_or(Error::NoMaximizer);
    };
    let prec = belief.precision();

    match prior.family() {
        PriorFamily::Flat => Ok(m),
        PriorFamily::Normal => {
            let w = prior.normal_precision().expect("normal prior");
            Ok((w * prior.location() + belief.weighted_mean_sum()) / (w + prec))
        }
        _ => {
            let tol = MAP_TOL * prec.max(1.0);
            let g = |x: f64| {
                (
                    prec * (m - x) + prior.score(x),
                    -prec + prior.curvature(x),
                )
            };
            if let Some(k) = prior.kink() {
                let (left, right) = prior.score_limits(k);
                let pull = prec * (m - k);
                if pull + right <= 0.0 && 0.0 <= pull + left {
                    return Ok(k);
                }
            }
            if prior.is_log_concave() {
                let j = prior.ratio_bound().expect("bounded score");
                let half = j / prec * (1.0 + 1e-12) + 4.0 * f64::EPSILON * m.abs().max(1.0);
                decreasing_root(g, m - half, m + half, m, tol, MAX_ITER)
            } else {
                let (lo, hi) = scan_bracket(belief, prior, m, &g);
                let x0 = m.clamp(lo, hi);
                decreasing_root(g, lo, hi, x0, tol, MAX_ITER)
            }
        }
    }
}

/// Locate the best grid point of the log-posterior and return a bracket
/// around it on which the gradient changes sign from `+` to `-`.
fn scan_bracket<G>(belief: &GaussianBelief, prior: &Prior, m: f64, g: &G) -> (f64, f64)
where
    G: Fn(f64) -> (f64, f64),
{
    let mode = prior.location();
    let sigma = belief.variance().map(f64::sqrt).unwrap_or(0.0);
    let reach = HEAVY_TAIL_SCAN_WIDTH * prior.scale().max(sigma);
    let lo = mode.min(m) - reach;
    let hi = mode.max(m) + reach;
    let n = HEAVY_TAIL_SCAN_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |j: usize| if j == n - 1 { hi } else { lo + j as f64 * step };

    let best = (0..n)
        .map(|j| (j, log_posterior(belief, prior, grid(j))))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
        .0;

    // The log-posterior increases below min(mode, m) and decreases above
    // max(mode, m), so the scan ends always bracket. Widen towards them
    // until the gradient signs agree.
    let mut a = best.saturating_sub(1);
    while a > 0 && g(grid(a)).0 < 0.0 {
        a -= 1;
    }
    let mut b = (best + 1).min(n - 1);
    while b < n - 1 && g(grid(b)).0 > 0.0 {
        b += 1;
    }
    (grid(a), grid(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(m: f64, prec: f64) -> GaussianBelief {
        GaussianBelief::single(m, prec).unwrap()
    }

    #[test]
    fn normal_prior_precision_weighted_mean() {
        let prior = Prior::normal(65.0, 10.0).unwrap();
        let x = map_solve(&belief(60.0, 1.0), &prior).unwrap();
        let expected = (65.0 * 0.01 + 60.0) / 1.01;
        assert!((x - expected).abs() < 1e-12);
        assert!((x - 60.049505).abs() < 1e-6);
    }

    #[test]
    fn empty_belief_returns_prior_mode() {
        let prior = Prior::normal(65.0, 10.0).unwrap();
        assert_eq!(map_solve(&GaussianBelief::empty(), &prior).unwrap(), 65.0);
        let cauchy = Prior::cauchy(40.0, 3.0).unwrap();
        assert_eq!(map_solve(&GaussianBelief::empty(), &cauchy).unwrap(), 40.0);
        assert!(matches!(
            map_solve(&GaussianBelief::empty(), &Prior::flat()),
            Err(Error::NoMaximizer)
        ));
    }

    #[test]
    fn laplace_stationarity_example() {
        let prior = Prior::laplace(65.0, 10.0).unwrap();
        let x = map_solve(&belief(60.0, 1.0), &prior).unwrap();
        assert!((x - 60.1).abs() < 1e-10, "{x}");
    }

    #[test]
    fn laplace_snaps_to_kink_inside_dead_zone() {
        let prior = Prior::laplace(65.0, 10.0).unwrap();
        // |precision (m - μ)| = 0.05 < J = 0.1
        let x = map_solve(&belief(65.05, 1.0), &prior).unwrap();
        assert_eq!(x, 65.0);
        assert_eq!(stationarity_residual(&belief(65.05, 1.0), &prior, x), 0.0);
    }

    #[test]
    fn flat_prior_returns_gaussian_mean() {
        assert_eq!(map_solve(&belief(12.5, 3.0), &Prior::flat()).unwrap(), 12.5);
    }

    #[test]
    fn stationarity_and_curvature_all_families() {
        let priors = [
            Prior::normal(65.0, 10.0).unwrap(),
            Prior::laplace(65.0, 10.0).unwrap(),
            Prior::logistic(65.0, 4.0).unwrap(),
            Prior::cauchy(65.0, 5.0).unwrap(),
            Prior::student_t(65.0, 5.0, 3.0).unwrap(),
        ];
        for prior in priors {
            for &(m, prec) in &[(60.0, 1.0), (20.0, 0.01), (90.0, 1e-4), (64.0, 1e6), (30.0, 3.3e8)] {
                let b = belief(m, prec);
                let x = map_solve(&b, &prior).unwrap();
                let r = stationarity_residual(&b, &prior, x);
                assert!(r <= MAP_TOL * prec.max(1.0), "{prior} m={m} prec={prec}: residual {r}");
                if prior.is_log_concave() && prior.kink() != Some(x) {
                    assert!(-prec + prior.curvature(x) < 0.0);
                }
            }
        }
    }

    #[test]
    fn cauchy_picks_global_mode_when_bimodal() {
        // low precision, data far from the prior: two local maxima
        let prior = Prior::cauchy(0.0, 1.0).unwrap();
        let b = belief(10.0, 0.05);
        let x = map_solve(&b, &prior).unwrap();
        let grid_best = (0..2_000_001)
            .map(|k| -5.0 + k as f64 * 1e-5 * 10.0)
            .map(|x| (x, log_posterior(&b, &prior, x)))
            .fold((0.0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a })
            .0;
        assert!((x - grid_best).abs() < 1e-3, "{x} vs grid {grid_best}");
    }

    #[test]
    fn correction_bounded_by_variance_times_ratio_bound() {
        for prior in [Prior::laplace(65.0, 2.0).unwrap(), Prior::logistic(65.0, 2.0).unwrap()] {
            let j = prior.ratio_bound().unwrap();
            for &(m, prec) in &[(0.0, 1.0), (100.0, 0.5), (64.0, 30.0), (66.0, 0.01)] {
                let x = map_solve(&belief(m, prec), &prior).unwrap();
                assert!((x - m).abs() <= j / prec + 1e-12 * m.abs().max(1.0));
            }
        }
    }
}
