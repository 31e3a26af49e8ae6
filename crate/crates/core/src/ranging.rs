//! One-way distance bounds and the multilateration solve.
//!
//! A bound is `c * (t_m - t_s)`: the signed emission time against the local
//! receipt time. Delay can only grow it. The solver treats bounds as range
//! targets and minimizes `Σ (‖x − s_i‖ − d_i)²` with a Levenberg-damped
//! Gauss–Newton iteration started at the station centroid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::authsig::StationId;
use crate::geom::{Dims, Point};
use crate::timebase::Instant;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RangingError {
    #[error("broadcast time {t_s} is after receipt time {t_m}")]
    FutureTimestamp { t_s: Instant, t_m: Instant },
    #[error("{have} observations cannot fix a {dims} position (need {need})")]
    Underdetermined {
        have: usize,
        need: usize,
        dims: Dims,
    },
    #[error("solver did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("degenerate geometry (condition number {condition:e})")]
    DegenerateGeometry { condition: f64 },
    #[error("observation {index} does not match the requested dimensions")]
    DimensionMismatch { index: usize },
    #[error("observation {index} has an invalid bound {bound}")]
    InvalidBound { index: usize, bound: f64 },
}

/// Upper bound on the distance to a station, from its signed broadcast time
/// and the local receipt time.
pub fn distance_bound(t_s: Instant, t_m: Instant, c: f64) -> Result<f64, RangingError> {
    if t_s > t_m {
        return Err(RangingError::FutureTimestamp { t_s, t_m });
    }
    Ok(c * (t_m - t_s).as_secs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeObservation {
    pub station_id: StationId,
    pub station_pos: Point,
    pub bound: f64,
}

/// A solved position with its uncertainty estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fix {
    pub position: Point,
    /// Scalar uncertainty, `sqrt(σ² · trace((JᵀJ)⁻¹))` in meters.
    pub error_range: f64,
    /// Signed `‖x − s_i‖ − d_i` at the solution, in observation order.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when `‖Jᵀr‖∞ ≤ gradient_tol · max(1, ‖r‖)`.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Condition numbers of `JᵀJ` (and of the station scatter) above this are degenerate.
    pub max_condition: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gradient_tol: 1e-9,
            max_iterations: 100,
            initial_damping: 1e-3,
            max_condition: 1e12,
        }
    }
}

// Beyond this the damped step is pure gradient descent of negligible length.
const MAX_DAMPING: f64 = 1e16;

/// Sum of squared range residuals at `x`.
pub fn objective(obs: &[RangeObservation], x: &Point) -> f64 {
    obs.iter()
        .map(|o| {
            let r = x.distance(&o.station_pos) - o.bound;
            r * r
        })
        .sum()
}

fn residuals_and_jacobian(obs: &[RangeObservation], x: &Point) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.dims().count();
    let mut r = DVector::zeros(obs.len());
    let mut j = DMatrix::zeros(obs.len(), n);
    for (i, o) in obs.iter().enumerate() {
        let d = x.sub(&o.station_pos);
        let dist = x.distance(&o.station_pos);
        r[i] = dist - o.bound;
        // At a station the range term has no direction; its row is left zero.
        if dist > 1e-12 {
            for k in 0..n {
                j[(i, k)] = d[k] / dist;
            }
        }
    }
    (r, j)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_observations(obs: &[RangeObservation], dims: Dims) -> Result<(), RangingError> {
    if obs.len() < dims.simplex_size() {
        return Err(RangingError::Underdetermined {
            have: obs.len(),
            need: dims.simplex_size(),
            dims,
        });
    }
    for (index, o) in obs.iter().enumerate() {
        if o.station_pos.dims() != dims || !o.station_pos.is_finite() {
            return Err(RangingError::DimensionMismatch { index });
        }
        if !(o.bound.is_finite() && o.bound >= 0.0) {
            return Err(RangingError::InvalidBound {
                index,
                bound: o.bound,
            });
        }
    }
    Ok(())
}

/// Rejects station sets that are collinear (2D) or coplanar (3D).
fn check_station_spread(
    obs: &[RangeObservation],
    dims: Dims,
    max_condition: f64,
) -> Result<Point, RangingError> {
    let stations: Vec<Point> = obs.iter().map(|o| o.station_pos).collect();
    let centroid = Point::centroid(&stations).expect("non-empty");
    let n = dims.count();
    let mut scatter = DMatrix::zeros(n, n);
    for s in &stations {
        let d = s.sub(&centroid);
        for a in 0..n {
            for b in 0..n {
                scatter[(a, b)] += d[a] * d[b];
            }
        }
    }
    let condition = condition_number(&scatter);
    if condition > max_condition {
        return Err(RangingError::DegenerateGeometry { condition });
    }
    Ok(centroid)
}

/// Multilaterates a position from range bounds with the default solver settings.
pub fn solve_position(obs: &[RangeObservation], dims: Dims) -> Result<Fix, RangingError> {
    solve_position_with(obs, dims, &SolverConfig::default())
}

pub fn solve_position_with(
    obs: &[RangeObservation],
    dims: Dims,
    cfg: &SolverConfig,
) -> Result<Fix, RangingError> {
    check_observations(obs, dims)?;
    let mut x = check_station_spread(obs, dims, cfg.max_condition)?;
    let n = dims.count();

    let (mut r, mut j) = residuals_and_jacobian(obs, &x);
    let mut cost = r.norm_squared();
    let mut damping = cfg.initial_damping;

    for iteration in 0..=cfg.max_iterations {
        let g = j.transpose() * &r;
        if g.amax() <= cfg.gradient_tol * r.norm().max(1.0) {
            return finish(x, r, j, dims, iteration, cfg);
        }
        if iteration == cfg.max_iterations {
            break;
        }
        let jtj = j.transpose() * &j;
        loop {
            let damped = &jtj + DMatrix::identity(n, n) * damping;
            let step = damped
                .cholesky()
                .map(|ch| ch.solve(&(-&g)))
                .unwrap_or_else(|| -&g / damping);
            let mut dir = [0.0; 3];
            dir[..n].copy_from_slice(step.as_slice());
            let candidate = x.offset(&dir, 1.0);
            let (r_new, j_new) = residuals_and_jacobian(obs, &candidate);
            let cost_new = r_new.norm_squared();
            if cost_new < cost {
                x = candidate;
                r = r_new;
                j = j_new;
                cost = cost_new;
                damping = (damping / 10.0).max(1e-15);
                break;
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                // No descent left at working precision: a stationary point.
                return finish(x, r, j, dims, iteration + 1, cfg);
            }
        }
    }
    Err(RangingError::NoConvergence {
        iterations: cfg.max_iterations,
    })
}

fn finish(
    position: Point,
    r: DVector<f64>,
    j: DMatrix<f64>,
    dims: Dims,
    iterations: usize,
    cfg: &SolverConfig,
) -> Result<Fix, RangingError> {
    let residuals: Vec<f64> = r.iter().copied().collect();
    // Stations spread fine but the fix sits where they all line up (far
    // outside the array): the position is unconstrained along one axis.
    let error_range = match error_range_with(&residuals, &j, dims, cfg.max_condition) {
        Err(RangingError::DegenerateGeometry { .. }) => f64::INFINITY,
        other => other?,
    };
    Ok(Fix {
        position,
        error_range,
        residuals,
        iterations,
    })
}

/// `sqrt(σ² · trace((JᵀJ)⁻¹))` with `σ² = Σr² / max(1, n − dims)`.
///
/// `jacobian` is the `n × dims` matrix of range-residual gradients at the
/// solution.
pub fn error_range(
    residuals: &[f64],
    jacobian: &DMatrix<f64>,
    dims: Dims,
) -> Result<f64, RangingError> {
    error_range_with(
        residuals,
        jacobian,
        dims,
        SolverConfig::default().max_condition,
    )
}

fn error_range_with(
    residuals: &[f64],
    jacobian: &DMatrix<f64>,
    dims: Dims,
    max_condition: f64,
) -> Result<f64, RangingError> {
    let jtj = jacobian.transpose() * jacobian;
    let condition = condition_number(&jtj);
    if condition > max_condition {
        return Err(RangingError::DegenerateGeometry { condition });
    }
    let inv = jtj.try_inverse().ok_or(RangingError::DegenerateGeometry {
        condition: f64::INFINITY,
    })?;
    let dof = residuals.len().saturating_sub(dims.count()).max(1) as f64;
    let sigma2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    Ok((sigma2 * inv.trace()).sqrt())
}

/// Range-residual Jacobian at `x`, exposed for callers that want to
/// recompute the error range.
pub fn jacobian_at(obs: &[RangeObservation], x: &Point) -> DMatrix<f64> {
    residuals_and_jacobian(obs, x).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::Span;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs_from(stations: &[Point], bounds: &[f64]) -> Vec<RangeObservation> {
        stations
            .iter()
            .zip(bounds)
            .enumerate()
            .map(|(i, (s, &b))| RangeObservation {
                station_id: StationId::from_label(&format!("S{i}")).unwrap(),
                station_pos: *s,
                bound: b,
            })
            .collect()
    }

    fn corner_stations() -> Vec<Point> {
        vec![
            Point::new2(0.0, 0.0),
            Point::new2(4.0, 0.0),
            Point::new2(0.0, 4.0),
        ]
    }

    #[test]
    fn distance_bound_examples() {
        let t = Instant::from_secs(5.0);
        assert_eq!(distance_bound(t, t, 3e8).unwrap(), 0.0);
        let later = t + Span::from_secs(1e-6);
        assert!((distance_bound(t, later, 3e8).unwrap() - 300.0).abs() < 1e-9);
        assert!(matches!(
            distance_bound(later, t, 3e8),
            Err(RangingError::FutureTimestamp { .. })
        ));
    }

    #[test]
    fn exact_bounds_recover_truth() {
        let bounds = [2f64.sqrt(), 10f64.sqrt(), 10f64.sqrt()];
        let fix = solve_position(&obs_from(&corner_stations(), &bounds), Dims::Two).unwrap();
        assert!(fix.position.distance(&Point::new2(1.0, 1.0)) < 1e-6);
        assert!(fix.error_range < 1e-6);
        assert_eq!(fix.residuals.len(), 3);
    }

    #[test]
    fn truth_at_a_station() {
        let bounds = [0.0, 4.0, 4.0];
        let fix = solve_position(&obs_from(&corner_stations(), &bounds), Dims::Two).unwrap();
        assert!(fix.position.distance(&Point::new2(0.0, 0.0)) < 1e-6);
    }

    #[test]
    fn too_few_observations() {
        let s = corner_stations();
        assert!(matches!(
            solve_position(&obs_from(&s[..2], &[1.0, 1.0]), Dims::Two),
            Err(RangingError::Underdetermined {
                have: 2,
                need: 3,
                ..
            })
        ));
    }

    #[test]
    fn collinear_stations_are_degenerate() {
        let s = vec![
            Point::new2(0.0, 0.0),
            Point::new2(1.0, 1.0),
            Point::new2(2.0, 2.0),
        ];
        assert!(matches!(
            solve_position(&obs_from(&s, &[1.0, 1.0, 1.0]), Dims::Two),
            Err(RangingError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn dims_mismatch_and_bad_bounds() {
        let s = corner_stations();
        assert!(matches!(
            solve_position(&obs_from(&s, &[1.0, 1.0, 1.0]), Dims::Three),
            Err(RangingError::Underdetermined { .. })
        ));
        let mut o = obs_from(&s, &[1.0, 1.0, 1.0]);
        o[1].bound = f64::NAN;
        assert!(matches!(
            solve_position(&o, Dims::Two),
            Err(RangingError::InvalidBound { index: 1, .. })
        ));
    }

    #[test]
    fn zero_residuals_give_zero_error_range() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        assert_eq!(error_range(&[0.0, 0.0, 0.0], &j, Dims::Two).unwrap(), 0.0);
    }

    #[test]
    fn singular_jacobian_is_degenerate() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        assert!(matches!(
            error_range(&[1.0, 1.0, 1.0], &j, Dims::Two),
            Err(RangingError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn error_range_scales_linearly_with_residuals() {
        let j = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8, -0.8, 0.6]);
        let r = [0.3, -0.1, 0.25, 0.05];
        let base = error_range(&r, &j, Dims::Two).unwrap();
        for k in [0.5, 2.0, 17.0] {
            let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
            let e = error_range(&scaled, &j, Dims::Two).unwrap();
            assert!((e - k * base).abs() <= 1e-12 * k * base);
        }
    }

    #[test]
    fn uniform_inflation_gives_large_error_range() {
        let truth = Point::new2(1.0, 1.0);
        let s = corner_stations();
        let bounds: Vec<f64> = s.iter().map(|p| p.distance(&truth) + 100.0).collect();
        let o = obs_from(&s, &bounds);
        let fix = solve_position(&o, Dims::Two).unwrap();
        assert!(fix.error_range > 10.0, "error range {}", fix.error_range);
        // Recompute with the formula at the returned optimum.
        let j = jacobian_at(&o, &fix.position);
        let again = error_range(&fix.residuals, &j, Dims::Two).unwrap();
        assert!((again - fix.error_range).abs() < 1e-9);
        // Independent least-squares solve from the same start lands at
        // (73.849, 73.849) with error range 94.1658 m.
        assert!((fix.position.x() - 73.8492).abs() < 1e-3);
        assert!((fix.error_range - 94.1658).abs() < 1e-3);
    }

    #[test]
    fn solver_is_deterministic() {
        let s = corner_stations();
        let o = obs_from(&s, &[1.5, 3.2, 3.1]);
        assert_eq!(solve_position(&o, Dims::Two), solve_position(&o, Dims::Two));
    }

    #[test]
    fn exact_bounds_in_three_dimensions() {
        let s = vec![
            Point::new3(0.0, 0.0, 0.0),
            Point::new3(10.0, 0.0, 0.0),
            Point::new3(0.0, 10.0, 0.0),
            Point::new3(0.0, 0.0, 10.0),
            Point::new3(10.0, 10.0, 10.0),
        ];
        let truth = Point::new3(2.0, 3.0, 1.5);
        let bounds: Vec<f64> = s.iter().map(|p| p.distance(&truth)).collect();
        let fix = solve_position(&obs_from(&s, &bounds), Dims::Three).unwrap();
        assert!(fix.position.distance(&truth) < 1e-6);
    }

    /// Exhaustive 1 mm grid over the station bounding box.
    fn grid_argmin(o: &[RangeObservation], step: f64) -> (Point, f64) {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for ob in o {
            for k in 0..2 {
                lo[k] = lo[k].min(ob.station_pos.coords()[k]);
                hi[k] = hi[k].max(ob.station_pos.coords()[k]);
            }
        }
        let nx = ((hi[0] - lo[0]) / step).ceil() as usize;
        let ny = ((hi[1] - lo[1]) / step).ceil() as usize;
        let mut best = (Point::new2(lo[0], lo[1]), f64::INFINITY);
        for ix in 0..=nx {
            for iy in 0..=ny {
                let p = Point::new2(lo[0] + ix as f64 * step, lo[1] + iy as f64 * step);
                let f = objective(o, &p);
                if f < best.1 {
                    best = (p, f);
                }
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_grid_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let step = 1e-3;
        let mut checked = 0;
        while checked < 6 {
            let n = rng.gen_range(3..=6);
            let s: Vec<Point> = (0..n)
                .map(|_| Point::new2(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)))
                .collect();
            let truth = Point::new2(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
            let bounds: Vec<f64> = s
                .iter()
                .map(|p| p.distance(&truth) + rng.gen_range(-0.02..0.02))
                .collect();
            let o = obs_from(&s, &bounds);
            let Ok(fix) = solve_position(&o, Dims::Two) else {
                continue;
            };
            let inside_box = (0..2).all(|k| {
                let c = fix.position.coords()[k];
                s.iter().any(|p| p.coords()[k] < c) && s.iter().any(|p| p.coords()[k] > c)
            });
            if !inside_box {
                continue;
            }
            let (grid_best, grid_f) = grid_argmin(&o, step);
            assert!(objective(&o, &fix.position) <= grid_f + 1e-12);
            assert!(
                fix.position.distance(&grid_best) <= 2.0 * step,
                "solver {} grid {}",
                fix.position,
                grid_best
            );
            checked += 1;
        }
    }
}
