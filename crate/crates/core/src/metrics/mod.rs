//! Regret measures and the variation intensity of a system sequence.
//!
//! Comparators take the infimum over a finite grid of parameters. A grid
//! infimum is never below the true one, so every regret reported here is a
//! lower bound on the regret against the full parameter set.

mod sobol;

pub use sobol::{sobol_points, MAX_DIM as SOBOL_MAX_DIM};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::oracles::ideal_gradients_along;
use crate::system::{rollout, sample_ball, sample_unit_direction, ControlSystem, ParameterSet};

/// Points per axis of the tensor grid for `d <= 2`.
pub const TENSOR_GRID_POINTS: usize = 101;
/// Sobol points for `3 <= d <= 6`.
pub const SOBOL_GRID_POINTS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub static_regret: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive_regret: Option<f64>,
    /// Inclusive interval `[t1, t2]` attaining the adaptive regret.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive_interval: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_regret: Option<f64>,
    pub online_cost: f64,
    pub best_fixed_cost: f64,
    pub best_fixed_theta: Vec<f64>,
    pub grid_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicRegretReport {
    pub regret: f64,
    /// `Σ_t ‖θ̃_t − θ̃_{t−1}‖`.
    pub comparator_path_length: f64,
    pub comparator: Vec<Vec<f64>>,
}

fn check_table(costs: &[f64], table: &[Vec<f64>]) -> Result<usize> {
    check_dim("surrogate table rows", costs.len(), table.len())?;
    let grid = table.first().map_or(0, Vec::len);
    if grid == 0 {
        return Err(Error::EmptyGrid);
    }
    for row in table {
        check_dim("surrogate table row", grid, row.len())?;
    }
    Ok(grid)
}

/// Whole-horizon regret and the index of the best grid point.
pub fn static_regret(costs: &[f64], table: &[Vec<f64>]) -> Result<(f64, usize, f64)> {
    let grid = check_table(costs, table)?;
    let mut totals = vec![0.0; grid];
    for row in table {
        for (tot, v) in totals.iter_mut().zip(row) {
            *tot += v;
        }
    }
    let (best, best_total) = totals
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (g, v)| if v < acc.1 { (g, v) } else { acc });
    Ok((costs.iter().sum::<f64>() - best_total, best, best_total))
}

/// Worst interval regret over all `O(T²)` intervals, using per-grid-point
/// prefix sums. Returns the value and the attaining interval.
pub fn adaptive_regret(costs: &[f64], table: &[Vec<f64>]) -> Result<(f64, (usize, usize))> {
    let grid = check_table(costs, table)?;
    let t_len = costs.len();
    let mut online = vec![0.0; t_len + 1];
    let mut prefix = vec![vec![0.0; grid]; t_len + 1];
    for t in 0..t_len {
        online[t + 1] = online[t] + costs[t];
        let (head, tail) = prefix.split_at_mut(t + 1);
        for ((next, prev), v) in tail[0].iter_mut().zip(&head[t]).zip(&table[t]) {
            *next = prev + v;
        }
    }
    let per_start: Vec<(f64, (usize, usize))> = (0..t_len)
        .into_par_iter()
        .map(|t1| {
            let mut best = (f64::NEG_INFINITY, (t1, t1));
            for t2 in t1..t_len {
                let (hi, lo) = (&prefix[t2 + 1], &prefix[t1]);
                let comparator = hi.iter().zip(lo).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
                let value = online[t2 + 1] - online[t1] - comparator;
                if value > best.0 {
                    best = (value, (t1, t2));
                }
            }
            best
        })
        .collect();
    Ok(per_start
        .into_iter()
        .fold((f64::NEG_INFINITY, (0, 0)), |acc, v| if v.0 > acc.0 { v } else { acc }))
}

/// Static and adaptive regret against the grid whose surrogate costs fill `table[t][g]`.
pub fn static_and_adaptive_regret(costs: &[f64], table: &[Vec<f64>], grid: &[Vec<f64>]) -> Result<RegretReport> {
    let mut report = static_only_report(costs, table, grid)?;
    let (value, interval) = adaptive_regret(costs, table)?;
    report.adaptive_regret = Some(value);
    report.adaptive_interval = Some(interval);
    Ok(report)
}

/// Report with the adaptive fields left empty, for horizons where the
/// quadratic interval scan is too slow.
pub fn static_only_report(costs: &[f64], table: &[Vec<f64>], grid: &[Vec<f64>]) -> Result<RegretReport> {
    let (value, best, best_total) = static_regret(costs, table)?;
    check_dim("grid length", table[0].len(), grid.len())?;
    Ok(RegretReport {
        static_regret: value,
        adaptive_regret: None,
        adaptive_interval: None,
        local_regret: None,
        online_cost: costs.iter().sum(),
        best_fixed_cost: best_total,
        best_fixed_theta: grid[best].clone(),
        grid_size: grid.len(),
    })
}

/// `Σ_t ‖∇F_t(θ_t)‖²`, summed in time order.
pub fn local_regret<S: ControlSystem + ?Sized>(system: &S, thetas: &[Vec<f64>]) -> Result<f64> {
    Ok(ideal_gradients_along(system, thetas)?
        .iter()
        .map(|g| linalg::dot(g, g))
        .sum())
}

/// Online cost minus the cost of replaying a caller-chosen comparator sequence.
pub fn dynamic_regret<S: ControlSystem + ?Sized>(
    costs: &[f64],
    comparator: &[Vec<f64>],
    system: &S,
) -> Result<DynamicRegretReport> {
    check_dim("comparator length", costs.len(), comparator.len())?;
    let set = system.parameter_set();
    if let Some(t) = comparator.iter().position(|th| !set.contains(th, 1e-9)) {
        return Err(Error::InvalidArgument(format!(
            "comparator leaves the parameter set at t = {t}"
        )));
    }
    let replay = rollout(system, comparator, comparator.len(), false)?;
    let path = comparator.windows(2).map(|w| linalg::dist(&w[1], &w[0])).sum();
    Ok(DynamicRegretReport {
        regret: costs.iter().sum::<f64>() - replay.total_cost(),
        comparator_path_length: path,
        comparator: comparator.to_vec(),
    })
}

/// Radii of the state and input balls over which suprema are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDomain {
    pub state_radius: f64,
    pub input_radius: f64,
    /// Radius around the origin used when the parameter set is unbounded.
    pub parameter_radius: f64,
}

/// Monte-Carlo estimate of
/// `Σ_{t≥1} sup‖g_t − g_{t−1}‖ + sup‖π_t − π_{t−1}‖ + sup|f_t − f_{t−1}|`.
///
/// Half of the state and input samples lie on the sphere of the given radius,
/// where suprema of linear differences are attained.
pub fn variation_intensity<S: ControlSystem + ?Sized, R: Rng + ?Sized>(
    system: &S,
    steps: usize,
    samples: usize,
    domain: SampleDomain,
    rng: &mut R,
) -> Result<f64> {
    if samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 samples, got {samples}"
        )));
    }
    if steps > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "requested {steps} steps but system horizon is {}",
            system.horizon()
        )));
    }
    let dims = system.dims();
    let set = system.parameter_set();
    let draw = |dim: usize, radius: f64, i: usize, rng: &mut R| {
        if i.is_multiple_of(2) {
            linalg::scaled(radius, &sample_unit_direction(rng, dim))
        } else {
            sample_ball(rng, dim, radius)
        }
    };
    let mut points = Vec::with_capacity(samples);
    for i in 0..samples {
        let x = draw(dims.n, domain.state_radius, i, rng);
        let u = draw(dims.m, domain.input_radius, i, rng);
        let theta = match set.sample_uniform(rng) {
            Some(th) => th,
            None => set.project(&sample_ball(rng, dims.d, domain.parameter_radius))?,
        };
        points.push((x, u, theta));
    }
    let per_step: Vec<f64> = (1..steps)
        .into_par_iter()
        .map(|t| {
            let (mut dg, mut dpi, mut df) = (0.0f64, 0.0f64, 0.0f64);
            for (x, u, theta) in &points {
                dg = dg.max(linalg::dist(&system.dynamics(t, x, u), &system.dynamics(t - 1, x, u)));
                dpi = dpi.max(linalg::dist(
                    &system.policy(t, x, theta),
                    &system.policy(t - 1, x, theta),
                ));
                df = df.max((system.cost(t, x, u) - system.cost(t - 1, x, u)).abs());
            }
            dg + dpi + df
        })
        .collect();
    Ok(per_step.iter().sum())
}

/// Least-squares slope of `log regret` against `log T`.
pub fn regret_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(_, value)) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::NonPositiveRegret { value });
    }
    if points.iter().any(|p| !(p.0 > 0.0)) {
        return Err(Error::InvalidArgument("horizons must be positive".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, r)| (t.ln(), r.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("horizons must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

/// Bounding box used for grid construction.
fn grid_bounds(set: &ParameterSet) -> Result<(Vec<f64>, Vec<f64>)> {
    match set {
        ParameterSet::WholeSpace { .. } => Err(Error::InvalidArgument(
            "cannot grid an unbounded parameter set; supply a box".into(),
        )),
        ParameterSet::Box { lo, hi } => Ok((lo.clone(), hi.clone())),
        ParameterSet::Ball { center, radius } => Ok((
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )),
    }
}

/// Default comparator grid: a 101-point tensor grid per axis for `d <= 2`,
/// 512 Sobol points for `d <= 6`. Points are projected into the set.
pub fn default_grid(set: &ParameterSet) -> Result<Vec<Vec<f64>>> {
    let d = set.dim();
    let (lo, hi) = grid_bounds(set)?;
    let unit: Vec<Vec<f64>> = match d {
        1 => (0..TENSOR_GRID_POINTS)
            .map(|i| vec![i as f64 / (TENSOR_GRID_POINTS - 1) as f64])
            .collect(),
        2 => {
            let axis = |i: usize| i as f64 / (TENSOR_GRID_POINTS - 1) as f64;
            (0..TENSOR_GRID_POINTS)
                .flat_map(|i| (0..TENSOR_GRID_POINTS).map(move |j| vec![axis(i), axis(j)]))
                .collect()
        }
        3..=SOBOL_MAX_DIM => sobol_points(d, SOBOL_GRID_POINTS)?,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "grid comparators are limited to d <= {SOBOL_MAX_DIM}, got {d}"
            )))
        }
    };
    unit.into_iter()
        .map(|p| {
            let theta: Vec<f64> = p
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(s, (l, h))| l + s * (h - l))
                .collect();
            set.project(&theta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_fig2_env, Fig2Options, LinearFeedbackEnv};
    use crate::linalg::Matrix;
    use crate::oracles::surrogate_table;
    use crate::rng;
    use crate::system::rollout_constant;
    use crate::test_oracles::brute_force_adaptive_regret;

    #[test]
    fn hand_filled_three_step_table() {
        let costs = [1.0, 2.0, 0.5];
        let table = vec![vec![0.5, 1.5], vec![2.5, 0.5], vec![1.0, 1.0]];
        // intervals: [0]=0.5 [1]=1.5 [2]=-0.5 [0,1]=1.0 [1,2]=1.0 [0,2]=0.5
        let (value, interval) = adaptive_regret(&costs, &table).unwrap();
        assert!((value - 1.5).abs() < 1e-15);
        assert_eq!(interval, (1, 1));
        let (st, best, _) = static_regret(&costs, &table).unwrap();
        assert!((st - 0.5).abs() < 1e-15);
        assert_eq!(best, 1);
        assert_eq!(value, brute_force_adaptive_regret(&costs, &table));
    }

    #[test]
    fn adaptive_matches_brute_force_on_random_tables() {
        let mut stream = rng::stream(1, "test/regret");
        for _ in 0..200 {
            let t_len = stream.random_range(1..=30);
            let grid = stream.random_range(1..=5);
            let costs: Vec<f64> = (0..t_len).map(|_| stream.random_range(0.0..3.0)).collect();
            let table: Vec<Vec<f64>> = (0..t_len)
                .map(|_| (0..grid).map(|_| stream.random_range(0.0..3.0)).collect())
                .collect();
            let fast = adaptive_regret(&costs, &table).unwrap().0;
            let slow = brute_force_adaptive_regret(&costs, &table);
            assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()), "{fast} vs {slow}");
            let st = static_regret(&costs, &table).unwrap().0;
            assert!(fast >= st);
        }
    }

    #[test]
    fn refining_grid_never_lowers_regret() {
        let mut stream = rng::stream(2, "test/refine");
        let costs: Vec<f64> = (0..20).map(|_| stream.random_range(0.0..3.0)).collect();
        let table: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| stream.random_range(0.0..3.0)).collect())
            .collect();
        let coarse: Vec<Vec<f64>> = table.iter().map(|r| r[..3].to_vec()).collect();
        assert!(static_regret(&costs, &table).unwrap().0 >= static_regret(&costs, &coarse).unwrap().0);
        assert!(adaptive_regret(&costs, &table).unwrap().0 >= adaptive_regret(&costs, &coarse).unwrap().0);
    }

    #[test]
    fn playing_the_best_grid_point_gives_zero_regret() {
        let env = make_fig2_env(120, 3, &Fig2Options::default()).unwrap();
        let grid = default_grid(&env.parameter_set()).unwrap();
        let table = surrogate_table(&env, &grid, 120).unwrap();
        let (_, best, _) = static_regret(&vec![0.0; 120], &table).unwrap();
        let costs = rollout_constant(&env, &grid[best], 120, false).unwrap().costs();
        let report = static_and_adaptive_regret(&costs, &table, &grid).unwrap();
        assert_eq!(report.static_regret, 0.0);
        assert!(report.adaptive_regret.unwrap() >= 0.0);
        assert_eq!(report.best_fixed_theta, grid[best]);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(static_regret(&[1.0], &[vec![]]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn dynamic_regret_against_own_history_is_zero() {
        let env = make_fig2_env(60, 3, &Fig2Options::default()).unwrap();
        let thetas: Vec<Vec<f64>> = (0..60).map(|t| vec![if t < 30 { 0.2 } else { 0.9 }]).collect();
        let traj = rollout(&env, &thetas, 60, false).unwrap();
        let report = dynamic_regret(&traj.costs(), &thetas, &env).unwrap();
        assert_eq!(report.regret, 0.0);
        assert!((report.comparator_path_length - 0.7).abs() < 1e-15);
    }

    #[test]
    fn dynamic_regret_switching_comparator_by_hand() {
        // x' = x + u + w, u = −k x, f = x² + u², x0 = 1, w = 0
        let env = LinearFeedbackEnv::scalar(1.0, 1.0, 1.0, 1.0, vec![0.0; 4], 1.0, ParameterSet::cube(1, 0.0, 1.0));
        let comparator = vec![vec![0.5], vec![0.5], vec![1.0], vec![1.0]];
        // x: 1, 0.5, 0.25, 0 ; f: 1.25, 0.3125, 0.125, 0
        let costs = [2.0, 2.0, 2.0, 2.0];
        let report = dynamic_regret(&costs, &comparator, &env).unwrap();
        assert!((report.regret - (8.0 - 1.6875)).abs() < 1e-15);
    }

    #[test]
    fn constant_comparator_equals_static_regret_at_that_point() {
        let env = make_fig2_env(80, 5, &Fig2Options::default()).unwrap();
        let grid = vec![vec![0.3], vec![0.8]];
        let table = surrogate_table(&env, &grid, 80).unwrap();
        let costs = rollout_constant(&env, &[0.55], 80, false).unwrap().costs();
        let dynamic = dynamic_regret(&costs, &vec![vec![0.8]; 80], &env).unwrap();
        let total_at: f64 = table.iter().map(|r| r[1]).sum();
        assert!((dynamic.regret - (costs.iter().sum::<f64>() - total_at)).abs() < 1e-12);
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let sq: Vec<(f64, f64)> = [1e3, 4e3, 1.6e4].iter().map(|&t: &f64| (t, 3.0 * t.sqrt())).collect();
        assert!((regret_slope(&sq).unwrap() - 0.5).abs() < 1e-12);
        let lin: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0].iter().map(|&t| (t, 2.0 * t)).collect();
        assert!((regret_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            regret_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(Error::NonPositiveRegret { .. })
        ));
    }

    #[test]
    fn time_invariant_system_has_zero_variation() {
        let env = LinearFeedbackEnv::scalar(0.9, 1.0, 1.0, 1.0, vec![0.0; 50], 0.0, ParameterSet::cube(1, 0.0, 1.0));
        let domain = SampleDomain {
            state_radius: 2.0,
            input_radius: 1.0,
            parameter_radius: 1.0,
        };
        let v = variation_intensity(&env, 50, 100, domain, &mut rng::stream(0, "test")).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn drifting_linear_map_variation() {
        let delta = 0.01;
        let a: Vec<Matrix> = (0..40).map(|t| Matrix::scalar(0.5 + delta * t as f64)).collect();
        let env = LinearFeedbackEnv::new(
            a,
            Matrix::scalar(1.0),
            Matrix::scalar(1.0),
            Matrix::scalar(1.0),
            vec![vec![0.0]; 40],
            vec![0.0],
            ParameterSet::cube(1, 0.0, 1.0),
        )
        .unwrap();
        let radius = 3.0;
        let domain = SampleDomain {
            state_radius: radius,
            input_radius: 1.0,
            parameter_radius: 1.0,
        };
        let v = variation_intensity(&env, 40, 200, domain, &mut rng::stream(0, "test")).unwrap();
        let analytic = 39.0 * delta * radius;
        assert!((v - analytic).abs() <= 0.1 * analytic, "{v} vs {analytic}");
    }

    #[test]
    fn default_grid_sizes() {
        assert_eq!(default_grid(&ParameterSet::cube(1, 0.0, 1.0)).unwrap().len(), 101);
        assert_eq!(default_grid(&ParameterSet::cube(2, 0.0, 1.0)).unwrap().len(), 101 * 101);
        assert_eq!(default_grid(&ParameterSet::cube(4, 0.0, 1.0)).unwrap().len(), 512);
        assert!(default_grid(&ParameterSet::cube(7, 0.0, 1.0)).is_err());
        assert!(default_grid(&ParameterSet::whole_space(1)).is_err());
    }
}
