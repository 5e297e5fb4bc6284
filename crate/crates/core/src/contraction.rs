//! Empirical contraction and stability constants of a closed loop.
//!
//! Pairs of trajectories start from nearby states and share one slowly
//! varying parameter sequence. Their separation `‖Δx_t‖` is fitted by an
//! upper envelope `Ĉ ρ̂^t ‖Δx_0‖`. With `eps > 0` the same estimator covers
//! time-varying parameters, so the time-invariant constants never need to be
//! converted symbolically.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{sample_ball, ControlSystem, ParameterSet, DEFAULT_BLOWUP_CAP};

/// Separation growth treated as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1e6;
/// Percentile of per-pair decay rates taken as `ρ̂`.
pub const RATE_PERCENTILE: f64 = 0.99;
/// Separations below this fraction of the state magnitude are round-off and
/// end the usable part of a decay curve.
const RELATIVE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub c_hat: f64,
    pub rho_hat: f64,
    pub r_c_probe: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_s_hat: Option<f64>,
    pub eps: f64,
    pub samples: usize,
}

impl ContractionEstimate {
    /// Envelope value `Ĉ ρ̂^t`.
    pub fn envelope(&self, t: usize) -> f64 {
        self.c_hat * self.rho_hat.powi(t as i32)
    }
}

/// Random walk in `set` whose increments never exceed `eps` in norm.
///
/// The first point is uniform in the set (or its projection of a unit-ball
/// draw when unbounded). An infinite `eps` gives independent draws.
pub fn sample_slow_sequence<R: Rng + ?Sized>(
    set: &ParameterSet,
    eps: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be non-negative, got {eps}")));
    }
    let d = set.dim();
    let fresh = |rng: &mut R| match set.sample_uniform(rng) {
        Some(theta) => Ok(theta),
        None => set.project(&sample_ball(rng, d, 1.0)),
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(len);
    for i in 0..len {
        let next = if i == 0 || eps.is_infinite() {
            fresh(rng)?
        } else if eps == 0.0 {
            out[i - 1].clone()
        } else {
            // projection onto a convex set is non-expansive, so the step stays within eps
            let step = sample_ball(rng, d, eps);
            set.project(&linalg::add(&out[i - 1], &step))?
        };
        out.push(next);
    }
    Ok(out)
}

struct PairDraw {
    start: usize,
    x: Vec<f64>,
    x_alt: Vec<f64>,
    thetas: Vec<Vec<f64>>,
}

fn check_budget<S: ControlSystem + ?Sized>(
    system: &S,
    count: usize,
    min: usize,
    horizon: usize,
    what: &str,
) -> Result<()> {
    if count < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} {what}, got {count}"
        )));
    }
    if horizon < 10 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be at least 10, got {horizon}"
        )));
    }
    if horizon > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds system horizon {}",
            system.horizon()
        )));
    }
    Ok(())
}

fn closed_loop_step<S: ControlSystem + ?Sized>(system: &S, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
    system.dynamics(t, x, &system.policy(t, x, theta))
}

/// Log-separations `r_t = ln(‖Δx_t‖/‖Δx_0‖)` for `t = 0..` until the curve
/// hits the round-off floor or the horizon ends.
fn decay_curve<S: ControlSystem + ?Sized>(system: &S, draw: &PairDraw) -> Result<Vec<f64>> {
    let (mut x, mut y) = (draw.x.clone(), draw.x_alt.clone());
    let initial = linalg::dist(&x, &y);
    let mut curve = vec![0.0];
    for (i, theta) in draw.thetas.iter().enumerate() {
        let t = draw.start + i;
        x = closed_loop_step(system, t, &x, theta);
        y = closed_loop_step(system, t, &y, theta);
        let sep = linalg::dist(&x, &y);
        let growth = sep / initial;
        if !growth.is_finite() || growth > DIVERGENCE_GROWTH {
            return Err(Error::Divergence { step: i + 1, growth });
        }
        let scale = linalg::norm(&x).max(linalg::norm(&y)).max(initial);
        if sep <= RELATIVE_FLOOR * scale {
            break;
        }
        curve.push(growth.ln());
    }
    Ok(curve)
}

fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((p * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// Fits `(Ĉ, ρ̂)` from `pairs` random initial-state pairs in the ball of
/// radius `r_c_probe`, each followed for `horizon` steps from a random start
/// time under one slow parameter sequence.
///
/// Each pair's rate is the largest `r_t / t` over the second half of its
/// usable curve; `ln ρ̂` is the 99th percentile of those rates and `ln Ĉ` the
/// smallest offset that puts every sampled `r_t` under the line.
#[allow(clippy::too_many_arguments)]
pub fn estimate_contraction<S: ControlSystem + ?Sized, R: Rng + ?Sized>(
    system: &S,
    set: &ParameterSet,
    eps: f64,
    r_c_probe: f64,
    pairs: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<ContractionEstimate> {
    check_budget(system, pairs, 50, horizon, "pairs")?;
    if !(r_c_probe > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe radius must be positive, got {r_c_probe}"
        )));
    }
    let n = system.dims().n;
    let mut draws = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let start = rng.random_range(0..=system.horizon() - horizon);
        let x = sample_ball(rng, n, r_c_probe);
        let mut x_alt = sample_ball(rng, n, r_c_probe);
        while linalg::dist(&x, &x_alt) == 0.0 {
            x_alt = sample_ball(rng, n, r_c_probe);
        }
        let thetas = sample_slow_sequence(set, eps, horizon, rng)?;
        draws.push(PairDraw {
            start,
            x,
            x_alt,
            thetas,
        });
    }
    let curves = draws
        .par_iter()
        .map(|d| decay_curve(system, d))
        .collect::<Result<Vec<_>>>()?;

    let mut rates: Vec<f64> = curves
        .iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let last = c.len() - 1;
            (last.div_ceil(2).max(1)..=last)
                .map(|t| c[t] / t as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    if rates.is_empty() {
        // every pair collapsed in one step
        return Ok(ContractionEstimate {
            c_hat: 1.0,
            rho_hat: 0.0,
            r_c_probe,
            r_s_hat: None,
            eps,
            samples: pairs,
        });
    }
    let log_rho = percentile(&mut rates, RATE_PERCENTILE);
    let rho_hat = log_rho.exp();
    if rho_hat >= 1.0 {
        return Err(Error::NotContractive { rho: rho_hat });
    }
    let log_c = curves
        .iter()
        .flat_map(|c| c.iter().enumerate().map(|(t, r)| r - t as f64 * log_rho))
        .fold(0.0, f64::max);
    Ok(ContractionEstimate {
        c_hat: log_c.exp(),
        rho_hat,
        r_c_probe,
        r_s_hat: None,
        eps,
        samples: pairs,
    })
}

/// Largest state norm reached from the zero state at `t = 0` over `runs`
/// slow parameter sequences of length `horizon`.
pub fn estimate_stability_radius<S: ControlSystem + ?Sized, R: Rng + ?Sized>(
    system: &S,
    set: &ParameterSet,
    eps: f64,
    runs: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<f64> {
    check_budget(system, runs, 1, horizon, "runs")?;
    let n = system.dims().n;
    let sequences = (0..runs)
        .map(|_| sample_slow_sequence(set, eps, horizon, rng))
        .collect::<Result<Vec<_>>>()?;
    let per_run = sequences
        .par_iter()
        .map(|thetas| {
            let mut x = vec![0.0; n];
            let mut sup = 0.0f64;
            for (t, theta) in thetas.iter().enumerate() {
                x = closed_loop_step(system, t, &x, theta);
                let norm = linalg::norm(&x);
                if !(norm <= DEFAULT_BLOWUP_CAP) {
                    return Err(Error::Divergence {
                        step: t + 1,
                        growth: norm,
                    });
                }
                sup = sup.max(norm);
            }
            Ok(sup)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_run.into_iter().fold(0.0, f64::max))
}

/// Twice the largest state norm seen along closed-loop runs from the system's
/// own initial state, a default probe radius when nothing better is known.
pub fn default_probe_radius<S: ControlSystem + ?Sized, R: Rng + ?Sized>(
    system: &S,
    set: &ParameterSet,
    eps: f64,
    runs: usize,
    rng: &mut R,
) -> Result<f64> {
    let horizon = system.horizon();
    let mut sup = linalg::norm(&system.initial_state());
    for _ in 0..runs.max(1) {
        let thetas = sample_slow_sequence(set, eps, horizon, rng)?;
        let traj = crate::system::rollout(system, &thetas, horizon, false)?;
        for step in &traj.steps {
            sup = sup.max(linalg::norm(&step.x));
        }
    }
    Ok(if sup > 0.0 { 2.0 * sup } else { 1.0 })
}
