//! Exact surrogate costs and gradients obtained by replaying the system with a
//! frozen parameter, and the optimizers built on them.
//!
//! These are the slow references GAPS is measured against: every call
//! resimulates from `t = 0`, so a full pass over a horizon is quadratic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaps::GapsConfig;
use crate::linalg::{self, Matrix};
use crate::system::{check_state, rollout_constant, rollout_from, ControlSystem, Step, Trajectory, DEFAULT_BLOWUP_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Forward sensitivity recursion along the frozen-parameter rollout.
    #[default]
    Chain,
    /// Central differences on [`surrogate_cost`].
    FiniteDiff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEval {
    pub theta: Vec<f64>,
    pub t: usize,
    pub value: f64,
    pub grad: Option<Vec<f64>>,
}

/// `F_t(θ)`: stage cost at `t` after running the whole prefix with `θ`.
pub fn surrogate_cost<S: ControlSystem + ?Sized>(system: &S, theta: &[f64], t: usize) -> Result<f64> {
    let traj = rollout_constant(system, theta, t + 1, false)?;
    Ok(traj.steps[t].cost)
}

pub fn evaluate_surrogate<S: ControlSystem + ?Sized>(
    system: &S,
    theta: &[f64],
    t: usize,
    with_grad: bool,
) -> Result<SurrogateEval> {
    let traj = rollout_constant(system, theta, t + 1, with_grad)?;
    Ok(SurrogateEval {
        theta: theta.to_vec(),
        t,
        value: traj.steps[t].cost,
        grad: with_grad.then(|| frozen_chain_gradient(&traj.steps, traj.steps[0].theta.len())),
    })
}

/// `F_t(θ_g)` for every grid point and every `t < steps`, indexed `[t][g]`.
pub fn surrogate_table<S: ControlSystem + ?Sized>(
    system: &S,
    grid: &[Vec<f64>],
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let columns: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|theta| rollout_constant(system, theta, steps, false).map(|tr| tr.costs()))
        .collect::<Result<_>>()?;
    Ok((0..steps).map(|t| columns.iter().map(|c| c[t]).collect()).collect())
}

/// Gradient of the last recorded stage cost with respect to a parameter held
/// over every recorded step.
fn frozen_chain_gradient(steps: &[Step], d: usize) -> Vec<f64> {
    let last = steps.len() - 1;
    let n = steps[0].x.len();
    let mut sens = Matrix::zeros(n, d);
    for step in &steps[..last] {
        let jac = step.jac.as_ref().expect("rollout recorded without Jacobians");
        sens = &(&jac.closed_loop() * &sens) + &jac.input_sensitivity();
    }
    let jac = steps[last].jac.as_ref().expect("rollout recorded without Jacobians");
    let mut grad = jac.cost_param_row();
    linalg::axpy(1.0, &sens.left_mul_vec(&jac.cost_state_row()), &mut grad);
    grad
}

/// Central-difference step used by [`GradientMode::FiniteDiff`].
pub fn finite_diff_step(theta: &[f64]) -> f64 {
    1e-6 * (1.0 + linalg::norm(theta))
}

/// `∇F_t(θ)`.
pub fn ideal_gradient<S: ControlSystem + ?Sized>(
    system: &S,
    theta: &[f64],
    t: usize,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    match mode {
        GradientMode::Chain => {
            let traj = rollout_constant(system, theta, t + 1, true)?;
            Ok(frozen_chain_gradient(&traj.steps, theta.len()))
        }
        GradientMode::FiniteDiff => {
            let h = finite_diff_step(theta);
            let mut grad = Vec::with_capacity(theta.len());
            for j in 0..theta.len() {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[j] += h;
                minus[j] -= h;
                grad.push((surrogate_cost(system, &plus, t)? - surrogate_cost(system, &minus, t)?) / (2.0 * h));
            }
            Ok(grad)
        }
    }
}

/// `F_t(θ_t)` for each `t` of a parameter history.
pub fn surrogate_along<S: ControlSystem + ?Sized>(system: &S, thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
    thetas
        .par_iter()
        .enumerate()
        .map(|(t, theta)| surrogate_cost(system, theta, t))
        .collect()
}

/// `∇F_t(θ_t)` for each `t` of a parameter history.
pub fn ideal_gradients_along<S: ControlSystem + ?Sized>(system: &S, thetas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    thetas
        .par_iter()
        .enumerate()
        .map(|(t, theta)| ideal_gradient(system, theta, t, GradientMode::Chain))
        .collect()
}

/// Projected online gradient descent on the exact surrogate gradients.
pub fn run_ideal_ogd<S: ControlSystem + ?Sized>(system: &S, config: &GapsConfig, steps: usize) -> Result<Trajectory> {
    config.validate()?;
    if steps > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "requested {steps} steps but system horizon is {}",
            system.horizon()
        )));
    }
    let mut theta = config.theta0.clone();
    let mut x = system.initial_state();
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        check_state(t, &x, DEFAULT_BLOWUP_CAP)?;
        let u = system.policy(t, &x, &theta);
        let cost = system.cost(t, &x, &u);
        let grad = ideal_gradient(system, &theta, t, GradientMode::Chain)?;
        if !linalg::all_finite(&grad) {
            return Err(Error::NonFiniteGradient { step: t });
        }
        let next = system.dynamics(t, &x, &u);
        let mut raw = theta.clone();
        linalg::axpy(-config.eta, &grad, &mut raw);
        let theta_next = config.set.project(&raw)?;
        out.push(Step {
            t,
            x,
            u,
            theta,
            cost,
            jac: None,
            grad: Some(grad),
        });
        x = next;
        theta = theta_next;
    }
    check_state(steps, &x, DEFAULT_BLOWUP_CAP)?;
    Ok(Trajectory {
        steps: out,
        final_state: x,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMemoryGradient {
    pub grad: Vec<f64>,
    /// Policy evaluations spent on the replay.
    pub policy_evaluations: usize,
}

/// Gradient of the stage cost at `t` when the state is reset to zero at
/// `t − B` and the last `B` parameters are the free variables, all evaluated
/// at `θ`.
pub fn finite_memory_gradient<S: ControlSystem + ?Sized>(
    system: &S,
    theta: &[f64],
    t: usize,
    buffer_len: usize,
) -> Result<FiniteMemoryGradient> {
    if buffer_len == 0 || t < buffer_len {
        return Err(Error::InvalidArgument(format!(
            "finite-memory gradient needs 1 <= B <= t (B = {buffer_len}, t = {t})"
        )));
    }
    let start = t - buffer_len;
    let zero = vec![0.0; system.dims().n];
    let thetas = vec![theta.to_vec(); buffer_len + 1];
    let traj = rollout_from(system, start, &zero, &thetas, buffer_len + 1, true, DEFAULT_BLOWUP_CAP)?;
    // The parameter applied at `t − B` is not a free variable.
    Ok(FiniteMemoryGradient {
        grad: frozen_chain_gradient(&traj.steps[1..], theta.len()),
        policy_evaluations: buffer_len + 1,
    })
}
