//! Gradient-based adaptive policy selection with an O(B)-memory
//! sensitivity buffer.
//!
//! The buffer holds the state sensitivities `M_b = ∂x_t/∂θ_{t−b}` for
//! `b = 1..min(B−1, t)` along the visited trajectory. The truncated gradient
//! of the current stage cost is then
//!
//! ```text
//! G_t = ∂f/∂u·∂π/∂θ + (∂f/∂x + ∂f/∂u·∂π/∂x) · Σ_b M_b
//! ```
//!
//! and after the step every entry is pushed through the closed-loop Jacobian
//! `A_cl = ∂g/∂x + ∂g/∂u·∂π/∂x`, with `∂g/∂u·∂π/∂θ` entering as the new `M_1`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::system::{
    check_state, ControlSystem, Dims, ParameterSet, Step, StepJacobians, Trajectory, DEFAULT_BLOWUP_CAP,
};

/// Buffer length used when no contraction estimate is available.
pub const DEFAULT_BUFFER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapsConfig {
    pub eta: f64,
    pub buffer_len: usize,
    pub theta0: Vec<f64>,
    pub set: ParameterSet,
}

impl GapsConfig {
    pub fn new(eta: f64, buffer_len: usize, theta0: Vec<f64>, set: ParameterSet) -> Result<Self> {
        let cfg = Self {
            eta,
            buffer_len,
            theta0,
            set,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `η ≥ 0` is accepted so that frozen-parameter runs are expressible.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.buffer_len == 0 {
            return Err(Error::InvalidArgument("buffer length must be at least 1".into()));
        }
        check_dim("theta0 vs parameter set", self.set.dim(), self.theta0.len())
    }
}

/// `B = ⌈½ ln T / ln(1/ρ̂)⌉`, or [`DEFAULT_BUFFER_LEN`] without an estimate.
pub fn default_buffer_length(horizon: usize, rho_hat: Option<f64>) -> usize {
    match rho_hat {
        Some(rho) if rho > 0.0 && rho < 1.0 && horizon > 1 => {
            let b = 0.5 * (horizon as f64).ln() / (1.0 / rho).ln();
            (b.ceil() as usize).max(1)
        }
        _ => DEFAULT_BUFFER_LEN,
    }
}

/// Step size `(1 − ρ̂)^{5/2} T^{−1/2}` for convex surrogate costs.
pub fn convex_learning_rate(horizon: usize, rho_hat: f64) -> f64 {
    (1.0 - rho_hat).powf(2.5) / (horizon as f64).sqrt()
}

/// Step size `(1 − ρ̂)^{3/2} (1 + V̂)^{1/2} T^{−1/2}` for nonconvex surrogate costs.
pub fn nonconvex_learning_rate(horizon: usize, rho_hat: f64, variation: f64) -> f64 {
    (1.0 - rho_hat).powf(1.5) * (1.0 + variation).sqrt() / (horizon as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct GapsState {
    t: usize,
    theta: Vec<f64>,
    dims: Dims,
    /// Front is `M_1 = ∂x_t/∂θ_{t−1}`.
    buffer: VecDeque<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapsUpdate {
    pub grad: Vec<f64>,
    pub theta_next: Vec<f64>,
}

impl GapsState {
    pub fn new(dims: Dims, theta0: Vec<f64>) -> Result<Self> {
        check_dim("GapsState theta0", dims.d, theta0.len())?;
        Ok(Self {
            t: 0,
            theta: theta0,
            dims,
            buffer: VecDeque::new(),
        })
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Current buffer contents, newest first.
    pub fn buffer(&self) -> impl Iterator<Item = &Matrix> {
        self.buffer.iter()
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Truncated gradient `G_t` from the current buffer and this step's Jacobians.
    pub fn gradient(&self, jac: &StepJacobians) -> Vec<f64> {
        let mut grad = jac.cost_param_row();
        if let Some(total) = self.buffer.iter().fold(None::<Matrix>, |acc, m| match acc {
            None => Some(m.clone()),
            Some(mut s) => {
                s += m;
                Some(s)
            }
        }) {
            linalg::axpy(1.0, &total.left_mul_vec(&jac.cost_state_row()), &mut grad);
        }
        grad
    }

    /// Advances the sensitivity buffer from `t` to `t + 1`.
    fn advance_buffer(&mut self, jac: &StepJacobians, buffer_len: usize) {
        let capacity = buffer_len - 1;
        if capacity == 0 {
            return;
        }
        let a_cl = jac.closed_loop();
        if self.buffer.len() == capacity {
            self.buffer.pop_back();
        }
        for m in self.buffer.iter_mut() {
            *m = &a_cl * &*m;
        }
        self.buffer.push_front(jac.input_sensitivity());
    }

    /// One GAPS iteration: gradient estimate, buffer update, projected step.
    pub fn step(&mut self, jac: &StepJacobians, config: &GapsConfig) -> Result<GapsUpdate> {
        jac.check_dims(self.dims)?;
        let grad = self.gradient(jac);
        if !linalg::all_finite(&grad) {
            return Err(Error::NonFiniteGradient { step: self.t });
        }
        self.advance_buffer(jac, config.buffer_len);
        let mut raw = self.theta.clone();
        linalg::axpy(-config.eta, &grad, &mut raw);
        let theta_next = config.set.project(&raw)?;
        self.theta = theta_next.clone();
        self.t += 1;
        Ok(GapsUpdate { grad, theta_next })
    }
}

/// Free-function form of [`GapsState::step`].
pub fn gaps_step(state: &mut GapsState, jac: &StepJacobians, config: &GapsConfig) -> Result<GapsUpdate> {
    state.step(jac, config)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Keep the per-step Jacobians in the returned trajectory.
    pub record_jacobians: bool,
    pub blowup_cap: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_jacobians: false,
            blowup_cap: DEFAULT_BLOWUP_CAP,
        }
    }
}

/// Runs GAPS on a single trajectory of `system` for `steps` steps.
pub fn run_gaps<S: ControlSystem + ?Sized>(system: &S, config: &GapsConfig, steps: usize) -> Result<Trajectory> {
    run_gaps_with(system, config, steps, &RunOptions::default())
}

pub fn run_gaps_with<S: ControlSystem + ?Sized>(
    system: &S,
    config: &GapsConfig,
    steps: usize,
    options: &RunOptions,
) -> Result<Trajectory> {
    config.validate()?;
    let dims = system.dims();
    if steps > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "requested {steps} steps but system horizon is {}",
            system.horizon()
        )));
    }
    let mut state = GapsState::new(dims, config.theta0.clone())?;
    let mut x = system.initial_state();
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        check_state(t, &x, options.blowup_cap)?;
        let theta = state.theta().to_vec();
        let u = system.policy(t, &x, &theta);
        let cost = system.cost(t, &x, &u);
        let jac = system.jacobians(t, &x, &theta);
        let update = state.step(&jac, config)?;
        let next = system.dynamics(t, &x, &u);
        out.push(Step {
            t,
            x,
            u,
            theta,
            cost,
            jac: options.record_jacobians.then_some(jac),
            grad: Some(update.grad),
        });
        x = next;
    }
    check_state(steps, &x, options.blowup_cap)?;
    Ok(Trajectory {
        steps: out,
        final_state: x,
    })
}
