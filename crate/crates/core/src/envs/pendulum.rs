//! Inverted pendulum under proportional-derivative feedback with a mass that
//! changes on a fixed schedule.
//!
//! State `(φ, φ̇)` with `φ = 0` upright, explicit Euler:
//!
//! ```text
//! φ'  = φ + dt φ̇
//! φ̇'  = φ̇ + dt (g/l sin φ − b/(m l²) φ̇ + u/(m l²) + w)
//! u   = −k_p φ − k_d φ̇
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_dare, Matrix};
use crate::rng;
use crate::system::{rollout, ControlSystem, Dims, ParameterSet, StepJacobians, Trajectory};

use super::disturbance::DisturbanceSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumOptions {
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    /// Masses visited in order, cycling.
    pub masses: Vec<f64>,
    /// Seconds between mass changes.
    pub switch_period: f64,
    /// Diagonal state weight on `(φ, φ̇)`.
    pub q: [f64; 2],
    pub r: f64,
    /// Gain box `[k_p, k_d]` lower and upper corners.
    pub gain_lo: [f64; 2],
    pub gain_hi: [f64; 2],
    pub x0: [f64; 2],
}

impl Default for PendulumOptions {
    fn default() -> Self {
        Self {
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
            dt: 0.02,
            masses: vec![1.0, 0.5, 2.0],
            switch_period: 100.0,
            q: [1.0, 0.1],
            r: 0.01,
            gain_lo: [22.0, 1.0],
            gain_hi: [50.0, 30.0],
            x0: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PendulumEnv {
    opts: PendulumOptions,
    /// Angular-acceleration disturbance per step.
    w: Vec<f64>,
    switch_steps: usize,
}

impl PendulumEnv {
    pub fn new(opts: PendulumOptions, w: Vec<f64>) -> Result<Self> {
        let positive = [opts.length, opts.gravity, opts.dt, opts.switch_period];
        if positive.iter().any(|v| !(*v > 0.0)) || opts.damping < 0.0 {
            return Err(Error::InvalidArgument("pendulum constants must be positive".into()));
        }
        if opts.masses.is_empty() || opts.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidArgument(
                "masses must be a non-empty list of positive values".into(),
            ));
        }
        ParameterSet::boxed(opts.gain_lo.to_vec(), opts.gain_hi.to_vec())?;
        let switch_steps = ((opts.switch_period / opts.dt).round() as usize).max(1);
        Ok(Self { opts, w, switch_steps })
    }

    pub fn options(&self) -> &PendulumOptions {
        &self.opts
    }

    pub fn mass(&self, t: usize) -> f64 {
        self.opts.masses[(t / self.switch_steps) % self.opts.masses.len()]
    }

    fn inertia(&self, t: usize) -> f64 {
        self.mass(t) * self.opts.length * self.opts.length
    }

    /// Euler-discretized linearization about the upright equilibrium.
    pub fn linearization(&self, mass: f64) -> (Matrix, Matrix) {
        let o = &self.opts;
        let inertia = mass * o.length * o.length;
        let a = Matrix::from_rows(&[
            &[1.0, o.dt],
            &[o.dt * o.gravity / o.length, 1.0 - o.dt * o.damping / inertia],
        ]);
        let b = Matrix::from_rows(&[&[0.0], &[o.dt / inertia]]);
        (a, b)
    }

    /// Infinite-horizon LQ gains `(k_p, k_d)` of the linearization at `mass`.
    pub fn lqr_gains(&self, mass: f64) -> Result<Vec<f64>> {
        let (a, b) = self.linearization(mass);
        let sol = solve_dare(
            &a,
            &b,
            &Matrix::from_diag(&self.opts.q),
            &Matrix::scalar(self.opts.r),
            1e-12,
            100_000,
        )?;
        Ok(sol.k.into_vec())
    }

    /// LQ gains for the mass active at each step.
    pub fn lqr_schedule(&self, steps: usize) -> Result<Vec<Vec<f64>>> {
        let per_mass = self
            .opts
            .masses
            .iter()
            .map(|&m| self.lqr_gains(m))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..steps)
            .map(|t| per_mass[(t / self.switch_steps) % per_mass.len()].clone())
            .collect())
    }
}

impl ControlSystem for PendulumEnv {
    fn dims(&self) -> Dims {
        Dims { n: 2, m: 1, d: 2 }
    }

    fn horizon(&self) -> usize {
        self.w.len()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.opts.x0.to_vec()
    }

    fn parameter_set(&self) -> ParameterSet {
        ParameterSet::Box {
            lo: self.opts.gain_lo.to_vec(),
            hi: self.opts.gain_hi.to_vec(),
        }
    }

    fn policy(&self, _t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![-theta[0] * x[0] - theta[1] * x[1]]
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let o = &self.opts;
        let inertia = self.inertia(t);
        let accel = o.gravity / o.length * x[0].sin() - o.damping / inertia * x[1] + u[0] / inertia + self.w[t];
        vec![x[0] + o.dt * x[1], x[1] + o.dt * accel]
    }

    fn cost(&self, _t: usize, x: &[f64], u: &[f64]) -> f64 {
        self.opts.q[0] * x[0] * x[0] + self.opts.q[1] * x[1] * x[1] + self.opts.r * u[0] * u[0]
    }

    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        let o = &self.opts;
        let inertia = self.inertia(t);
        let u = self.policy(t, x, theta);
        StepJacobians {
            dg_dx: Matrix::from_rows(&[
                &[1.0, o.dt],
                &[
                    o.dt * o.gravity / o.length * x[0].cos(),
                    1.0 - o.dt * o.damping / inertia,
                ],
            ]),
            dg_du: Matrix::from_rows(&[&[0.0], &[o.dt / inertia]]),
            dpi_dx: Matrix::from_rows(&[&[-theta[0], -theta[1]]]),
            dpi_dtheta: Matrix::from_rows(&[&[-x[0], -x[1]]]),
            df_dx: vec![2.0 * o.q[0] * x[0], 2.0 * o.q[1] * x[1]],
            df_du: vec![2.0 * o.r * u[0]],
        }
    }
}

/// Pendulum over `horizon` steps driven by the given disturbance law.
pub fn make_pendulum_env(
    horizon: usize,
    disturbance: &DisturbanceSpec,
    seed: u64,
    opts: &PendulumOptions,
) -> Result<PendulumEnv> {
    disturbance.kind.validate()?;
    let mut stream = rng::seeded(rng::derive_indexed(seed, "pendulum/disturbance", disturbance.seed));
    let w = disturbance
        .kind
        .sample(horizon, 1, &mut stream)
        .into_iter()
        .map(|v| v[0])
        .collect();
    PendulumEnv::new(opts.clone(), w)
}

/// Rollout under the LQ gains of whichever mass is active.
pub fn run_lqr_baseline(env: &PendulumEnv, steps: usize) -> Result<Trajectory> {
    rollout(env, &env.lqr_schedule(steps)?, steps, false)
}
