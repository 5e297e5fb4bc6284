//! Disturbance-action control on a linear time-varying plant.
//!
//! `u_t = −K x_t + Σ_{i=1..h} M⁽ⁱ⁾ w_{t−i}` with the stacked `M⁽¹..ʰ⁾` as the
//! parameter. The parameter set is the Frobenius ball `‖M‖_F ≤ R_M`, which
//! contains every stack with `Σ‖M⁽ⁱ⁾‖ ≤ R_M` and has a closed-form projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_dare, Matrix};
use crate::rng;
use crate::system::{sample_ball, ControlSystem, Dims, ParameterSet, StepJacobians};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DacOptions {
    /// Disturbance history window `h`.
    pub window: usize,
    /// Disturbances are uniform in the ball of this radius.
    pub w_bar: f64,
    /// Radius of the parameter ball.
    pub r_m: f64,
    /// Amplitude of the sinusoidal variation of `A_t`.
    pub variation: f64,
    pub period: usize,
}

impl Default for DacOptions {
    fn default() -> Self {
        Self {
            window: 3,
            w_bar: 0.5,
            r_m: 1.0,
            variation: 0.02,
            period: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DacEnv {
    a: Vec<Matrix>,
    b: Matrix,
    k_stb: Matrix,
    q: Matrix,
    r: Matrix,
    window: usize,
    w: Vec<Vec<f64>>,
    r_m: f64,
    dims: Dims,
}

impl DacEnv {
    pub fn input_matrix(&self) -> &Matrix {
        &self.b
    }

    pub fn stabilizing_gain(&self) -> &Matrix {
        &self.k_stb
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn radius(&self) -> f64 {
        self.r_m
    }

    fn past_disturbance(&self, t: usize, lag: usize) -> Option<&[f64]> {
        t.checked_sub(lag).map(|s| self.w[s].as_slice())
    }
}

/// Double-integrator-like plant with a sinusoidally varying coupling term and
/// a DARE gain for the nominal model as the stabilizing feedback.
pub fn make_dac_env(horizon: usize, seed: u64, opts: &DacOptions) -> Result<DacEnv> {
    if opts.window == 0 || opts.period == 0 || !(opts.r_m > 0.0) || !(opts.w_bar >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid DAC options {opts:?}")));
    }
    let a0 = Matrix::from_rows(&[&[1.0, 0.1], &[0.0, 1.0]]);
    let b = Matrix::from_rows(&[&[0.0], &[0.1]]);
    let (q, r) = (Matrix::identity(2), Matrix::scalar(1.0));
    let k_stb = solve_dare(&a0, &b, &q, &r, 1e-12, 100_000)?.k;
    let coupling = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
    let a = (0..horizon)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / opts.period as f64;
            &a0 + &coupling.scale(opts.variation * phase.sin())
        })
        .collect();
    let mut stream = rng::stream(seed, "dac/disturbance");
    let w = (0..horizon).map(|_| sample_ball(&mut stream, 2, opts.w_bar)).collect();
    Ok(DacEnv {
        a,
        b,
        k_stb,
        q,
        r,
        window: opts.window,
        w,
        r_m: opts.r_m,
        dims: Dims {
            n: 2,
            m: 1,
            d: opts.window * 2,
        },
    })
}

impl ControlSystem for DacEnv {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn horizon(&self) -> usize {
        self.w.len()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.dims.n]
    }

    fn parameter_set(&self) -> ParameterSet {
        ParameterSet::Ball {
            center: vec![0.0; self.dims.d],
            radius: self.r_m,
        }
    }

    fn policy(&self, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let Dims { n, m, .. } = self.dims;
        let mut u = linalg::scaled(-1.0, &self.k_stb.mul_vec(x));
        for lag in 1..=self.window {
            if let Some(w) = self.past_disturbance(t, lag) {
                let block = &theta[(lag - 1) * m * n..lag * m * n];
                for (p, up) in u.iter_mut().enumerate() {
                    *up += linalg::dot(&block[p * n..(p + 1) * n], w);
                }
            }
        }
        u
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = self.a[t].mul_vec(x);
        linalg::axpy(1.0, &self.b.mul_vec(u), &mut next);
        linalg::axpy(1.0, &self.w[t], &mut next);
        next
    }

    fn cost(&self, _t: usize, x: &[f64], u: &[f64]) -> f64 {
        linalg::dot(x, &self.q.mul_vec(x)) + linalg::dot(u, &self.r.mul_vec(u))
    }

    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        let Dims { n, m, d } = self.dims;
        let u = self.policy(t, x, theta);
        let mut dpi_dtheta = Matrix::zeros(m, d);
        for lag in 1..=self.window {
            if let Some(w) = self.past_disturbance(t, lag) {
                for p in 0..m {
                    for j in 0..n {
                        dpi_dtheta[(p, (lag - 1) * m * n + p * n + j)] = w[j];
                    }
                }
            }
        }
        StepJacobians {
            dg_dx: self.a[t].clone(),
            dg_du: self.b.clone(),
            dpi_dx: self.k_stb.scale(-1.0),
            dpi_dtheta,
            df_dx: self.q.scale(2.0).mul_vec(x),
            df_du: self.r.scale(2.0).mul_vec(&u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::surrogate_cost;

    #[test]
    fn surrogate_is_midpoint_convex() {
        let env = make_dac_env(80, 4, &DacOptions::default()).unwrap();
        let set = env.parameter_set();
        let mut stream = rng::stream(11, "test/dac");
        for i in 0..1000 {
            let a = set.sample_uniform(&mut stream).unwrap();
            let b = set.sample_uniform(&mut stream).unwrap();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let t = i % 80;
            let (fa, fb, fm) = (
                surrogate_cost(&env, &a, t).unwrap(),
                surrogate_cost(&env, &b, t).unwrap(),
                surrogate_cost(&env, &mid, t).unwrap(),
            );
            assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa + fb), "t={t}");
        }
    }

    #[test]
    fn disturbances_respect_bound() {
        let opts = DacOptions::default();
        let env = make_dac_env(500, 2, &opts).unwrap();
        assert!(env.w.iter().all(|w| linalg::norm(w) <= opts.w_bar + 1e-15));
    }
}
