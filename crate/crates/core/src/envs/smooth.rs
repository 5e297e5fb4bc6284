//! Randomly drawn smooth nonlinear closed loops, used to exercise the
//! gradient machinery away from the linear-quadratic special case.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, Matrix};
use crate::system::{ControlSystem, Dims, ParameterSet, StepJacobians};

/// ```text
/// g(x, u) = A x + B u + 0.1 tanh(C x) + w_t
/// π(x, θ) = −K x + D θ + 0.1 sin(E θ + F x)
/// f(x, u) = Σ q_i x_i² + Σ r_i u_i² + 0.05 Σ sin² x_i
/// ```
#[derive(Clone, Debug)]
pub struct RandomSmoothSystem {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    k: Matrix,
    d: Matrix,
    e: Matrix,
    f: Matrix,
    q: Vec<f64>,
    r: Vec<f64>,
    w: Vec<Vec<f64>>,
    x0: Vec<f64>,
    dims: Dims,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl RandomSmoothSystem {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dims: Dims, horizon: usize) -> Self {
        let Dims { n, m, d } = dims;
        let raw = gaussian(rng, n, n, 1.0);
        let a = raw.scale(0.5 / raw.spectral_norm().max(1e-12));
        Self {
            a,
            b: gaussian(rng, n, m, 0.5),
            c: gaussian(rng, n, n, 1.0),
            k: gaussian(rng, m, n, 0.2),
            d: gaussian(rng, m, d, 1.0),
            e: gaussian(rng, m, d, 1.0),
            f: gaussian(rng, m, n, 1.0),
            q: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
            r: (0..m).map(|_| rng.random_range(0.1..1.0)).collect(),
            w: (0..horizon).map(|_| gaussian(rng, n, 1, 0.3).into_vec()).collect(),
            x0: gaussian(rng, n, 1, 1.0).into_vec(),
            dims,
        }
    }

    fn policy_phase(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        linalg::add(&self.e.mul_vec(theta), &self.f.mul_vec(x))
    }
}

/// `diag(v) · M`
fn row_scaled(v: &[f64], m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for (i, s) in v.iter().enumerate() {
        for j in 0..m.cols() {
            out[(i, j)] *= s;
        }
    }
    out
}

impl ControlSystem for RandomSmoothSystem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn horizon(&self) -> usize {
        self.w.len()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn parameter_set(&self) -> ParameterSet {
        ParameterSet::cube(self.dims.d, -1.0, 1.0)
    }

    fn policy(&self, _t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut u = linalg::sub(&self.d.mul_vec(theta), &self.k.mul_vec(x));
        for (ui, s) in u.iter_mut().zip(self.policy_phase(x, theta)) {
            *ui += 0.1 * s.sin();
        }
        u
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = linalg::add(&self.a.mul_vec(x), &self.b.mul_vec(u));
        for (ni, s) in next.iter_mut().zip(self.c.mul_vec(x)) {
            *ni += 0.1 * s.tanh();
        }
        linalg::axpy(1.0, &self.w[t], &mut next);
        next
    }

    fn cost(&self, _t: usize, x: &[f64], u: &[f64]) -> f64 {
        let state: f64 = x
            .iter()
            .zip(&self.q)
            .map(|(xi, qi)| qi * xi * xi + 0.05 * xi.sin().powi(2))
            .sum();
        state + u.iter().zip(&self.r).map(|(ui, ri)| ri * ui * ui).sum::<f64>()
    }

    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        let u = self.policy(t, x, theta);
        let sech2: Vec<f64> = self.c.mul_vec(x).iter().map(|s| 0.1 / s.cosh().powi(2)).collect();
        let cos_phase: Vec<f64> = self.policy_phase(x, theta).iter().map(|s| 0.1 * s.cos()).collect();
        StepJacobians {
            dg_dx: &self.a + &row_scaled(&sech2, &self.c),
            dg_du: self.b.clone(),
            dpi_dx: &row_scaled(&cos_phase, &self.f) - &self.k,
            dpi_dtheta: &self.d + &row_scaled(&cos_phase, &self.e),
            df_dx: x
                .iter()
                .zip(&self.q)
                .map(|(xi, qi)| 2.0 * qi * xi + 0.05 * (2.0 * xi).sin())
                .collect(),
            df_du: u.iter().zip(&self.r).map(|(ui, ri)| 2.0 * ri * ui).collect(),
        }
    }
}
