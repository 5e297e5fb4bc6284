//! Linear (possibly time-varying) plant under linear state feedback whose
//! gain matrix is the policy parameter.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::system::{ControlSystem, Dims, ParameterSet, StepJacobians};

/// `x_{t+1} = A_t x + B u + w_t`, `u = −K x` with `θ = vec(K)` row-major,
/// `f = xᵀQx + uᵀRu`.
#[derive(Clone, Debug)]
pub struct LinearFeedbackEnv {
    a: Vec<Matrix>,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    w: Vec<Vec<f64>>,
    x0: Vec<f64>,
    set: ParameterSet,
    dims: Dims,
}

impl LinearFeedbackEnv {
    /// `a` holds one matrix (time-invariant) or one per step.
    pub fn new(
        a: Vec<Matrix>,
        b: Matrix,
        q: Matrix,
        r: Matrix,
        w: Vec<Vec<f64>>,
        x0: Vec<f64>,
        set: ParameterSet,
    ) -> Result<Self> {
        let (n, m) = (b.rows(), b.cols());
        if a.is_empty() || (a.len() != 1 && a.len() < w.len()) {
            return Err(Error::InvalidArgument(
                "A sequence must have 1 entry or one per step".into(),
            ));
        }
        for ai in &a {
            check_dim("A rows", n, ai.rows())?;
            check_dim("A cols", n, ai.cols())?;
        }
        check_dim("Q", n, q.rows())?;
        check_dim("R", m, r.rows())?;
        check_dim("x0", n, x0.len())?;
        check_dim("gain parameter", m * n, set.dim())?;
        for wt in &w {
            check_dim("disturbance", n, wt.len())?;
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            w,
            x0,
            set,
            dims: Dims { n, m, d: m * n },
        })
    }

    /// Scalar plant `x' = a x + b u + w`, horizon `w.len()`.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, w: Vec<f64>, x0: f64, set: ParameterSet) -> Self {
        Self::new(
            vec![Matrix::scalar(a)],
            Matrix::scalar(b),
            Matrix::scalar(q),
            Matrix::scalar(r),
            w.into_iter().map(|v| vec![v]).collect(),
            vec![x0],
            set,
        )
        .expect("scalar data is consistent")
    }

    pub fn state_matrix(&self, t: usize) -> &Matrix {
        &self.a[t.min(self.a.len() - 1)]
    }

    fn gain(&self, theta: &[f64]) -> Matrix {
        Matrix::from_vec(self.dims.m, self.dims.n, theta.to_vec()).expect("gain parameter has m·n entries")
    }
}

impl ControlSystem for LinearFeedbackEnv {
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
        self.set.clone()
    }

    fn policy(&self, _t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        linalg::scaled(-1.0, &self.gain(theta).mul_vec(x))
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = self.state_matrix(t).mul_vec(x);
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
        for p in 0..m {
            for j in 0..n {
                dpi_dtheta[(p, p * n + j)] = -x[j];
            }
        }
        StepJacobians {
            dg_dx: self.state_matrix(t).clone(),
            dg_du: self.b.clone(),
            dpi_dx: self.gain(theta).scale(-1.0),
            dpi_dtheta,
            df_dx: (&self.q + &self.q.transpose()).mul_vec(x),
            df_du: (&self.r + &self.r.transpose()).mul_vec(&u),
        }
    }
}
