//! The closed-loop system interface, parameter sets, trajectory rollout, and
//! a finite-difference validator for the analytic Jacobians.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};

/// Default state-norm cap for rollouts.
pub const DEFAULT_BLOWUP_CAP: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// State dimension.
    pub n: usize,
    /// Action dimension.
    pub m: usize,
    /// Policy parameter dimension.
    pub d: usize,
}

/// Closed convex parameter set Θ with Euclidean projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterSet {
    WholeSpace { dim: usize },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ParameterSet {
    pub fn whole_space(dim: usize) -> Self {
        ParameterSet::WholeSpace { dim }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("Box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("box requires lo <= hi elementwise".into()));
        }
        Ok(ParameterSet::Box { lo, hi })
    }

    /// `[lo, hi]^dim`
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::boxed(vec![lo; dim], vec![hi; dim]).expect("valid cube")
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("ball radius must be positive".into()));
        }
        Ok(ParameterSet::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ParameterSet::WholeSpace { dim } => *dim,
            ParameterSet::Box { lo, .. } => lo.len(),
            ParameterSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, ParameterSet::WholeSpace { .. })
    }

    /// Euclidean diameter; infinite for the whole space.
    pub fn diameter(&self) -> f64 {
        match self {
            ParameterSet::WholeSpace { .. } => f64::INFINITY,
            ParameterSet::Box { lo, hi } => linalg::dist(lo, hi),
            ParameterSet::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// `argmin_{y ∈ Θ} ‖y − θ‖`
    pub fn project(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("ParameterSet::project", self.dim(), theta.len())?;
        Ok(match self {
            ParameterSet::WholeSpace { .. } => theta.to_vec(),
            ParameterSet::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            ParameterSet::Ball { center, radius } => {
                let offset = linalg::sub(theta, center);
                let r = linalg::norm(&offset);
                if r <= *radius {
                    theta.to_vec()
                } else {
                    let s = radius / r;
                    center.iter().zip(&offset).map(|(c, o)| c + s * o).collect()
                }
            }
        })
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        if theta.len() != self.dim() {
            return false;
        }
        match self {
            ParameterSet::WholeSpace { .. } => true,
            ParameterSet::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            ParameterSet::Ball { center, radius } => linalg::dist(theta, center) <= radius + tol,
        }
    }

    /// Uniform sample from a bounded set. Returns `None` for the whole space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        match self {
            ParameterSet::WholeSpace { .. } => None,
            ParameterSet::Box { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .map(|(l, h)| if h > l { rng.random_range(*l..*h) } else { *l })
                    .collect(),
            ),
            ParameterSet::Ball { center, radius } => {
                let dir = sample_unit_direction(rng, center.len());
                let r = radius * rng.random::<f64>().powf(1.0 / center.len() as f64);
                Some(center.iter().zip(dir).map(|(c, v)| c + r * v).collect())
            }
        }
    }
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn sample_unit_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform sample from the ball `B(0, radius)` in `dim` dimensions.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    sample_unit_direction(rng, dim).into_iter().map(|v| r * v).collect()
}

/// Partial derivatives of `(g_t, π_t, f_t)` at one visited point.
///
/// Cost gradients are stored as plain vectors (the 1×n and 1×m rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepJacobians {
    pub dg_dx: Matrix,
    pub dg_du: Matrix,
    pub dpi_dx: Matrix,
    pub dpi_dtheta: Matrix,
    pub df_dx: Vec<f64>,
    pub df_du: Vec<f64>,
}

impl StepJacobians {
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        let Dims { n, m, d } = dims;
        check_dim("dg_dx rows", n, self.dg_dx.rows())?;
        check_dim("dg_dx cols", n, self.dg_dx.cols())?;
        check_dim("dg_du rows", n, self.dg_du.rows())?;
        check_dim("dg_du cols", m, self.dg_du.cols())?;
        check_dim("dpi_dx rows", m, self.dpi_dx.rows())?;
        check_dim("dpi_dx cols", n, self.dpi_dx.cols())?;
        check_dim("dpi_dtheta rows", m, self.dpi_dtheta.rows())?;
        check_dim("dpi_dtheta cols", d, self.dpi_dtheta.cols())?;
        check_dim("df_dx", n, self.df_dx.len())?;
        check_dim("df_du", m, self.df_du.len())
    }

    /// Closed-loop state Jacobian `∂g/∂x + ∂g/∂u · ∂π/∂x`.
    pub fn closed_loop(&self) -> Matrix {
        &self.dg_dx + &(&self.dg_du * &self.dpi_dx)
    }

    /// `∂x_{t+1}/∂θ_t = ∂g/∂u · ∂π/∂θ`.
    pub fn input_sensitivity(&self) -> Matrix {
        &self.dg_du * &self.dpi_dtheta
    }

    /// Total derivative of the stage cost w.r.t. the state through the policy,
    /// `∂f/∂x + ∂f/∂u · ∂π/∂x`.
    pub fn cost_state_row(&self) -> Vec<f64> {
        linalg::add(&self.df_dx, &self.dpi_dx.left_mul_vec(&self.df_du))
    }

    /// Direct derivative of the stage cost w.r.t. the current parameter, `∂f/∂u · ∂π/∂θ`.
    pub fn cost_param_row(&self) -> Vec<f64> {
        self.dpi_dtheta.left_mul_vec(&self.df_du)
    }

    pub fn is_finite(&self) -> bool {
        self.dg_dx.is_finite()
            && self.dg_du.is_finite()
            && self.dpi_dx.is_finite()
            && self.dpi_dtheta.is_finite()
            && linalg::all_finite(&self.df_dx)
            && linalg::all_finite(&self.df_du)
    }
}

/// A time-varying closed loop `x_{t+1} = g_t(x_t, u_t)`, `u_t = π_t(x_t, θ_t)`,
/// `c_t = f_t(x_t, u_t)`.
///
/// Implementations are deterministic functions of `(t, ·)`: all disturbance
/// realizations are fixed at construction, so any rollout can be replayed
/// from `t = 0` with a different parameter sequence.
pub trait ControlSystem: Send + Sync {
    fn dims(&self) -> Dims;

    /// Number of steps for which `g_t, π_t, f_t` are defined.
    fn horizon(&self) -> usize;

    fn initial_state(&self) -> Vec<f64>;

    /// The natural parameter set Θ of the policy class.
    fn parameter_set(&self) -> ParameterSet;

    fn policy(&self, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64>;

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64>;

    fn cost(&self, t: usize, x: &[f64], u: &[f64]) -> f64;

    /// All six blocks at `(x, u = π_t(x, θ), θ)`.
    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians;
}

impl<S: ControlSystem + ?Sized> ControlSystem for &S {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn initial_state(&self) -> Vec<f64> {
        (**self).initial_state()
    }
    fn parameter_set(&self) -> ParameterSet {
        (**self).parameter_set()
    }
    fn policy(&self, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).policy(t, x, theta)
    }
    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).dynamics(t, x, u)
    }
    fn cost(&self, t: usize, x: &[f64], u: &[f64]) -> f64 {
        (**self).cost(t, x, u)
    }
    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        (**self).jacobians(t, x, theta)
    }
}

impl<S: ControlSystem + ?Sized> ControlSystem for Box<S> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn initial_state(&self) -> Vec<f64> {
        (**self).initial_state()
    }
    fn parameter_set(&self) -> ParameterSet {
        (**self).parameter_set()
    }
    fn policy(&self, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).policy(t, x, theta)
    }
    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).dynamics(t, x, u)
    }
    fn cost(&self, t: usize, x: &[f64], u: &[f64]) -> f64 {
        (**self).cost(t, x, u)
    }
    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        (**self).jacobians(t, x, theta)
    }
}

/// One recorded time step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jac: Option<StepJacobians>,
    /// Gradient estimate used for the update at this step, when one was computed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// State after the last recorded step.
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.theta.clone()).collect()
    }

    /// State at time `t`, including the final state at `t = len()`.
    pub fn state(&self, t: usize) -> &[f64] {
        if t == self.steps.len() {
            &self.final_state
        } else {
            &self.steps[t].x
        }
    }
}

pub(crate) fn check_state(step: usize, x: &[f64], cap: f64) -> Result<()> {
    let norm = linalg::norm(x);
    if !(norm <= cap) {
        return Err(Error::StateBlowup { step, norm, cap });
    }
    Ok(())
}

/// Multi-step dynamics `g_{t0+steps | t0}` with the parameter sequence
/// `thetas[0..steps]` applied at times `t0..t0+steps`, recording every step.
pub fn rollout_from<S: ControlSystem + ?Sized>(
    system: &S,
    t0: usize,
    x0: &[f64],
    thetas: &[Vec<f64>],
    steps: usize,
    with_jacobians: bool,
    cap: f64,
) -> Result<Trajectory> {
    let dims = system.dims();
    check_dim("rollout initial state", dims.n, x0.len())?;
    if thetas.len() < steps {
        return Err(Error::InvalidArgument(format!(
            "parameter sequence has {} entries, rollout needs {steps}",
            thetas.len()
        )));
    }
    if t0 + steps > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "rollout to t = {} exceeds system horizon {}",
            t0 + steps,
            system.horizon()
        )));
    }
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for (i, theta) in thetas.iter().take(steps).enumerate() {
        let t = t0 + i;
        check_dim("rollout parameter", dims.d, theta.len())?;
        check_state(t, &x, cap)?;
        let u = system.policy(t, &x, theta);
        let cost = system.cost(t, &x, &u);
        let jac = with_jacobians.then(|| system.jacobians(t, &x, theta));
        let next = system.dynamics(t, &x, &u);
        out.push(Step {
            t,
            x,
            u,
            theta: theta.clone(),
            cost,
            jac,
            grad: None,
        });
        x = next;
    }
    check_state(t0 + steps, &x, cap)?;
    Ok(Trajectory {
        steps: out,
        final_state: x,
    })
}

/// Rollout from the system's initial state at `t = 0`.
pub fn rollout<S: ControlSystem + ?Sized>(
    system: &S,
    thetas: &[Vec<f64>],
    steps: usize,
    with_jacobians: bool,
) -> Result<Trajectory> {
    rollout_from(
        system,
        0,
        &system.initial_state(),
        thetas,
        steps,
        with_jacobians,
        DEFAULT_BLOWUP_CAP,
    )
}

/// Rollout holding one parameter fixed for all `steps`.
pub fn rollout_constant<S: ControlSystem + ?Sized>(
    system: &S,
    theta: &[f64],
    steps: usize,
    with_jacobians: bool,
) -> Result<Trajectory> {
    rollout(system, &vec![theta.to_vec(); steps], steps, with_jacobians)
}

/// Finite-difference error for one Jacobian block.
#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub name: &'static str,
    /// `‖analytic − FD‖_F / (1 + ‖analytic‖_F)`
    pub rel_error: f64,
    /// Estimated round-off floor of the difference quotient at this step size.
    pub roundoff_floor: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct JacobianReport {
    pub blocks: Vec<BlockCheck>,
    pub pass: bool,
    /// True when the step is so small that cancellation dominates the
    /// difference quotient; failures are then not evidence against the analytics.
    pub degraded_precision: bool,
}

impl JacobianReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.rel_error))
    }

    pub fn failing_blocks(&self) -> Vec<&'static str> {
        self.blocks.iter().filter(|b| !b.pass).map(|b| b.name).collect()
    }
}

/// Central difference of a vector-valued function along each input coordinate.
fn fd_jacobian(point: &[f64], h: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> (Matrix, f64) {
    let mut cols = Vec::with_capacity(point.len());
    let mut scale: f64 = 0.0;
    for j in 0..point.len() {
        let mut plus = point.to_vec();
        let mut minus = point.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        scale = fp.iter().chain(&fm).fold(scale, |s, v| s.max(v.abs()));
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    let rows = cols[0].len();
    let mut m = Matrix::zeros(rows, point.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    (m, f64::EPSILON * (1.0 + scale) / h)
}

/// Compares the analytic Jacobians at `(t, x, θ)` against central differences.
pub fn check_jacobians<S: ControlSystem + ?Sized>(
    system: &S,
    t: usize,
    x: &[f64],
    theta: &[f64],
    h: f64,
    rel_tol: f64,
) -> JacobianReport {
    let analytic = system.jacobians(t, x, theta);
    let u = system.policy(t, x, theta);

    let (dg_dx, fl1) = fd_jacobian(x, h, |xp| system.dynamics(t, xp, &u));
    let (dg_du, fl2) = fd_jacobian(&u, h, |up| system.dynamics(t, x, up));
    let (dpi_dx, fl3) = fd_jacobian(x, h, |xp| system.policy(t, xp, theta));
    let (dpi_dtheta, fl4) = fd_jacobian(theta, h, |tp| system.policy(t, x, tp));
    let (df_dx, fl5) = fd_jacobian(x, h, |xp| vec![system.cost(t, xp, &u)]);
    let (df_du, fl6) = fd_jacobian(&u, h, |up| vec![system.cost(t, x, up)]);

    let rel = |a: &Matrix, fd: &Matrix| {
        if a.shape() != fd.shape() {
            return f64::INFINITY;
        }
        (a - fd).frobenius_norm() / (1.0 + a.frobenius_norm())
    };
    let entries = [
        ("dg_dx", rel(&analytic.dg_dx, &dg_dx), fl1),
        ("dg_du", rel(&analytic.dg_du, &dg_du), fl2),
        ("dpi_dx", rel(&analytic.dpi_dx, &dpi_dx), fl3),
        ("dpi_dtheta", rel(&analytic.dpi_dtheta, &dpi_dtheta), fl4),
        ("df_dx", rel(&Matrix::row(&analytic.df_dx), &df_dx), fl5),
        ("df_du", rel(&Matrix::row(&analytic.df_du), &df_du), fl6),
    ];
    let blocks: Vec<BlockCheck> = entries
        .iter()
        .map(|&(name, rel_error, roundoff_floor)| BlockCheck {
            name,
            rel_error,
            roundoff_floor,
            pass: rel_error <= rel_tol,
        })
        .collect();
    let degraded_precision = blocks.iter().any(|b| b.roundoff_floor > rel_tol);
    JacobianReport {
        pass: blocks.iter().all(|b| b.pass),
        blocks,
        degraded_precision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        let unit = ParameterSet::cube(1, 0.0, 1.0);
        assert_eq!(unit.project(&[1.5]).unwrap(), vec![1.0]);
        assert_eq!(unit.project(&[0.3]).unwrap(), vec![0.3]);
        let whole = ParameterSet::whole_space(2);
        assert_eq!(whole.project(&[3.0, -7.0]).unwrap(), vec![3.0, -7.0]);
        let ball = ParameterSet::ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = ball.project(&[3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let unit = ParameterSet::cube(2, 0.0, 1.0);
        assert!(matches!(unit.project(&[0.5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(ParameterSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(ParameterSet::ball(vec![0.0], 0.0).is_err());
    }

    fn arb_set() -> impl Strategy<Value = ParameterSet> {
        prop_oneof![
            (1usize..4).prop_map(ParameterSet::whole_space),
            prop::collection::vec((-3.0..3.0f64, 0.0..4.0f64), 1..4).prop_map(|v| {
                let lo: Vec<f64> = v.iter().map(|p| p.0).collect();
                let hi: Vec<f64> = v.iter().map(|p| p.0 + p.1).collect();
                ParameterSet::boxed(lo, hi).unwrap()
            }),
            (prop::collection::vec(-3.0..3.0f64, 1..4), 0.1..5.0f64)
                .prop_map(|(c, r)| ParameterSet::ball(c, r).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            set in arb_set(),
            a in prop::collection::vec(-10.0..10.0f64, 3),
            b in prop::collection::vec(-10.0..10.0f64, 3),
        ) {
            let d = set.dim();
            let (a, b) = (&a[..d], &b[..d]);
            let pa = set.project(a).unwrap();
            let pb = set.project(b).unwrap();
            prop_assert!(set.contains(&pa, 1e-12));
            let ppa = set.project(&pa).unwrap();
            prop_assert!(linalg::dist(&pa, &ppa) <= 1e-12);
            prop_assert!(linalg::dist(&pa, &pb) <= linalg::dist(a, b) + 1e-12);
        }
    }
}
