//! Receding-horizon LQ control with per-lead confidence weights on the
//! disturbance predictions.
//!
//! At each step the planner solves
//!
//! ```text
//! min Σ_{i<k} (x_iᵀQx_i + u_iᵀRu_i) + x_kᵀQ̃x_k   s.t.  x_{i+1} = A x_i + B u_i + λ_i ŵ_{t+i|t}
//! ```
//!
//! and commits the first input. The optimizer is affine in the state and in
//! the weights, `u = −K x + C_t λ`, with `C_t` column `i` equal to
//! `−F_{t,i} ŵ_{t+i|t}`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, finite_horizon_lq, solve_dare, FiniteHorizonGains, Matrix};
use crate::rng;
use crate::system::{rollout, ControlSystem, Dims, ParameterSet, StepJacobians, Trajectory};

use super::disturbance::DisturbanceKind;
use rand::Rng;

/// Raw ingredients of a confidence-weighted MPC environment.
///
/// Each system matrix sequence has either one entry (time-invariant) or at
/// least `horizon + k − 1` entries.
#[derive(Clone, Debug)]
pub struct ConfidenceMpcSpec {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub q: Vec<Matrix>,
    pub r: Vec<Matrix>,
    pub q_terminal: Matrix,
    pub k: usize,
    pub x0: Vec<f64>,
    /// True disturbances `w_t`, at least `horizon` entries.
    pub disturbances: Vec<Vec<f64>>,
    /// `predictions[t][i] = ŵ_{t+i|t}`, at least `horizon` rows of `k` vectors.
    pub predictions: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
}

#[derive(Clone, Debug)]
pub struct ConfidenceMpcEnv {
    spec: ConfidenceMpcSpec,
    dims: Dims,
    /// One plan for time-invariant data, otherwise one per step.
    plans: Vec<FiniteHorizonGains>,
    /// `C_t` (m×k) for every step.
    confidence_maps: Vec<Matrix>,
}

fn at<T>(seq: &[T], t: usize) -> &T {
    &seq[t.min(seq.len() - 1)]
}

impl ConfidenceMpcEnv {
    pub fn new(spec: ConfidenceMpcSpec) -> Result<Self> {
        let (n, m, k, horizon) = (
            spec.x0.len(),
            spec.b.first().map_or(0, Matrix::cols),
            spec.k,
            spec.horizon,
        );
        if k == 0 {
            return Err(Error::InvalidArgument("planning horizon must be at least 1".into()));
        }
        let needed = horizon + k - 1;
        for (name, seq) in [("A", &spec.a), ("B", &spec.b), ("Q", &spec.q), ("R", &spec.r)] {
            if seq.is_empty() || (seq.len() != 1 && seq.len() < needed) {
                return Err(Error::InvalidArgument(format!(
                    "{name} sequence must have 1 or at least {needed} entries, got {}",
                    seq.len()
                )));
            }
        }
        if spec.disturbances.len() < horizon || spec.predictions.len() < horizon {
            return Err(Error::InvalidArgument(format!(
                "need {horizon} disturbances and prediction rows, got {} and {}",
                spec.disturbances.len(),
                spec.predictions.len()
            )));
        }
        for (w, row) in spec.disturbances.iter().zip(&spec.predictions).take(horizon) {
            check_dim("disturbance", n, w.len())?;
            check_dim("prediction row length", k, row.len())?;
            for p in row {
                check_dim("prediction", n, p.len())?;
            }
        }
        let time_invariant = [&spec.a, &spec.b, &spec.q, &spec.r].iter().all(|s| s.len() == 1);
        let plan_at = |t: usize| {
            let window = |seq: &[Matrix]| (t..t + k).map(|s| at(seq, s).clone()).collect::<Vec<_>>();
            finite_horizon_lq(
                &window(&spec.a),
                &window(&spec.b),
                &window(&spec.q),
                &window(&spec.r),
                &spec.q_terminal,
            )
        };
        let plans = if time_invariant {
            vec![plan_at(0)?]
        } else {
            (0..horizon).map(plan_at).collect::<Result<Vec<_>>>()?
        };
        let confidence_maps = (0..horizon)
            .map(|t| {
                let plan = at(&plans, t);
                let mut c = Matrix::zeros(m, k);
                for (i, pred) in spec.predictions[t].iter().enumerate() {
                    c.set_column(i, &linalg::scaled(-1.0, &plan.feedforward[i].mul_vec(pred)));
                }
                c
            })
            .collect();
        Ok(Self {
            dims: Dims { n, m, d: k },
            spec,
            plans,
            confidence_maps,
        })
    }

    pub fn spec(&self) -> &ConfidenceMpcSpec {
        &self.spec
    }

    pub fn planning_horizon(&self) -> usize {
        self.spec.k
    }

    /// Committed state-feedback gain at `t`.
    pub fn state_gain(&self, t: usize) -> &Matrix {
        &at(&self.plans, t).state_gains[0]
    }

    /// Feedforward map on the lead-`i` planned disturbance at `t`.
    pub fn feedforward(&self, t: usize, lead: usize) -> &Matrix {
        &at(&self.plans, t).feedforward[lead]
    }

    /// `C_t`: columns give the control contribution of each confidence weight.
    pub fn confidence_map(&self, t: usize) -> &Matrix {
        &self.confidence_maps[t]
    }

    pub fn disturbance(&self, t: usize) -> &[f64] {
        &self.spec.disturbances[t]
    }

    pub fn prediction(&self, t: usize, lead: usize) -> &[f64] {
        &self.spec.predictions[t][lead]
    }

    /// Weight vector trusting the first `leads` predictions and ignoring the rest.
    pub fn lead_mask(&self, leads: usize) -> Vec<f64> {
        (0..self.spec.k).map(|i| if i < leads { 1.0 } else { 0.0 }).collect()
    }
}

impl ControlSystem for ConfidenceMpcEnv {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn initial_state(&self) -> Vec<f64> {
        self.spec.x0.clone()
    }

    fn parameter_set(&self) -> ParameterSet {
        ParameterSet::cube(self.spec.k, 0.0, 1.0)
    }

    fn policy(&self, t: usize, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut u = linalg::scaled(-1.0, &self.state_gain(t).mul_vec(x));
        linalg::axpy(1.0, &self.confidence_maps[t].mul_vec(theta), &mut u);
        u
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = at(&self.spec.a, t).mul_vec(x);
        linalg::axpy(1.0, &at(&self.spec.b, t).mul_vec(u), &mut next);
        linalg::axpy(1.0, &self.spec.disturbances[t], &mut next);
        next
    }

    fn cost(&self, t: usize, x: &[f64], u: &[f64]) -> f64 {
        linalg::dot(x, &at(&self.spec.q, t).mul_vec(x)) + linalg::dot(u, &at(&self.spec.r, t).mul_vec(u))
    }

    fn jacobians(&self, t: usize, x: &[f64], theta: &[f64]) -> StepJacobians {
        let u = self.policy(t, x, theta);
        let (q, r) = (at(&self.spec.q, t), at(&self.spec.r, t));
        StepJacobians {
            dg_dx: at(&self.spec.a, t).clone(),
            dg_du: at(&self.spec.b, t).clone(),
            dpi_dx: self.state_gain(t).scale(-1.0),
            dpi_dtheta: self.confidence_maps[t].clone(),
            df_dx: (q + &q.transpose()).mul_vec(x),
            df_du: (r + &r.transpose()).mul_vec(&u),
        }
    }
}

/// Scalar `x_{t+1} = a x + b u + w` data with a DARE terminal weight.
fn scalar_spec(a: f64, b: f64, q: f64, r: f64, k: usize, horizon: usize) -> Result<ConfidenceMpcSpec> {
    let dare = solve_dare(
        &Matrix::scalar(a),
        &Matrix::scalar(b),
        &Matrix::scalar(q),
        &Matrix::scalar(r),
        1e-12,
        10_000,
    )?;
    Ok(ConfidenceMpcSpec {
        a: vec![Matrix::scalar(a)],
        b: vec![Matrix::scalar(b)],
        q: vec![Matrix::scalar(q)],
        r: vec![Matrix::scalar(r)],
        q_terminal: dare.p,
        k,
        x0: vec![0.0],
        disturbances: Vec::new(),
        predictions: Vec::new(),
        horizon,
    })
}

/// Scalar confidence experiment: `x_{t+1} = 2x + u + w`, `f = x² + u²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Options {
    pub k: usize,
    pub sigma_w: f64,
    /// Prediction noise for predictions made before `switch_time`.
    pub sigma_p_pre: f64,
    pub sigma_p_post: f64,
    pub switch_time: usize,
}

impl Default for Fig2Options {
    fn default() -> Self {
        Self {
            k: 1,
            sigma_w: 1.0,
            sigma_p_pre: 2.0,
            sigma_p_post: 0.02,
            switch_time: 100,
        }
    }
}

impl Fig2Options {
    /// Same system with a constant prediction-noise level.
    pub fn stationary(sigma_p: f64) -> Self {
        Self {
            sigma_p_pre: sigma_p,
            sigma_p_post: sigma_p,
            ..Self::default()
        }
    }
}

pub fn make_fig2_env(horizon: usize, seed: u64, opts: &Fig2Options) -> Result<ConfidenceMpcEnv> {
    let mut spec = scalar_spec(2.0, 1.0, 1.0, 1.0, opts.k, horizon)?;
    let len = horizon + opts.k;
    let mut w_rng = rng::stream(seed, "fig2/disturbance");
    spec.disturbances = DisturbanceKind::IidGaussian { sigma: opts.sigma_w }.sample(len, 1, &mut w_rng);
    let mut p_rng = rng::stream(seed, "fig2/prediction");
    let noise = DisturbanceKind::IidGaussian { sigma: 1.0 };
    spec.predictions = (0..horizon)
        .map(|t| {
            let sigma = if t < opts.switch_time {
                opts.sigma_p_pre
            } else {
                opts.sigma_p_post
            };
            (0..opts.k)
                .map(|i| {
                    let xi = noise.sample(1, 1, &mut p_rng)[0][0];
                    vec![spec.disturbances[t + i][0] + sigma * xi]
                })
                .collect()
        })
        .collect();
    ConfidenceMpcEnv::new(spec)
}

/// Horizon-selection scenario: every arm is the same MPC with a different
/// number of trusted prediction leads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonOptions {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    /// Disturbances are uniform on `[−w_bound, w_bound]`.
    pub w_bound: f64,
    /// Half-width of the uniform prediction error at each lead (last entry repeats).
    pub lead_noise: Vec<f64>,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            q: 1.0,
            r: 4.0,
            w_bound: 1.0,
            lead_noise: vec![0.0, 5.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct HorizonSelection {
    pub env: ConfidenceMpcEnv,
    pub horizons: Vec<usize>,
    /// Lead masks, one per horizon.
    pub arms: Vec<Vec<f64>>,
}

/// With a time-invariant model and the DARE weight as terminal cost, the
/// planner with horizon `h` commits exactly the input of the longest planner
/// with leads `h..` zeroed, so each arm is a 0/1 lead mask.
pub fn make_horizon_selection_env(
    horizons: &[usize],
    horizon: usize,
    seed: u64,
    opts: &HorizonOptions,
) -> Result<HorizonSelection> {
    let k = horizons
        .iter()
        .copied()
        .max()
        .filter(|&k| k > 0 && horizons.iter().all(|&h| h > 0));
    let Some(k) = k else {
        return Err(Error::InvalidArgument(
            "horizons must be a non-empty list of positive integers".into(),
        ));
    };
    if opts.lead_noise.is_empty() {
        return Err(Error::InvalidArgument("lead_noise must not be empty".into()));
    }
    let mut spec = scalar_spec(opts.a, opts.b, opts.q, opts.r, k, horizon)?;
    let mut w_rng = rng::stream(seed, "horizon/disturbance");
    spec.disturbances = DisturbanceKind::UniformBox { bound: opts.w_bound }.sample(horizon + k, 1, &mut w_rng);
    let mut p_rng = rng::stream(seed, "horizon/prediction");
    spec.predictions = (0..horizon)
        .map(|t| {
            (0..k)
                .map(|i| {
                    let half = *at(&opts.lead_noise, i);
                    let e = if half > 0.0 {
                        p_rng.random_range(-half..=half)
                    } else {
                        0.0
                    };
                    vec![spec.disturbances[t + i][0] + e]
                })
                .collect()
        })
        .collect();
    let env = ConfidenceMpcEnv::new(spec)?;
    let arms = horizons.iter().map(|&h| env.lead_mask(h)).collect();
    Ok(HorizonSelection {
        env,
        horizons: horizons.to_vec(),
        arms,
    })
}

/// Follow-the-leader on a single confidence weight.
///
/// The per-step loss of `λ` is the squared feedforward error it would have
/// caused, `‖F_t (λ ŵ_{t|t} − w_t)‖²`; its running sum is a quadratic whose
/// clamped minimizer is the next weight. Starts from `λ = 1`.
pub fn ftl_confidence_baseline(env: &ConfidenceMpcEnv, steps: usize) -> Result<Trajectory> {
    if env.planning_horizon() != 1 {
        return Err(Error::InvalidArgument("follow-the-leader baseline needs k = 1".into()));
    }
    let mut lambda = 1.0;
    let (mut cross, mut square) = (0.0, 0.0);
    let mut thetas = Vec::with_capacity(steps);
    for t in 0..steps {
        thetas.push(vec![lambda]);
        let f = env.feedforward(t, 0);
        let fp = f.mul_vec(env.prediction(t, 0));
        let fw = f.mul_vec(env.disturbance(t));
        cross += linalg::dot(&fp, &fw);
        square += linalg::dot(&fp, &fp);
        if square > 0.0 {
            lambda = (cross / square).clamp(0.0, 1.0);
        }
    }
    rollout(env, &thetas, steps, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{ideal_gradient, surrogate_cost, GradientMode};
    use crate::system::rollout_constant;

    #[test]
    fn zero_confidence_is_state_feedback() {
        let env = make_fig2_env(150, 3, &Fig2Options::default()).unwrap();
        let k = env.state_gain(0)[(0, 0)];
        assert!((k - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
        for t in [0, 50, 120] {
            assert_eq!(env.policy(t, &[0.7], &[0.0]), vec![-k * 0.7]);
        }
    }

    #[test]
    fn single_disturbance_hand_value() {
        // w_0 = 1 predicted exactly, λ = 1, everything else zero.
        let mut spec = scalar_spec(2.0, 1.0, 1.0, 1.0, 1, 3).unwrap();
        spec.disturbances = vec![vec![1.0], vec![0.0], vec![0.0]];
        spec.predictions = vec![vec![vec![1.0]], vec![vec![0.0]], vec![vec![0.0]]];
        let env = ConfidenceMpcEnv::new(spec).unwrap();
        let p = 2.0 + 5f64.sqrt();
        let x1 = 1.0 - p / (1.0 + p);
        let gain = 2.0 * p / (1.0 + p);
        let expected = x1 * x1 * (1.0 + gain * gain);
        assert!((surrogate_cost(&env, &[1.0], 1).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.131966).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictions_make_full_confidence_stationary() {
        let opts = Fig2Options {
            sigma_p_pre: 0.0,
            sigma_p_post: 0.0,
            ..Default::default()
        };
        let env = make_fig2_env(150, 8, &opts).unwrap();
        // the realized total cost is quadratic in λ with its minimizer near 1
        let slope = |lam: f64| -> f64 {
            (0..150)
                .map(|t| ideal_gradient(&env, &[lam], t, GradientMode::Chain).unwrap()[0])
                .sum()
        };
        let (at_one, at_zero) = (slope(1.0), slope(0.0));
        assert!(at_zero < 0.0);
        assert!(at_one.abs() < 0.25 * at_zero.abs(), "{at_one} vs {at_zero}");
        // and full trust is never worse than no trust
        let full = rollout_constant(&env, &[1.0], 150, false).unwrap().total_cost();
        let none = rollout_constant(&env, &[0.0], 150, false).unwrap().total_cost();
        assert!(full < none);
    }

    #[test]
    fn ftl_with_perfect_predictions_trusts_fully() {
        let opts = Fig2Options {
            sigma_p_pre: 0.0,
            sigma_p_post: 0.0,
            ..Default::default()
        };
        let env = make_fig2_env(150, 8, &opts).unwrap();
        let traj = ftl_confidence_baseline(&env, 150).unwrap();
        assert!(traj.thetas().iter().all(|th| (th[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ftl_with_uninformative_predictions_distrusts() {
        let mut finals = Vec::new();
        for seed in 0..50 {
            let mut spec = scalar_spec(2.0, 1.0, 1.0, 1.0, 1, 400).unwrap();
            let mut rng = rng::stream(seed, "test/ftl");
            let iid = DisturbanceKind::IidGaussian { sigma: 1.0 };
            spec.disturbances = iid.sample(401, 1, &mut rng);
            spec.predictions = iid.sample(400, 1, &mut rng).into_iter().map(|p| vec![p]).collect();
            let env = ConfidenceMpcEnv::new(spec).unwrap();
            let traj = ftl_confidence_baseline(&env, 400).unwrap();
            finals.push(traj.steps[399].theta[0]);
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert!(mean < 0.1, "{mean}");
    }

    #[test]
    fn horizon_arms_with_perfect_predictions_prefer_longest() {
        let opts = HorizonOptions {
            lead_noise: vec![0.0],
            ..Default::default()
        };
        let hs = make_horizon_selection_env(&[1, 2, 3, 4], 400, 1, &opts).unwrap();
        let totals: Vec<f64> = hs
            .arms
            .iter()
            .map(|arm| rollout_constant(&hs.env, arm, 400, false).unwrap().total_cost())
            .collect();
        for w in totals.windows(2) {
            assert!(w[1] <= w[0], "{totals:?}");
        }
    }

    #[test]
    fn horizon_arms_with_corrupted_long_leads_prefer_short() {
        let opts = HorizonOptions {
            lead_noise: vec![0.0, 6.0],
            ..Default::default()
        };
        let hs = make_horizon_selection_env(&[1, 2, 3], 2000, 4, &opts).unwrap();
        let totals: Vec<f64> = hs
            .arms
            .iter()
            .map(|arm| rollout_constant(&hs.env, arm, 2000, false).unwrap().total_cost())
            .collect();
        assert!(totals[0] < totals[1] && totals[0] < totals[2], "{totals:?}");
    }

    #[test]
    fn identical_horizons_give_identical_arms() {
        let hs = make_horizon_selection_env(&[1, 1, 1], 50, 2, &HorizonOptions::default()).unwrap();
        assert!(hs.arms.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn longest_plan_equals_short_plan_on_masked_leads() {
        // horizon-2 MPC on its own vs the horizon-4 planner with leads 2, 3 zeroed
        let opts = HorizonOptions::default();
        let hs = make_horizon_selection_env(&[4], 30, 6, &opts).unwrap();
        let mut spec2 = hs.env.spec().clone();
        spec2.k = 2;
        spec2.predictions = spec2.predictions.iter().map(|row| row[..2].to_vec()).collect();
        let short = ConfidenceMpcEnv::new(spec2).unwrap();
        for t in [0, 10, 29] {
            let x = [0.4];
            let a = short.policy(t, &x, &[1.0, 1.0]);
            let b = hs.env.policy(t, &x, &hs.env.lead_mask(2));
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }
}
