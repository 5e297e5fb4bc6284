//! Batched exponential-weights selection over a finite set of parameters.
//!
//! Time is cut into batches of `b` steps. At each batch start one arm is drawn
//! from the current distribution and held for the whole batch; the batch's
//! summed stage cost, divided by the arm's probability, is charged to that arm
//! alone and the distribution is updated multiplicatively.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::system::{check_state, ControlSystem, Step, Trajectory, DEFAULT_BLOWUP_CAP};

/// Above this exponent the update is carried out on log-weights.
const LOG_SPACE_THRESHOLD: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BapsConfig {
    pub k: usize,
    /// Batch length `b`.
    pub batch: usize,
    pub eta: f64,
    pub seed: u64,
}

impl BapsConfig {
    pub fn new(k: usize, batch: usize, eta: f64, seed: u64) -> Result<Self> {
        let cfg = Self { k, batch, eta, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("need at least one arm".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch length must be at least 1".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Batch length and step size tuned for a horizon of `horizon` steps from
    /// the decay constants `(c0, rho)` and a stage-cost bound `d0`:
    ///
    /// ```text
    /// b = (c0² d0 T / ((1 − ρ)² k ln k))^{1/3}
    /// η = ((1 − ρ)(ln k)² / (c0 d0² k T²))^{1/3}
    /// ```
    pub fn from_constants(k: usize, horizon: usize, c0: f64, rho: f64, d0: f64, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument("tuned parameters need k >= 2".into()));
        }
        if !(rho > 0.0 && rho < 1.0) || !(c0 >= 1.0) || !(d0 > 0.0) || horizon == 0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < rho < 1, c0 >= 1, d0 > 0, T > 0 (got rho = {rho}, c0 = {c0}, d0 = {d0}, T = {horizon})"
            )));
        }
        let (kf, t) = (k as f64, horizon as f64);
        let log_k = kf.ln();
        let gap = 1.0 - rho;
        let batch = (c0 * c0 * d0 * t / (gap * gap * kf * log_k)).cbrt().round().max(1.0) as usize;
        let eta = (gap * log_k * log_k / (c0 * d0 * d0 * kf * t * t)).cbrt();
        let settle = settling_steps(c0, rho);
        if batch < settle {
            warn!("batch length {batch} is shorter than the estimated settling time {settle}");
        }
        Self::new(k, batch, eta, seed)
    }
}

/// Steps until a perturbation bounded by `c ρ^τ` falls below half its initial size.
pub fn settling_steps(c: f64, rho: f64) -> usize {
    ((2.0 * c).ln() / (1.0 / rho).ln()).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BapsState {
    pub probs: Vec<f64>,
    pub batch_index: usize,
}

impl BapsState {
    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
            batch_index: 0,
        }
    }
}

/// Importance-weighted multiplicative update after playing `arm` for one batch.
pub fn baps_update(probs: &[f64], arm: usize, batch_cost: f64, eta: f64) -> Result<Vec<f64>> {
    let p = *probs
        .get(arm)
        .ok_or_else(|| Error::InvalidArgument(format!("arm {arm} out of range")))?;
    if !(p > 0.0) {
        return Err(Error::ZeroProbabilitySampled { arm });
    }
    let exponent = eta * batch_cost / p;
    if exponent == 0.0 {
        return Ok(probs.to_vec());
    }
    let weights: Vec<f64> = if exponent > LOG_SPACE_THRESHOLD {
        let logs: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &s)| s.ln() - if j == arm { exponent } else { 0.0 })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - top).exp()).collect()
    } else {
        probs
            .iter()
            .enumerate()
            .map(|(j, &s)| if j == arm { s * (-exponent).exp() } else { s })
            .collect()
    };
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_arm<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct BapsRun {
    pub trajectory: Trajectory,
    /// Arm played in each batch.
    pub arms: Vec<usize>,
    /// Distribution at the start of each batch, then the final one.
    pub distributions: Vec<Vec<f64>>,
}

impl BapsRun {
    pub fn final_distribution(&self) -> &[f64] {
        self.distributions.last().expect("at least the initial distribution")
    }
}

pub fn run_baps<S: ControlSystem + ?Sized>(
    system: &S,
    arms: &[Vec<f64>],
    config: &BapsConfig,
    steps: usize,
) -> Result<BapsRun> {
    config.validate()?;
    check_dim("arm count", config.k, arms.len())?;
    for arm in arms {
        check_dim("arm parameter", system.dims().d, arm.len())?;
    }
    if steps > system.horizon() {
        return Err(Error::InvalidArgument(format!(
            "requested {steps} steps but system horizon is {}",
            system.horizon()
        )));
    }
    let batches = steps / config.batch;
    if batches * config.batch != steps {
        warn!(
            "horizon {steps} is not a multiple of batch length {}; running {} steps",
            config.batch,
            batches * config.batch
        );
    }
    let mut stream = rng::stream(config.seed, "baps/sampling");
    let mut state = BapsState::uniform(config.k);
    let mut distributions = Vec::with_capacity(batches + 1);
    let mut played = Vec::with_capacity(batches);
    let mut out = Vec::with_capacity(batches * config.batch);
    let mut x = system.initial_state();
    for _ in 0..batches {
        distributions.push(state.probs.clone());
        let arm = sample_arm(&state.probs, &mut stream);
        let theta = &arms[arm];
        let mut batch_cost = 0.0;
        for _ in 0..config.batch {
            let t = out.len();
            check_state(t, &x, DEFAULT_BLOWUP_CAP)?;
            let u = system.policy(t, &x, theta);
            let cost = system.cost(t, &x, &u);
            let next = system.dynamics(t, &x, &u);
            batch_cost += cost;
            out.push(Step {
                t,
                x,
                u,
                theta: theta.clone(),
                cost,
                jac: None,
                grad: None,
            });
            x = next;
        }
        state.probs = baps_update(&state.probs, arm, batch_cost, config.eta)?;
        state.batch_index += 1;
        played.push(arm);
    }
    distributions.push(state.probs);
    Ok(BapsRun {
        trajectory: Trajectory {
            steps: out,
            final_state: x,
        },
        arms: played,
        distributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::system::{rollout_constant, Dims, ParameterSet, StepJacobians};
    use proptest::prelude::*;

    /// Stage cost equals `θ²` regardless of state.
    struct FlatCost {
        horizon: usize,
    }

    impl ControlSystem for FlatCost {
        fn dims(&self) -> Dims {
            Dims { n: 1, m: 1, d: 1 }
        }
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn initial_state(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn parameter_set(&self) -> ParameterSet {
            ParameterSet::cube(1, 0.0, 1.0)
        }
        fn policy(&self, _t: usize, _x: &[f64], theta: &[f64]) -> Vec<f64> {
            theta.to_vec()
        }
        fn dynamics(&self, _t: usize, x: &[f64], _u: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn cost(&self, _t: usize, _x: &[f64], u: &[f64]) -> f64 {
            u[0] * u[0]
        }
        fn jacobians(&self, _t: usize, _x: &[f64], theta: &[f64]) -> StepJacobians {
            StepJacobians {
                dg_dx: Matrix::identity(1),
                dg_du: Matrix::zeros(1, 1),
                dpi_dx: Matrix::zeros(1, 1),
                dpi_dtheta: Matrix::identity(1),
                df_dx: vec![0.0],
                df_du: vec![2.0 * theta[0]],
            }
        }
    }

    #[test]
    fn hand_computed_update() {
        let s = baps_update(&[0.5, 0.5], 0, 1.0, 0.1).unwrap();
        let e = (-0.2f64).exp();
        assert!((e - 0.818731).abs() < 1e-6);
        assert!((s[0] - 0.5 * e / (0.5 * e + 0.5)).abs() < 1e-15);
        assert!((s[0] - 0.45017).abs() < 1e-5 && (s[1] - 0.54983).abs() < 1e-5);
    }

    #[test]
    fn zero_loss_or_zero_rate_is_identity() {
        let s = [0.2, 0.3, 0.5];
        assert_eq!(baps_update(&s, 1, 0.0, 0.3).unwrap(), s.to_vec());
        assert_eq!(baps_update(&s, 1, 7.0, 0.0).unwrap(), s.to_vec());
    }

    #[test]
    fn zero_probability_arm_rejected() {
        assert!(matches!(
            baps_update(&[0.0, 1.0], 0, 1.0, 0.1),
            Err(Error::ZeroProbabilitySampled { arm: 0 })
        ));
    }

    #[test]
    fn log_space_update_handles_huge_losses() {
        let s = baps_update(&[0.5, 0.5], 0, 1e6, 1.0).unwrap();
        assert_eq!(s[1], 1.0);
        assert!(s[0] >= 0.0 && s.iter().all(|p| p.is_finite()));
    }

    proptest! {
        #[test]
        fn update_preserves_distribution(
            raw in prop::collection::vec(0.01..1.0f64, 2..6),
            arm_seed in 0usize..100,
            cost in 0.0..1e4f64,
            eta in 0.0..2.0f64,
        ) {
            let total: f64 = raw.iter().sum();
            let s: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let arm = arm_seed % s.len();
            let next = baps_update(&s, arm, cost, eta).unwrap();
            prop_assert!(next.iter().all(|&p| p >= 0.0));
            prop_assert!((next.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_estimator_is_unbiased() {
        // E_j~s[ℓ̂(i)] = s_i · c_i / s_i = c_i
        for k in 2..=3 {
            let s: Vec<f64> = (1..=k).map(|j| j as f64).collect();
            let total: f64 = s.iter().sum();
            let s: Vec<f64> = s.iter().map(|v| v / total).collect();
            let costs: Vec<f64> = (0..k).map(|j| 0.3 + j as f64).collect();
            for i in 0..k {
                let expected: f64 = (0..k).map(|j| s[j] * if i == j { costs[j] / s[j] } else { 0.0 }).sum();
                assert!((expected - costs[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_arm_is_constant_rollout() {
        let sys = FlatCost { horizon: 100 };
        let run = run_baps(&sys, &[vec![0.4]], &BapsConfig::new(1, 10, 0.5, 3).unwrap(), 100).unwrap();
        let reference = rollout_constant(&sys, &[0.4], 100, false).unwrap();
        assert_eq!(run.trajectory.costs(), reference.costs());
        assert!(run.arms.iter().all(|&a| a == 0));
    }

    #[test]
    fn truncates_partial_batch() {
        let sys = FlatCost { horizon: 100 };
        let run = run_baps(
            &sys,
            &[vec![0.4], vec![0.1]],
            &BapsConfig::new(2, 30, 0.1, 3).unwrap(),
            100,
        )
        .unwrap();
        assert_eq!(run.trajectory.len(), 90);
        assert_eq!(run.arms.len(), 3);
        assert_eq!(run.distributions.len(), 4);
    }

    fn two_arm_run(seed: u64, horizon: usize) -> BapsRun {
        // costs 0.1 and 1.0 per step
        let sys = FlatCost { horizon };
        let arms = [vec![0.1f64.sqrt()], vec![1.0]];
        let cfg = BapsConfig::from_constants(2, horizon, 1.0, 0.5, 1.0, seed).unwrap();
        run_baps(&sys, &arms, &cfg, horizon).unwrap()
    }

    #[test]
    fn two_arms_concentrate_on_cheaper() {
        let run = two_arm_run(1, 20_000);
        assert!(run.final_distribution()[0] > 0.9, "{:?}", run.final_distribution());
    }

    #[test]
    fn beats_uniform_random_selection_on_average() {
        let horizon = 2000;
        let mean: f64 = (0..200)
            .map(|s| two_arm_run(s, horizon).trajectory.total_cost())
            .sum::<f64>()
            / 200.0;
        let uniform = 0.55 * horizon as f64;
        assert!(mean < uniform, "{mean} vs {uniform}");
    }

    #[test]
    fn tuned_parameters_follow_formula() {
        let cfg = BapsConfig::from_constants(8, 80_000, 1.2, 0.4, 10.0, 0).unwrap();
        let b = (1.44 * 10.0 * 80_000.0 / (0.36 * 8.0 * 8f64.ln())).cbrt();
        assert_eq!(cfg.batch, b.round() as usize);
        let eta = (0.6 * 8f64.ln().powi(2) / (1.2 * 100.0 * 8.0 * 6.4e9)).cbrt();
        assert!((cfg.eta - eta).abs() < 1e-15);
    }
}
