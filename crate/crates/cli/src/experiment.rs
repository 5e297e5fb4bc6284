//! Turns a config into an environment, runs the chosen algorithm and computes
//! the report metrics.

use gaps::baps::{run_baps, BapsConfig};
use gaps::contraction::{default_probe_radius, estimate_contraction, ContractionEstimate};
use gaps::envs::{
    ftl_confidence_baseline, make_dac_env, make_fig2_env, make_horizon_selection_env, make_pendulum_env,
    run_lqr_baseline, ConfidenceMpcEnv, DacEnv, DisturbanceKind, DisturbanceSpec, HorizonSelection, LinearFeedbackEnv,
    PendulumEnv, RandomSmoothSystem,
};
use gaps::gaps::{convex_learning_rate, default_buffer_length, nonconvex_learning_rate, run_gaps, GapsConfig};
use gaps::metrics::{self, RegretReport, SampleDomain};
use gaps::oracles::{ideal_gradients_along, run_ideal_ogd, surrogate_along, surrogate_table};
use gaps::rng;
use gaps::system::{rollout_constant, ControlSystem, Dims, ParameterSet, Trajectory};
use log::{info, warn};
use serde::Serialize;

use crate::config::{AlgorithmSpec, EnvSpec, ExperimentConfig, LearningRate, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::output::TRACE_SCHEMA_VERSION;

/// Adaptive regret is skipped above this many `(t1, t2, grid point)` triples.
pub const ADAPTIVE_REGRET_BUDGET: f64 = 2e9;
const VARIATION_SAMPLES: usize = 200;

pub enum Env {
    Confidence(ConfidenceMpcEnv),
    Horizon(HorizonSelection),
    Pendulum(PendulumEnv),
    Dac(DacEnv),
    Linear(LinearFeedbackEnv),
    Smooth(RandomSmoothSystem),
}

impl Env {
    pub fn build(spec: &EnvSpec, horizon: usize, seed: u64) -> Result<Env> {
        if horizon == 0 {
            return Err(CliError::Config("horizon must be positive".into()));
        }
        Ok(match spec {
            EnvSpec::Fig2 { options } => Env::Confidence(make_fig2_env(horizon, seed, options)?),
            EnvSpec::Pendulum { disturbance, options } => {
                let spec = DisturbanceSpec::new(disturbance.clone(), 0);
                Env::Pendulum(make_pendulum_env(horizon, &spec, seed, options)?)
            }
            EnvSpec::Dac { options } => Env::Dac(make_dac_env(horizon, seed, options)?),
            EnvSpec::HorizonSelection { horizons, options } => {
                Env::Horizon(make_horizon_selection_env(horizons, horizon, seed, options)?)
            }
            EnvSpec::LinearScalar { options: o } => {
                let w = DisturbanceKind::IidGaussian { sigma: o.sigma_w }
                    .sample(horizon, 1, &mut rng::stream(seed, "linear_scalar/disturbance"))
                    .into_iter()
                    .map(|v| v[0])
                    .collect();
                let set = ParameterSet::boxed(vec![o.gain_lo], vec![o.gain_hi])?;
                Env::Linear(LinearFeedbackEnv::scalar(o.a, o.b, o.q, o.r, w, o.x0, set))
            }
            EnvSpec::RandomSmooth { options: o } => {
                let dims = Dims { n: o.n, m: o.m, d: o.d };
                if o.n == 0 || o.m == 0 || o.d == 0 {
                    return Err(CliError::Config("random_smooth dimensions must be positive".into()));
                }
                let mut stream = rng::stream(seed, "random_smooth/system");
                Env::Smooth(RandomSmoothSystem::sample(&mut stream, dims, horizon))
            }
        })
    }

    pub fn system(&self) -> &dyn ControlSystem {
        match self {
            Env::Confidence(e) => e,
            Env::Horizon(h) => &h.env,
            Env::Pendulum(e) => e,
            Env::Dac(e) => e,
            Env::Linear(e) => e,
            Env::Smooth(e) => e,
        }
    }
}

/// Midpoint of a box, centre of a ball, origin of the whole space.
pub fn set_center(set: &ParameterSet) -> Vec<f64> {
    match set {
        ParameterSet::WholeSpace { dim } => vec![0.0; *dim],
        ParameterSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        ParameterSet::Ball { center, .. } => center.clone(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BapsSummary {
    pub batch: usize,
    pub eta: f64,
    pub final_distribution: Vec<f64>,
    /// Number of batches each arm was played.
    pub arm_counts: Vec<usize>,
    /// Arm with the lowest offline total cost on this instance.
    pub best_arm: usize,
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub baps: Option<BapsSummary>,
    /// Parameters a regret comparison should range over, when the algorithm
    /// restricts itself to a finite set.
    pub arms: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
}

/// Probe radius from the settings or from closed-loop probe runs.
pub fn probe_radius(cfg: &ExperimentConfig, system: &dyn ControlSystem) -> Result<f64> {
    if let Some(r) = cfg.contraction.probe_radius {
        return Ok(r);
    }
    let set = system.parameter_set();
    let mut stream = rng::stream(cfg.seed, "contraction/probe");
    let r = default_probe_radius(system, &set, cfg.contraction.eps, 4, &mut stream)?;
    Ok(r.max(1e-6))
}

pub fn contraction_estimate(cfg: &ExperimentConfig, system: &dyn ControlSystem) -> Result<ContractionEstimate> {
    let settings = &cfg.contraction;
    let radius = probe_radius(cfg, system)?;
    let horizon = settings.horizon.min(system.horizon().saturating_sub(1)).max(1);
    let mut stream = rng::stream(cfg.seed, "contraction/pairs");
    let est = estimate_contraction(
        system,
        &system.parameter_set(),
        settings.eps,
        radius,
        settings.pairs,
        horizon,
        &mut stream,
    )?;
    info!("contraction estimate: C = {:.4}, rho = {:.5}", est.c_hat, est.rho_hat);
    Ok(est)
}

/// Runs the configured algorithm. Defaults that depend on the environment
/// (initial parameter, schedules, BAPS constants) are written back into
/// `cfg.algorithm`, so the caller can dump the resolved config.
pub fn run_algorithm(cfg: &mut ExperimentConfig, env: &Env) -> Result<RunOutput> {
    let system = env.system();
    let set = system.parameter_set();
    let steps = cfg.horizon;
    let mut notes = Vec::new();
    let mut algorithm = cfg.algorithm.clone();
    let out = match &mut algorithm {
        AlgorithmSpec::Gaps {
            eta,
            learning_rate,
            buffer_len,
            theta0,
            rho_hat,
            variation,
        } => {
            if *learning_rate != LearningRate::Fixed && rho_hat.is_none() {
                *rho_hat = Some(contraction_estimate(cfg, system)?.rho_hat);
            }
            match learning_rate {
                LearningRate::Fixed => {}
                LearningRate::Convex => *eta = convex_learning_rate(steps, rho_hat.unwrap_or_default()),
                LearningRate::Nonconvex => {
                    let v = match *variation {
                        Some(v) => v,
                        None => {
                            let r = probe_radius(cfg, system)?;
                            let domain = SampleDomain {
                                state_radius: r,
                                input_radius: r,
                                parameter_radius: 1.0,
                            };
                            let mut stream = rng::stream(cfg.seed, "variation");
                            metrics::variation_intensity(system, steps, VARIATION_SAMPLES, domain, &mut stream)?
                        }
                    };
                    *variation = Some(v);
                    *eta = nonconvex_learning_rate(steps, rho_hat.unwrap_or_default(), v);
                }
            }
            let b = *buffer_len.get_or_insert_with(|| default_buffer_length(steps, *rho_hat));
            let th0 = theta0.get_or_insert_with(|| set_center(&set)).clone();
            let gcfg = GapsConfig::new(*eta, b, th0, set.clone())?;
            RunOutput {
                trajectory: run_gaps(system, &gcfg, steps)?,
                baps: None,
                arms: None,
                notes: Vec::new(),
            }
        }
        AlgorithmSpec::IdealOgd { eta, theta0 } => {
            let th0 = theta0.get_or_insert_with(|| set_center(&set)).clone();
            let gcfg = GapsConfig::new(*eta, 1, th0, set.clone())?;
            RunOutput {
                trajectory: run_ideal_ogd(system, &gcfg, steps)?,
                baps: None,
                arms: None,
                notes: Vec::new(),
            }
        }
        AlgorithmSpec::Baps {
            arms,
            batch,
            eta,
            c0,
            rho,
            d0,
        } => {
            let arm_list = match (arms.as_ref(), env) {
                (Some(a), _) => a.clone(),
                (None, Env::Horizon(h)) => h.arms.clone(),
                (None, _) => {
                    return Err(CliError::Config(
                        "baps needs an explicit `arms` list outside the horizon_selection env".into(),
                    ))
                }
            };
            if arm_list.is_empty() {
                return Err(CliError::Config("baps needs at least one arm".into()));
            }
            *arms = Some(arm_list.clone());
            let offline: Vec<Vec<f64>> = arm_list
                .iter()
                .map(|a| Ok(rollout_constant(system, a, steps, false)?.costs()))
                .collect::<Result<_>>()?;
            let rho_v = match *rho {
                Some(r) => r,
                None => contraction_estimate(cfg, system)?.rho_hat,
            };
            *rho = Some(rho_v);
            let d0_v = match *d0 {
                Some(d) => d,
                None => {
                    notes.push("d0 taken as the largest stage cost of any fixed arm on this instance".into());
                    offline
                        .iter()
                        .flatten()
                        .copied()
                        .fold(0.0, f64::max)
                        .max(f64::MIN_POSITIVE)
                }
            };
            *d0 = Some(d0_v);
            let seed = rng::derive_seed(cfg.seed, "baps");
            let mut bcfg = BapsConfig::from_constants(arm_list.len(), steps, *c0, rho_v, d0_v, seed)?;
            bcfg.batch = *batch.get_or_insert(bcfg.batch);
            bcfg.eta = *eta.get_or_insert(bcfg.eta);
            bcfg.validate()?;
            let run = run_baps(system, &arm_list, &bcfg, steps)?;
            let played = run.trajectory.len();
            let totals: Vec<f64> = offline.iter().map(|c| c[..played].iter().sum()).collect();
            let best_arm = (0..totals.len())
                .min_by(|&i, &j| totals[i].total_cmp(&totals[j]))
                .unwrap_or(0);
            let mut arm_counts = vec![0; arm_list.len()];
            for &a in &run.arms {
                arm_counts[a] += 1;
            }
            RunOutput {
                baps: Some(BapsSummary {
                    batch: bcfg.batch,
                    eta: bcfg.eta,
                    final_distribution: run.final_distribution().to_vec(),
                    arm_counts,
                    best_arm,
                }),
                trajectory: run.trajectory,
                arms: Some(arm_list),
                notes: Vec::new(),
            }
        }
        AlgorithmSpec::Ftl {} => match env {
            Env::Confidence(e) => RunOutput {
                trajectory: ftl_confidence_baseline(e, steps)?,
                baps: None,
                arms: None,
                notes: Vec::new(),
            },
            _ => return Err(CliError::Config("ftl runs only on the fig2 env".into())),
        },
        AlgorithmSpec::Lqr {} => match env {
            Env::Pendulum(e) => RunOutput {
                trajectory: run_lqr_baseline(e, steps)?,
                baps: None,
                arms: None,
                notes: Vec::new(),
            },
            _ => return Err(CliError::Config("lqr runs only on the pendulum env".into())),
        },
        AlgorithmSpec::Constant { theta } => {
            let th = theta.get_or_insert_with(|| set_center(&set)).clone();
            RunOutput {
                trajectory: rollout_constant(system, &th, steps, false)?,
                baps: None,
                arms: None,
                notes: Vec::new(),
            }
        }
    };
    cfg.algorithm = algorithm;
    let mut out = out;
    out.notes.splice(0..0, notes);
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub trace_schema_version: u32,
    pub env: String,
    pub algorithm: String,
    pub horizon: usize,
    pub seed: u64,
    pub steps_run: usize,
    pub total_cost: f64,
    pub mean_cost: f64,
    pub final_theta: Vec<f64>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_grad_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_surrogate_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baps: Option<BapsSummary>,
    pub notes: Vec<String>,
}

impl RunReport {
    /// Numeric field by name, e.g. `static_regret` or `mean_grad_bias`.
    pub fn metric(&self, name: &str) -> Option<f64> {
        serde_json::to_value(self).ok()?.get(name)?.as_f64()
    }
}

pub fn build_report(cfg: &ExperimentConfig, env: &Env, out: &RunOutput) -> Result<RunReport> {
    let system = env.system();
    let traj = &out.trajectory;
    let steps = traj.len();
    let costs = traj.costs();
    let thetas = traj.thetas();
    let mut notes = out.notes.clone();
    let m = &cfg.metrics;

    let mut regret = None;
    if steps > 0 && (m.static_regret || m.adaptive_regret) {
        let grid = match &out.arms {
            Some(a) => Ok(a.clone()),
            None => metrics::default_grid(&system.parameter_set()),
        };
        match grid {
            Ok(grid) => {
                let table = surrogate_table(system, &grid, steps)?;
                let work = (steps as f64).powi(2) * grid.len() as f64 / 2.0;
                let mut report = if m.adaptive_regret && work <= ADAPTIVE_REGRET_BUDGET {
                    metrics::static_and_adaptive_regret(&costs, &table, &grid)?
                } else {
                    if m.adaptive_regret {
                        warn!("skipping adaptive regret ({work:.2e} interval evaluations)");
                        notes.push(format!("adaptive regret skipped: {work:.2e} interval evaluations"));
                    }
                    metrics::static_only_report(&costs, &table, &grid)?
                };
                report.local_regret = None;
                regret = Some(report);
            }
            Err(e @ (gaps::Error::InvalidArgument(_) | gaps::Error::EmptyGrid)) => {
                warn!("no comparator grid: {e}");
                notes.push(format!("regret skipped: {e}"));
            }
            Err(e) => return Err(e.into()),
        }
    }

    let local_regret = if m.local_regret && steps > 0 {
        Some(metrics::local_regret(system, &thetas)?)
    } else {
        None
    };

    let has_grads = steps > 0 && traj.steps.iter().all(|s| s.grad.is_some());
    let mean_grad_bias = if m.grad_bias && has_grads {
        let ideal = ideal_gradients_along(system, &thetas)?;
        let total: f64 = traj
            .steps
            .iter()
            .zip(&ideal)
            .map(|(s, g)| gaps::linalg::dist(s.grad.as_deref().unwrap_or_default(), g))
            .sum();
        Some(total / steps as f64)
    } else {
        if m.grad_bias {
            notes.push("grad_bias needs a gradient-based algorithm".into());
        }
        None
    };

    let mean_surrogate_gap = if m.surrogate_gap && steps > 0 {
        let sur = surrogate_along(system, &thetas)?;
        Some(costs.iter().zip(&sur).map(|(f, s)| (f - s).abs()).sum::<f64>() / steps as f64)
    } else {
        None
    };

    let total_cost = traj.total_cost();
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        trace_schema_version: TRACE_SCHEMA_VERSION,
        env: cfg.env.label().into(),
        algorithm: cfg.algorithm.label().into(),
        horizon: cfg.horizon,
        seed: cfg.seed,
        steps_run: steps,
        total_cost,
        mean_cost: if steps > 0 { total_cost / steps as f64 } else { 0.0 },
        final_theta: thetas.last().cloned().unwrap_or_default(),
        regret,
        local_regret,
        mean_grad_bias,
        mean_surrogate_gap,
        baps: out.baps.clone(),
        notes,
    })
}

pub struct Experiment {
    pub resolved: ExperimentConfig,
    pub output: RunOutput,
    pub report: RunReport,
}

/// Build, run and evaluate without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<Experiment> {
    let mut resolved = cfg.clone();
    let env = Env::build(&resolved.env, resolved.horizon, resolved.seed)?;
    let output = run_algorithm(&mut resolved, &env)?;
    let report = build_report(&resolved, &env, &output)?;
    Ok(Experiment {
        resolved,
        output,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{from_json, MetricToggles};

    fn quiet(mut cfg: ExperimentConfig) -> ExperimentConfig {
        cfg.metrics = MetricToggles {
            static_regret: false,
            adaptive_regret: false,
            ..Default::default()
        };
        cfg
    }

    #[test]
    fn every_env_builds_and_runs_constant() {
        for name in [
            "fig2",
            "pendulum",
            "dac",
            "horizon_selection",
            "linear_scalar",
            "random_smooth",
        ] {
            let cfg = from_json(&format!(
                r#"{{"env": {{"name": "{name}"}}, "algorithm": {{"name": "constant"}}, "horizon": 30}}"#
            ))
            .unwrap();
            let exp = execute(&quiet(cfg)).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(exp.output.trajectory.len(), 30, "{name}");
            match &exp.resolved.algorithm {
                AlgorithmSpec::Constant { theta } => assert!(theta.is_some()),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn gaps_defaults_are_resolved() {
        let exp = execute(&ExperimentConfig::default()).unwrap();
        match &exp.resolved.algorithm {
            AlgorithmSpec::Gaps { buffer_len, theta0, .. } => {
                assert_eq!(*buffer_len, Some(gaps::gaps::DEFAULT_BUFFER_LEN));
                assert_eq!(theta0.as_deref(), Some(&[0.5][..]));
            }
            other => panic!("{other:?}"),
        }
        let r = exp.report.regret.as_ref().unwrap();
        assert!(r.static_regret.is_finite());
        assert!(r.adaptive_regret.unwrap() >= r.static_regret - 1e-9);
        assert_eq!(exp.report.metric("static_regret"), Some(r.static_regret));
    }

    #[test]
    fn convex_schedule_uses_the_estimate() {
        let cfg = from_json(r#"{"algorithm": {"name": "gaps", "learning_rate": "convex"}, "horizon": 100}"#).unwrap();
        let exp = execute(&quiet(cfg)).unwrap();
        match &exp.resolved.algorithm {
            AlgorithmSpec::Gaps { eta, rho_hat, .. } => {
                let rho = rho_hat.unwrap();
                assert!(rho > 0.0 && rho < 1.0);
                assert_eq!(*eta, convex_learning_rate(100, rho));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn baseline_env_mismatch_is_a_config_error() {
        let cfg = from_json(r#"{"algorithm": {"name": "lqr"}, "horizon": 10}"#).unwrap();
        assert_eq!(execute(&cfg).err().unwrap().exit_code(), 2);
        let cfg = from_json(r#"{"env": {"name": "dac"}, "algorithm": {"name": "baps"}, "horizon": 10}"#).unwrap();
        assert_eq!(execute(&cfg).err().unwrap().exit_code(), 2);
    }

    #[test]
    fn baps_summary_and_arm_grid() {
        let cfg = from_json(
            r#"{"env": {"name": "horizon_selection", "horizons": [1, 2, 3]}, "algorithm": {"name": "baps", "rho": 0.6}, "horizon": 400}"#,
        )
        .unwrap();
        let exp = execute(&cfg).unwrap();
        let b = exp.report.baps.as_ref().unwrap();
        assert_eq!(b.final_distribution.len(), 3);
        assert!((b.final_distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(exp.report.regret.as_ref().unwrap().grid_size, 3);
    }

    #[test]
    fn grad_bias_only_for_gradient_methods() {
        let mut cfg = from_json(r#"{"horizon": 60}"#).unwrap();
        cfg.metrics.grad_bias = true;
        cfg.metrics.surrogate_gap = true;
        let exp = execute(&cfg).unwrap();
        assert!(exp.report.mean_grad_bias.unwrap() >= 0.0);
        assert!(exp.report.mean_surrogate_gap.unwrap() >= 0.0);
        cfg.algorithm = AlgorithmSpec::Ftl {};
        let exp = execute(&cfg).unwrap();
        assert!(exp.report.mean_grad_bias.is_none());
    }
}
