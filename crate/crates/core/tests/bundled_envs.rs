use gaps::baps::{run_baps, BapsConfig};
use gaps::contraction::estimate_contraction;
use gaps::envs::bundled_envs;
use gaps::gaps::{run_gaps, GapsConfig};
use gaps::linalg;
use gaps::oracles::{ideal_gradient, GradientMode};
use gaps::rng;
use gaps::system::{rollout_constant, ControlSystem, ParameterSet};

fn interior_point(set: &ParameterSet) -> Vec<f64> {
    match set {
        ParameterSet::WholeSpace { dim } => vec![0.1; *dim],
        ParameterSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| l + 0.4 * (h - l)).collect(),
        ParameterSet::Ball { center, .. } => center.clone(),
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    linalg::dist(a, b) / (1.0 + linalg::norm(b))
}

#[test]
fn frozen_gaps_gradient_is_the_surrogate_gradient() {
    // with eta = 0 and a buffer covering the whole run, G_t is exactly the
    // gradient of the frozen-parameter surrogate
    let steps = 40;
    for env in bundled_envs(3).unwrap() {
        let sys = env.system.as_ref();
        let theta = interior_point(&sys.parameter_set());
        let cfg = GapsConfig::new(0.0, steps, theta.clone(), sys.parameter_set()).unwrap();
        let traj = run_gaps(sys, &cfg, steps).unwrap();
        for t in [0, 1, 7, steps - 1] {
            let g = traj.steps[t].grad.as_ref().unwrap();
            let chain = ideal_gradient(sys, &theta, t, GradientMode::Chain).unwrap();
            assert!(rel(g, &chain) < 1e-10, "{} t={t}: {g:?} vs {chain:?}", env.name);
        }
    }
}

#[test]
fn chain_and_finite_difference_oracles_agree() {
    for env in bundled_envs(4).unwrap() {
        let sys = env.system.as_ref();
        let theta = interior_point(&sys.parameter_set());
        for t in [0, 5, 30] {
            let chain = ideal_gradient(sys, &theta, t, GradientMode::Chain).unwrap();
            let fd = ideal_gradient(sys, &theta, t, GradientMode::FiniteDiff).unwrap();
            assert!(rel(&fd, &chain) < 1e-5, "{} t={t}: {fd:?} vs {chain:?}", env.name);
        }
    }
}

#[test]
fn bundled_envs_are_reproducible() {
    let costs = |seed| -> Vec<Vec<f64>> {
        bundled_envs(seed)
            .unwrap()
            .iter()
            .map(|e| {
                let theta = interior_point(&e.system.parameter_set());
                rollout_constant(e.system.as_ref(), &theta, 50, false).unwrap().costs()
            })
            .collect()
    };
    let a = costs(11);
    assert_eq!(a, costs(11));
    let b = costs(12);
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    // every env has a random disturbance or random model
    assert_eq!(differing, a.len());
}

#[test]
fn single_arm_baps_is_a_constant_policy() {
    for env in bundled_envs(5).unwrap() {
        let sys = env.system.as_ref();
        let arm = interior_point(&sys.parameter_set());
        let cfg = BapsConfig::new(1, 10, 0.1, 9).unwrap();
        let run = run_baps(sys, std::slice::from_ref(&arm), &cfg, 100).unwrap();
        let fixed = rollout_constant(sys, &arm, 100, false).unwrap();
        assert_eq!(run.trajectory.costs(), fixed.costs(), "{}", env.name);
        assert_eq!(run.final_distribution(), &[1.0]);
    }
}

#[test]
fn bundled_envs_contract_on_their_parameter_sets() {
    // long window: the pendulum's lightly damped transient lasts a few seconds
    for env in bundled_envs(6).unwrap() {
        let sys = env.system.as_ref();
        let est = estimate_contraction(
            sys,
            &sys.parameter_set(),
            0.01,
            env.state_scale,
            60,
            250,
            &mut rng::stream(6, env.name),
        )
        .unwrap_or_else(|e| panic!("{}: {e}", env.name));
        assert!(est.rho_hat < 1.0 && est.c_hat >= 1.0, "{}: {est:?}", env.name);
    }
}
