//! Bundled environments and baselines.

mod confidence;
mod dac;
mod disturbance;
mod linear;
mod pendulum;
mod smooth;

pub use confidence::{
    ftl_confidence_baseline, make_fig2_env, make_horizon_selection_env, ConfidenceMpcEnv, ConfidenceMpcSpec,
    Fig2Options, HorizonOptions, HorizonSelection,
};
pub use dac::{make_dac_env, DacEnv, DacOptions};
pub use disturbance::{DisturbanceKind, DisturbanceSpec, NoiseSegment};
pub use linear::LinearFeedbackEnv;
pub use pendulum::{make_pendulum_env, run_lqr_baseline, PendulumEnv, PendulumOptions};
pub use smooth::RandomSmoothSystem;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng;
use crate::system::{ControlSystem, Dims, ParameterSet};

/// An environment instance with a label and a typical state magnitude for
/// drawing test points.
pub struct NamedEnv {
    pub name: &'static str,
    pub system: Box<dyn ControlSystem>,
    pub state_scale: f64,
}

/// One instance of every bundled environment family.
pub fn bundled_envs(seed: u64) -> Result<Vec<NamedEnv>> {
    let horizon = 300;
    let dare = crate::linalg::solve_dare(
        &Matrix::scalar(2.0),
        &Matrix::scalar(1.0),
        &Matrix::scalar(1.0),
        &Matrix::scalar(1.0),
        1e-12,
        10_000,
    )?;
    let k = dare.k[(0, 0)];
    let mut w_stream = rng::stream(seed, "bundled/linear");
    let w = DisturbanceKind::IidGaussian { sigma: 1.0 }
        .sample(horizon, 1, &mut w_stream)
        .into_iter()
        .map(|v| v[0])
        .collect();
    let mut smooth_stream = rng::stream(seed, "bundled/smooth");
    let ou = DisturbanceSpec::new(
        DisturbanceKind::OrnsteinUhlenbeck {
            theta_ou: 0.5,
            sigma: 1.0,
            dt: 0.02,
        },
        0,
    );
    Ok(vec![
        NamedEnv {
            name: "fig2",
            system: Box::new(make_fig2_env(horizon, seed, &Fig2Options::default())?),
            state_scale: 2.0,
        },
        NamedEnv {
            name: "confidence_k3",
            system: Box::new(make_fig2_env(
                horizon,
                seed,
                &Fig2Options {
                    k: 3,
                    ..Default::default()
                },
            )?),
            state_scale: 2.0,
        },
        NamedEnv {
            name: "horizon_selection",
            system: Box::new(make_horizon_selection_env(&[1, 2, 3, 4], horizon, seed, &HorizonOptions::default())?.env),
            state_scale: 2.0,
        },
        NamedEnv {
            name: "pendulum",
            system: Box::new(make_pendulum_env(horizon, &ou, seed, &PendulumOptions::default())?),
            state_scale: 0.3,
        },
        NamedEnv {
            name: "dac",
            system: Box::new(make_dac_env(horizon, seed, &DacOptions::default())?),
            state_scale: 1.0,
        },
        NamedEnv {
            name: "linear_feedback",
            system: Box::new(LinearFeedbackEnv::scalar(
                2.0,
                1.0,
                1.0,
                1.0,
                w,
                0.0,
                ParameterSet::cube(1, k, k),
            )),
            state_scale: 2.0,
        },
        NamedEnv {
            name: "random_smooth",
            system: Box::new(RandomSmoothSystem::sample(
                &mut smooth_stream,
                Dims { n: 3, m: 2, d: 3 },
                horizon,
            )),
            state_scale: 1.0,
        },
    ])
}
