//! Self-checks behind `gapsctl validate`.

use gaps::contraction::estimate_contraction;
use gaps::envs::{bundled_envs, LinearFeedbackEnv};
use gaps::linalg::{dare_residual, solve_dare, Matrix};
use gaps::rng::{self, SimRng};
use gaps::system::{check_jacobians, ControlSystem, ParameterSet};
use gaps::test_oracles::{buffer_vs_chain_rule, mpc_law_vs_qp};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SUITES: [&str; 5] = ["jacobians", "buffer", "dare", "mpc", "contraction"];

pub const JACOBIAN_POINTS: usize = 200;
pub const JACOBIAN_REL_TOL: f64 = 1e-5;
pub const JACOBIAN_STEP: f64 = 1e-6;
pub const BUFFER_TOL: f64 = 1e-10;
pub const MPC_TOL: f64 = 1e-7;
pub const DARE_P_TOL: f64 = 1e-9;
pub const DARE_RESIDUAL_TOL: f64 = 1e-10;
pub const GOLDEN_RATE: f64 = 0.381_966;
pub const RATE_TOL: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, limit: f64) -> Self {
        CheckRow {
            suite,
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
            detail: String::new(),
        }
    }

    fn errored(suite: &'static str, name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        CheckRow {
            suite,
            name: name.into(),
            value: f64::NAN,
            limit: f64::NAN,
            pass: false,
            detail: err.to_string(),
        }
    }
}

/// Runs the named suites (all of them when `only` is empty).
pub fn run_suites(only: &[String], seed: u64) -> Result<Vec<CheckRow>> {
    for s in only {
        if !SUITES.contains(&s.as_str()) {
            return Err(CliError::Config(format!(
                "unknown suite {s:?}; expected one of {}",
                SUITES.join(", ")
            )));
        }
    }
    let selected = |s: &str| only.is_empty() || only.iter().any(|o| o == s);
    let mut rows = Vec::new();
    for suite in SUITES.into_iter().filter(|s| selected(s)) {
        let mut stream = rng::stream(seed, &format!("validate/{suite}"));
        let found = match suite {
            "jacobians" => jacobian_suite(seed),
            "buffer" => vec![match buffer_vs_chain_rule(&mut stream, 50, 60, &[1, 5, 60], 0.05) {
                Ok(err) => CheckRow::at_most(suite, "buffer vs chain rule (50 systems)", err, BUFFER_TOL),
                Err(e) => CheckRow::errored(suite, "buffer vs chain rule (50 systems)", e),
            }],
            "dare" => dare_suite(),
            "mpc" => vec![match mpc_law_vs_qp(&mut stream, 50) {
                Ok(err) => CheckRow::at_most(suite, "affine law vs dense QP (50 instances)", err, MPC_TOL),
                Err(e) => CheckRow::errored(suite, "affine law vs dense QP (50 instances)", e),
            }],
            "contraction" => contraction_suite(&mut stream),
            _ => unreachable!(),
        };
        rows.extend(found);
    }
    Ok(rows)
}

/// Finite-difference checks of every Jacobian block at random points.
pub fn check_env_jacobians<S: ControlSystem + ?Sized>(
    name: &str,
    system: &S,
    state_scale: f64,
    points: usize,
    stream: &mut SimRng,
) -> CheckRow {
    let dims = system.dims();
    let set = system.parameter_set();
    let mut worst: f64 = 0.0;
    let mut failing: Vec<&'static str> = Vec::new();
    for _ in 0..points {
        let t = stream.random_range(0..system.horizon());
        let x: Vec<f64> = (0..dims.n)
            .map(|_| state_scale * Distribution::<f64>::sample(&StandardNormal, stream))
            .collect();
        let theta = set.sample_uniform(stream).unwrap_or_else(|| {
            (0..dims.d)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, stream))
                .collect()
        });
        let report = check_jacobians(system, t, &x, &theta, JACOBIAN_STEP, JACOBIAN_REL_TOL);
        worst = worst.max(report.max_error());
        for block in report.failing_blocks() {
            if !failing.contains(&block) {
                failing.push(block);
            }
        }
    }
    let mut row = CheckRow::at_most("jacobians", name, worst, JACOBIAN_REL_TOL);
    if !failing.is_empty() {
        row.pass = false;
        row.detail = format!("failing blocks: {}", failing.join(", "));
    }
    row
}

fn jacobian_suite(seed: u64) -> Vec<CheckRow> {
    let envs = match bundled_envs(seed) {
        Ok(e) => e,
        Err(e) => return vec![CheckRow::errored("jacobians", "bundled envs", e)],
    };
    envs.iter()
        .map(|env| {
            let mut stream = rng::stream(seed, &format!("validate/jacobians/{}", env.name));
            check_env_jacobians(
                env.name,
                env.system.as_ref(),
                env.state_scale,
                JACOBIAN_POINTS,
                &mut stream,
            )
        })
        .collect()
}

fn dare_suite() -> Vec<CheckRow> {
    let one = Matrix::scalar(1.0);
    let mut rows = Vec::new();
    match solve_dare(&Matrix::scalar(2.0), &one, &one, &one, 1e-14, 10_000) {
        Ok(sol) => {
            let p = sol.p[(0, 0)];
            rows.push(CheckRow::at_most(
                "dare",
                "scalar P = 2 + sqrt 5",
                (p - (2.0 + 5f64.sqrt())).abs(),
                DARE_P_TOL,
            ));
            rows.push(CheckRow::at_most(
                "dare",
                "scalar residual",
                sol.residual,
                DARE_RESIDUAL_TOL,
            ));
        }
        Err(e) => rows.push(CheckRow::errored("dare", "scalar", e)),
    }
    let a = Matrix::from_rows(&[&[1.0, 0.1], &[0.0, 1.0]]);
    let b = Matrix::from_rows(&[&[0.005], &[0.1]]);
    let q = Matrix::identity(2);
    let r = Matrix::scalar(0.1);
    let row = solve_dare(&a, &b, &q, &r, 1e-14, 100_000)
        .and_then(|sol| dare_residual(&a, &b, &q, &r, &sol.p).map(|res| res / (1.0 + sol.p.frobenius_norm())));
    rows.push(match row {
        Ok(res) => CheckRow::at_most("dare", "double integrator relative residual", res, DARE_RESIDUAL_TOL),
        Err(e) => CheckRow::errored("dare", "double integrator", e),
    });
    rows
}

fn contraction_suite(stream: &mut SimRng) -> Vec<CheckRow> {
    let one = Matrix::scalar(1.0);
    let mut rows = Vec::new();
    let k = match solve_dare(&Matrix::scalar(2.0), &one, &one, &one, 1e-12, 10_000) {
        Ok(sol) => sol.k[(0, 0)],
        Err(e) => return vec![CheckRow::errored("contraction", "scalar DARE", e)],
    };
    let w: Vec<f64> = (0..300).map(|_| stream.random_range(-1.0..1.0)).collect();
    let env = LinearFeedbackEnv::scalar(2.0, 1.0, 1.0, 1.0, w, 0.0, ParameterSet::cube(1, k, k));
    rows.push(
        match estimate_contraction(&env, &env.parameter_set(), 0.1, 2.0, 100, 30, stream) {
            Ok(est) => {
                let mut row = CheckRow::at_most(
                    "contraction",
                    "DARE closed-loop rate",
                    (est.rho_hat - GOLDEN_RATE).abs(),
                    RATE_TOL,
                );
                row.detail = format!("rho_hat = {:.6}", est.rho_hat);
                row
            }
            Err(e) => CheckRow::errored("contraction", "DARE closed-loop rate", e),
        },
    );
    let unstable = LinearFeedbackEnv::scalar(2.0, 1.0, 1.0, 1.0, vec![0.0; 200], 0.0, ParameterSet::cube(1, 0.0, 0.5));
    let outcome = estimate_contraction(&unstable, &unstable.parameter_set(), 0.05, 1.0, 50, 60, stream);
    let diverged = matches!(outcome, Err(gaps::Error::Divergence { .. }));
    rows.push(CheckRow {
        suite: "contraction",
        name: "unstable gains raise Divergence".into(),
        value: if diverged { 0.0 } else { 1.0 },
        limit: 0.0,
        pass: diverged,
        detail: match outcome {
            Ok(est) => format!("unexpected estimate rho_hat = {:.4}", est.rho_hat),
            Err(e) => e.to_string(),
        },
    });
    rows
}

pub fn render_table(rows: &[CheckRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<12} {:<name_w$} {:>12} {:>10}  {}\n",
        "suite", "check", "value", "limit", "result"
    );
    for r in rows {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "{:<12} {:<name_w$} {:>12.3e} {:>10.1e}  {verdict}",
            r.suite, r.name, r.value, r.limit
        ));
        if !r.detail.is_empty() {
            out.push_str(&format!("  ({})", r.detail));
        }
        out.push('\n');
    }
    out
}
