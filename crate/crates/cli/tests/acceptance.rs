//! Acceptance criteria AC-1..AC-11, one PASS/FAIL line each.
//!
//! Runs with `cargo test -p gapsctl --test acceptance`. The process exits
//! nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gaps::baps::{run_baps, BapsConfig};
use gaps::envs::{make_horizon_selection_env, HorizonOptions};
use gaps::linalg::{solve_dare, Matrix};
use gaps::metrics::regret_slope;
use gaps::rng;
use gaps::system::rollout_constant;
use gaps::test_oracles::mpc_law_vs_qp;
use gapsctl::commands::{cmd_regret, cmd_sweep};
use gapsctl::config::{self, ExperimentConfig};
use gapsctl::experiment::{contraction_estimate, execute, Env};
use gapsctl::validate::{run_suites, CheckRow};
use rayon::prelude::*;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let text = std::fs::read_to_string(configs_dir().join(name)).expect("bundled config");
    let base = config::from_json(&text).expect("valid bundled config");
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::resolve(base, None, &overrides).expect("valid overrides")
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn suite_outcome(rows: &[CheckRow]) -> Outcome {
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({:.3e} > {:.1e}) {}", r.name, r.value, r.limit, r.detail))
        .collect();
    let worst = rows.iter().map(|r| r.value / r.limit).fold(0.0, f64::max);
    Outcome {
        pass: failing.is_empty() && !rows.is_empty(),
        detail: if failing.is_empty() {
            format!("{} checks, worst value/limit {:.2e}", rows.len(), worst)
        } else {
            format!("failing: {}", failing.join("; "))
        },
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let rows = run_suites(&["buffer".into()], 0).expect("suite runs");
    let elapsed = start.elapsed();
    let err = rows[0].value;
    Outcome {
        pass: rows[0].pass && within(elapsed, 10.0),
        detail: format!(
            "max |G_t - chain rule| = {err:.3e} (limit 1e-10) over 50 systems, T = 60, B in {{1, 5, 60}}; {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let base = load("fig2_bias.json", &[]);
    let values: Vec<String> = [1, 2, 4, 8, 16].iter().map(|b| b.to_string()).collect();
    let rows = cmd_sweep(
        &base,
        "algorithm.buffer_len",
        &values,
        &["mean_grad_bias".into()],
        None,
        dir.path(),
    )
    .expect("sweep runs");
    let elapsed = start.elapsed();
    let bias: Vec<f64> = rows.iter().map(|r| r.metrics[0].expect("bias recorded")).collect();
    let decreasing = bias.windows(2).all(|w| w[1] < w[0]);
    let ratio = bias[4] / bias[0];
    Outcome {
        pass: decreasing && ratio <= 0.05 && within(elapsed, 60.0),
        detail: format!(
            "mean bias for B = 1,2,4,8,16: {:?}; strictly decreasing {decreasing}; B=16/B=1 = {ratio:.4} (limit 0.05); {:.1}s",
            bias.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    }
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let etas = [4e-3, 2e-3, 1e-3];
    let seeds = 5u64;
    let gaps: Vec<f64> = etas
        .iter()
        .map(|eta| {
            let total: f64 = (0..seeds)
                .into_par_iter()
                .map(|seed| {
                    let cfg = load(
                        "fig2_bias.json",
                        &[
                            &format!("algorithm.eta={eta}"),
                            "algorithm.buffer_len=32",
                            &format!("seed={seed}"),
                            "metrics.grad_bias=false",
                        ],
                    );
                    execute(&cfg).unwrap().report.mean_surrogate_gap.unwrap()
                })
                .sum();
            total / seeds as f64
        })
        .collect();
    let elapsed = start.elapsed();
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    let ok = ratios.iter().all(|r| (1.5..=2.5).contains(r));
    Outcome {
        pass: ok && within(elapsed, 60.0),
        detail: format!(
            "mean |f_t - F_t| for eta = 4e-3,2e-3,1e-3 (B = 32, {seeds} seeds): {:.4}, {:.4}, {:.4}; ratios {:.3}, {:.3} (range [1.5, 2.5]); {:.1}s",
            gaps[0],
            gaps[1],
            gaps[2],
            ratios[0],
            ratios[1],
            elapsed.as_secs_f64()
        ),
    }
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let probe = load("fig2_slope.json", &["horizon=2000", "seed=99"]);
    let env = Env::build(&probe.env, probe.horizon, probe.seed).unwrap();
    let rho = contraction_estimate(&probe, env.system()).unwrap().rho_hat;
    let base = load("fig2_slope.json", &[&format!("algorithm.rho_hat={rho}")]);
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_regret(&base, &[1000, 4000, 16000], 10, None, dir.path()).expect("regret runs");
    let elapsed = start.elapsed();
    let pass = (0.35..=0.65).contains(&report.slope) && within(elapsed, 600.0);
    Outcome {
        pass,
        detail: format!(
            "rho_hat = {rho:.5}; mean static regret {}; slope {:.3} (range [0.35, 0.65]); {:.1}s",
            report
                .points
                .iter()
                .map(|p| format!("T={}: {:.2}", p.horizon, p.mean_static_regret))
                .collect::<Vec<_>>()
                .join(", "),
            report.slope,
            elapsed.as_secs_f64()
        ),
    }
}

fn window_mean(costs: &[f64]) -> f64 {
    costs[150..200].iter().sum::<f64>() / 50.0
}

fn ac5() -> Outcome {
    let results: Vec<(bool, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let gaps_cfg = load("fig2.json", &[&format!("seed={seed}")]);
            let ftl_cfg = load("fig2_ftl.json", &[&format!("seed={seed}")]);
            let g = execute(&gaps_cfg).unwrap();
            let f = execute(&ftl_cfg).unwrap();
            let gc = window_mean(&g.output.trajectory.costs());
            let fc = window_mean(&f.output.trajectory.costs());
            (gc <= fc, g.report.final_theta[0])
        })
        .collect();
    let wins = results.iter().filter(|r| r.0).count();
    let lambdas: Vec<f64> = results.iter().map(|r| r.1).collect();
    let mean_lambda = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let min_lambda = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let below = lambdas.iter().filter(|&&l| l < 0.8).count();
    Outcome {
        pass: wins >= 15 && mean_lambda >= 0.8,
        detail: format!(
            "GAPS window cost <= FTL in {wins}/20 seeds (need 15); lambda at t=200 mean {mean_lambda:.3} (need 0.8), min {min_lambda:.3}, {below}/20 seeds below 0.8"
        ),
    }
}

fn ac6() -> Outcome {
    let run = |file: &str, seed: u64| -> (f64, f64) {
        let seed = format!("seed={seed}");
        let g = execute(&load(file, &[&seed])).unwrap().report.total_cost;
        let l = execute(&load(file, &[&seed, r#"algorithm={"name":"lqr"}"#]))
            .unwrap()
            .report
            .total_cost;
        (g, l)
    };
    let iid: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let (g, l) = run("pendulum_iid.json", s);
            g / l
        })
        .collect();
    let ou: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let (g, l) = run("pendulum_ou.json", s);
            g / l
        })
        .collect();
    let iid_mean = iid.iter().sum::<f64>() / 20.0;
    let iid_max = iid.iter().copied().fold(0.0, f64::max);
    let ou_wins = ou.iter().filter(|&&r| r < 1.0).count();
    let ou_mean = ou.iter().sum::<f64>() / 20.0;
    Outcome {
        pass: iid_mean <= 1.10 && ou_wins >= 15,
        detail: format!(
            "iid: mean GAPS/LQR cost ratio {iid_mean:.4} (limit 1.10), per-seed max {iid_max:.4}; OU: GAPS < LQR in {ou_wins}/20 seeds (need 15), mean ratio {ou_mean:.4}"
        ),
    }
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let opts = HorizonOptions::default();
    let horizons: Vec<usize> = (1..=8).collect();
    let seeds = 200u64;
    let probe_len = 20_000;
    let probe = make_horizon_selection_env(&horizons, probe_len, 12_345, &opts).unwrap();
    let rho = opts.a - opts.b * probe.env.state_gain(0)[(0, 0)];
    let d0 = probe
        .arms
        .iter()
        .map(|arm| {
            rollout_constant(&probe.env, arm, probe_len, false)
                .unwrap()
                .costs()
                .into_iter()
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let mut points = Vec::new();
    let mut final_mass = 0.0;
    let mut details = Vec::new();
    for t_len in [5_000usize, 20_000, 80_000] {
        let tuned = BapsConfig::from_constants(horizons.len(), t_len, 1.0, rho, d0, 0).unwrap();
        let runs: Vec<(f64, f64)> = (0..seeds)
            .into_par_iter()
            .map(|seed| {
                let sel = make_horizon_selection_env(&horizons, t_len, seed, &opts).unwrap();
                let cfg = BapsConfig {
                    seed: rng::derive_seed(seed, "baps"),
                    ..tuned.clone()
                };
                let run = run_baps(&sel.env, &sel.arms, &cfg, t_len).unwrap();
                let played = run.trajectory.len();
                let totals: Vec<f64> = sel
                    .arms
                    .iter()
                    .map(|a| rollout_constant(&sel.env, a, played, false).unwrap().total_cost())
                    .collect();
                let best = (0..totals.len())
                    .min_by(|&i, &j| totals[i].total_cmp(&totals[j]))
                    .unwrap();
                (
                    run.trajectory.total_cost() - totals[best],
                    run.final_distribution()[best],
                )
            })
            .collect();
        let mean_regret = runs.iter().map(|r| r.0).sum::<f64>() / seeds as f64;
        let mass = runs.iter().map(|r| r.1).sum::<f64>() / seeds as f64;
        details.push(format!(
            "T={t_len}: b={}, regret {mean_regret:.1}, mass {mass:.3}",
            tuned.batch
        ));
        points.push((t_len as f64, mean_regret));
        final_mass = mass;
    }
    let slope = regret_slope(&points);
    let elapsed = start.elapsed();
    let pass = matches!(slope, Ok(s) if s <= 0.85) && final_mass >= 0.6;
    Outcome {
        pass,
        detail: format!(
            "rho = {rho:.4}, d0 = {d0:.2}; {}; slope {} (limit 0.85); mass on best arm at T=8e4 {final_mass:.3} (need 0.6); {:.1}s",
            details.join("; "),
            match slope {
                Ok(s) => format!("{s:.3}"),
                Err(e) => e.to_string(),
            },
            elapsed.as_secs_f64()
        ),
    }
}

fn ac8() -> Outcome {
    let qp_err = mpc_law_vs_qp(&mut rng::stream(0, "acceptance/mpc"), 50).unwrap();
    let one = Matrix::scalar(1.0);
    let sol = solve_dare(&Matrix::scalar(2.0), &one, &one, &one, 1e-14, 10_000).unwrap();
    let p_err = (sol.p[(0, 0)] - (2.0 + 5f64.sqrt())).abs();
    Outcome {
        pass: qp_err <= 1e-7 && p_err <= 1e-9 && sol.residual < 1e-10,
        detail: format!(
            "affine law vs QP max rel error {qp_err:.3e} (limit 1e-7, 50 instances); |P - (2+sqrt5)| = {p_err:.3e} (limit 1e-9); residual {:.3e} (limit 1e-10)",
            sol.residual
        ),
    }
}

fn ac9() -> Outcome {
    suite_outcome(&run_suites(&["contraction".into()], 0).unwrap())
}

fn ac10() -> Outcome {
    let rows = run_suites(&["jacobians".into()], 0).unwrap();
    let mut out = suite_outcome(&rows);
    out.detail = format!("{} bundled envs x 200 points, rel_tol 1e-5: {}", rows.len(), out.detail);
    out
}

fn ac11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gapsctl");
    let cfg = configs_dir().join("fig2.json");
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env_remove(config::SEED_ENV_VAR)
            .output()
            .expect("spawn gapsctl")
            .status;
        if !status.success() {
            return Outcome {
                pass: false,
                detail: format!("gapsctl run exited with {status}"),
            };
        }
        traces.push(std::fs::read(out.join("trace.csv")).unwrap());
    }
    Outcome {
        pass: traces[0] == traces[1] && !traces[0].is_empty(),
        detail: format!(
            "two runs of fig2.json: {} bytes each, identical {}",
            traces[0].len(),
            traces[0] == traces[1]
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("AC-1", ac1),
        ("AC-2", ac2),
        ("AC-3", ac3),
        ("AC-4", ac4),
        ("AC-5", ac5),
        ("AC-6", ac6),
        ("AC-7", ac7),
        ("AC-8", ac8),
        ("AC-9", ac9),
        ("AC-10", ac10),
        ("AC-11", ac11),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC-")).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{name} {}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
