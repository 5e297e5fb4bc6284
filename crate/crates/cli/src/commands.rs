//! Subcommand bodies. Each returns normally on success; the binary maps
//! errors to exit codes.

use std::path::{Path, PathBuf};

use gaps::contraction::estimate_stability_radius;
use gaps::metrics::regret_slope;
use gaps::rng;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::experiment::{self, Env, RunReport};
use crate::output::{self, fmt_f64};
use crate::validate::{self, CheckRow};

pub const DEFAULT_OUT_DIR: &str = "gapsctl-out";

pub fn out_dir(cli_out: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Runs one experiment and writes `trace.csv`, `report.json` and
/// `resolved_config.json` into `dir`.
pub fn cmd_run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let exp = experiment::execute(cfg)?;
    output::write_atomic(&dir.join("trace.csv"), &output::trace_csv(&exp.output.trajectory)?)?;
    output::write_json(&dir.join("resolved_config.json"), &exp.resolved)?;
    output::write_json(&dir.join("report.json"), &exp.report)?;
    info!("wrote {}", dir.display());
    Ok(exp.report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    pub metrics: Vec<Option<f64>>,
}

fn metric_toggle(metric: &str) -> Option<&'static str> {
    match metric {
        "mean_grad_bias" => Some("metrics.grad_bias=true"),
        "mean_surrogate_gap" => Some("metrics.surrogate_gap=true"),
        "local_regret" => Some("metrics.local_regret=true"),
        "static_regret" => Some("metrics.static_regret=true"),
        "adaptive_regret" => Some("metrics.adaptive_regret=true"),
        _ => None,
    }
}

fn value_dir_name(param: &str, value: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>()
    };
    format!("{}={}", clean(param), clean(value))
}

/// One run per value of `param`, each in its own subdirectory, plus
/// `summary.csv` with the requested metrics. Runs execute on `jobs` workers.
pub fn cmd_sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    metrics: &[String],
    jobs: Option<usize>,
    dir: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let mut toggles: Vec<String> = metrics
        .iter()
        .filter_map(|m| metric_toggle(m))
        .map(String::from)
        .collect();
    toggles.dedup();
    let configs: Vec<(String, ExperimentConfig)> = values
        .iter()
        .map(|v| {
            let mut overrides = toggles.clone();
            overrides.push(format!("{param}={v}"));
            Ok((v.clone(), crate::config::resolve(base.clone(), None, &overrides)?))
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let reports: Vec<Result<RunReport>> = pool.install(|| {
        configs
            .par_iter()
            .map(|(v, cfg)| cmd_run(cfg, &dir.join(value_dir_name(param, v))))
            .collect()
    });
    let mut rows = Vec::with_capacity(values.len());
    for ((v, _), report) in configs.iter().zip(reports) {
        let report = report?;
        rows.push(SweepRow {
            value: v.clone(),
            dir: dir.join(value_dir_name(param, v)),
            metrics: metrics.iter().map(|m| report.metric(m)).collect(),
        });
    }
    let mut header = vec![param.to_string()];
    header.extend(metrics.iter().cloned());
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.value.clone()];
            row.extend(r.metrics.iter().map(|m| m.map(fmt_f64).unwrap_or_default()));
            row
        })
        .collect();
    output::write_atomic(&dir.join("summary.csv"), &output::table_csv(&header, &cells)?)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub schema_version: u32,
    pub env: String,
    pub horizon: usize,
    pub seed: u64,
    pub c_hat: f64,
    pub rho_hat: f64,
    pub r_c_probe: f64,
    pub probe_radius_given: bool,
    /// Largest state norm over closed-loop runs under slow parameter sequences.
    pub r_s_hat: f64,
    pub eps: f64,
    pub samples: usize,
}

pub fn cmd_contraction(cfg: &ExperimentConfig, dir: &Path) -> Result<ContractionReport> {
    let env = Env::build(&cfg.env, cfg.horizon, cfg.seed)?;
    let system = env.system();
    let est = experiment::contraction_estimate(cfg, system)?;
    let mut stream = rng::stream(cfg.seed, "contraction/stability");
    let r_s_hat = estimate_stability_radius(
        system,
        &system.parameter_set(),
        cfg.contraction.eps,
        cfg.contraction.stability_runs,
        cfg.horizon,
        &mut stream,
    )?;
    let report = ContractionReport {
        schema_version: SCHEMA_VERSION,
        env: cfg.env.label().into(),
        horizon: cfg.horizon,
        seed: cfg.seed,
        c_hat: est.c_hat,
        rho_hat: est.rho_hat,
        r_c_probe: est.r_c_probe,
        probe_radius_given: cfg.contraction.probe_radius.is_some(),
        r_s_hat,
        eps: est.eps,
        samples: est.samples,
    };
    output::write_json(&dir.join("contraction.json"), &report)?;
    output::write_json(&dir.join("resolved_config.json"), cfg)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopePoint {
    pub horizon: usize,
    pub mean_static_regret: f64,
    pub static_regrets: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeReport {
    pub schema_version: u32,
    pub points: Vec<SlopePoint>,
    /// Least-squares slope of `ln(mean regret)` against `ln T`.
    pub slope: f64,
}

/// Mean static regret over `seeds` consecutive seeds at each horizon, and the
/// fitted log-log slope. Per-run metrics other than static regret are off.
pub fn cmd_regret(
    base: &ExperimentConfig,
    horizons: &[usize],
    seeds: usize,
    jobs: Option<usize>,
    dir: &Path,
) -> Result<SlopeReport> {
    if horizons.len() < 3 || seeds == 0 {
        return Err(CliError::Config(
            "regret needs at least three horizons and one seed".into(),
        ));
    }
    let mut cfg = base.clone();
    cfg.metrics = crate::config::MetricToggles {
        static_regret: true,
        adaptive_regret: false,
        local_regret: false,
        grad_bias: false,
        surrogate_gap: false,
    };
    let jobs_list: Vec<(usize, u64)> = horizons
        .iter()
        .flat_map(|&h| (0..seeds as u64).map(move |s| (h, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let regrets: Vec<Result<f64>> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(h, s)| {
                let mut c = cfg.clone();
                c.horizon = h;
                c.seed = base.seed.wrapping_add(s);
                let exp = experiment::execute(&c)?;
                exp.report
                    .regret
                    .map(|r| r.static_regret)
                    .ok_or_else(|| CliError::Config("static regret is unavailable for this config".into()))
            })
            .collect()
    });
    let regrets: Vec<f64> = regrets.into_iter().collect::<Result<_>>()?;
    let points: Vec<SlopePoint> = horizons
        .iter()
        .zip(regrets.chunks(seeds))
        .map(|(&h, r)| SlopePoint {
            horizon: h,
            mean_static_regret: r.iter().sum::<f64>() / r.len() as f64,
            static_regrets: r.to_vec(),
        })
        .collect();
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.horizon as f64, p.mean_static_regret))
        .collect();
    let slope = regret_slope(&xy)?;
    let report = SlopeReport {
        schema_version: SCHEMA_VERSION,
        points,
        slope,
    };
    let header: Vec<String> = ["horizon", "mean_static_regret"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| vec![p.horizon.to_string(), fmt_f64(p.mean_static_regret)])
        .collect();
    output::write_atomic(&dir.join("regret_points.csv"), &output::table_csv(&header, &rows)?)?;
    output::write_json(&dir.join("regret_slope.json"), &report)?;
    output::write_json(&dir.join("resolved_config.json"), base)?;
    Ok(report)
}

/// Runs the suites, prints the table and fails when any check fails.
pub fn cmd_validate(only: &[String], seed: u64, json_out: Option<&Path>) -> Result<Vec<CheckRow>> {
    let rows = validate::run_suites(only, seed)?;
    print!("{}", validate::render_table(&rows));
    if let Some(p) = json_out {
        output::write_json(p, &rows)?;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed { failed });
    }
    Ok(rows)
}
