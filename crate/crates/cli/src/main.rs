use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapsctl::commands::{self, out_dir};
use gapsctl::error::exit;
use gapsctl::{config, Result};

#[derive(Parser, Debug)]
#[command(name = "gapsctl", version, about = "Run gaps experiments and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Set a config value, e.g. `algorithm.eta=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VAL")]
    overrides: Vec<String>,

    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(config::ExperimentConfig, PathBuf)> {
        let cfg = config::load(self.config.as_deref(), &self.overrides)?;
        let dir = out_dir(self.out.as_deref(), &cfg);
        Ok((cfg, dir))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment.
    Run(ConfigArgs),

    /// Run one experiment per value of a config key.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,

        /// Dotted config key, e.g. `algorithm.buffer_len`.
        #[arg(long)]
        param: String,

        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,

        /// Report fields collected into summary.csv.
        #[arg(long, value_delimiter = ',', default_value = "total_cost")]
        metric: Vec<String>,

        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
    },

    /// Run the built-in correctness checks.
    Validate {
        /// Comma-separated subset: jacobians, buffer, dare, mpc, contraction.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Also write the rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },

    /// Estimate contraction constants and the stability radius of an env.
    Contraction(ConfigArgs),

    /// Fit the log-log slope of mean static regret over several horizons.
    Regret {
        #[command(flatten)]
        cfg: ConfigArgs,

        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,

        #[arg(long, default_value_t = 10)]
        seeds: usize,

        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, dir) = args.load()?;
            let report = commands::cmd_run(&cfg, &dir)?;
            println!(
                "{} / {}: T = {}, total cost {:.6e}{}",
                report.env,
                report.algorithm,
                report.steps_run,
                report.total_cost,
                report
                    .regret
                    .as_ref()
                    .map(|r| format!(", static regret {:.6e}", r.static_regret))
                    .unwrap_or_default()
            );
        }
        Command::Sweep {
            cfg,
            param,
            values,
            metric,
            jobs,
        } => {
            let (base, dir) = cfg.load()?;
            let rows = commands::cmd_sweep(&base, &param, &values, &metric, jobs, &dir)?;
            println!("{param},{}", metric.join(","));
            for r in rows {
                let cells: Vec<String> = r
                    .metrics
                    .iter()
                    .map(|m| m.map(|v| format!("{v:.6e}")).unwrap_or_default())
                    .collect();
                println!("{},{}", r.value, cells.join(","));
            }
        }
        Command::Validate { only, seed, json } => {
            commands::cmd_validate(&only, seed, json.as_deref())?;
        }
        Command::Contraction(args) => {
            let (cfg, dir) = args.load()?;
            let r = commands::cmd_contraction(&cfg, &dir)?;
            println!(
                "{}: C = {:.4}, rho = {:.5}, probe radius {:.4}, stability radius {:.4}",
                r.env, r.c_hat, r.rho_hat, r.r_c_probe, r.r_s_hat
            );
        }
        Command::Regret {
            cfg,
            horizons,
            seeds,
            jobs,
        } => {
            let (base, dir) = cfg.load()?;
            let r = commands::cmd_regret(&base, &horizons, seeds, jobs, &dir)?;
            for p in &r.points {
                println!("T = {:>8}: mean static regret {:.6e}", p.horizon, p.mean_static_regret);
            }
            println!("slope {:.4}", r.slope);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("gapsctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
