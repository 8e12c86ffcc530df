//! `dynasparse`: collect simulator rollouts, analyze Jacobian sparsity, and
//! train surrogate models.
//!
//! Set `DYNASPARSE_THREADS` to cap the worker threads.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dynasparse::cli_reports::{self, OutDir, Overrides, RunConfig, VERIFY_FILE};
use dynasparse::surrogate::LossMode;

#[derive(Parser)]
#[command(name = "dynasparse", version, about = "Jacobian sparsity of simulated dynamics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the output directory if it exists
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out a noise policy and store states, actions and Jacobians
    Collect {
        #[command(flatten)]
        common: Common,
        /// Environment: decoupled_pair, cartpole, tethered_ball, bouncer, reacher2
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Dataset directory to create
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparsity statistics of a dataset: report.json plus CSV tables
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Zero threshold for Jacobian entries
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an MLP surrogate; writes metrics.json, model.json, model.bin
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// state, state+jacobian_mse, state+jacobian_mae, state+jacobian_l1reg, state+sae
        #[arg(long)]
        loss_mode: Option<LossMode>,
        /// Zero threshold for ground-truth Jacobians in the SAE mask
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate the CSV tables from a stored report.json
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Steps written per timeseries file
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Run the finite-difference and oracle self-checks
    Verify {
        #[command(flatten)]
        common: Common,
        /// Also write verify.json into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(common: &Common, o: Overrides) -> Result<RunConfig> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    Ok(cfg.apply(&Overrides { seed: common.seed, ..o }))
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DYNASPARSE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DYNASPARSE_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("DYNASPARSE_THREADS must be a positive integer, got `{v}`");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.cmd {
        Cmd::Collect { common, env, episodes, out } => {
            let cfg = config(&common, Overrides { env, episodes, ..Default::default() })?;
            let d = cli_reports::cmd_collect(&cfg, &out, common.force)?;
            println!(
                "collected {} episodes, {} samples of {} into {}",
                d.episodes.len(),
                d.num_samples(),
                d.manifest.env,
                out.display()
            );
        }
        Cmd::Analyze { common, dataset, tau, out } => {
            let cfg = config(&common, Overrides { tau, ..Default::default() })?;
            let r = cli_reports::cmd_analyze(&cfg, &dataset, &out, common.force)?;
            let g = &r.global_zeros;
            println!(
                "{}: {} state zeros ({:.2}%), {} action zeros ({:.2}%); mean combined sparsity {:.4}",
                r.dataset.env, g.state_count, g.state_percent, g.action_count, g.action_percent, r.histogram.mean_combined
            );
        }
        Cmd::Train { common, dataset, loss_mode, tau, out } => {
            let mut cfg = config(&common, Overrides { loss_mode, ..Default::default() })?;
            if let Some(t) = tau {
                cfg.train.tau_env = t;
            }
            let m = cli_reports::cmd_train(&cfg, &dataset, &out, common.force)?;
            let (a, b) = (&m.eval.initial, &m.eval.trained);
            println!(
                "{}: test mse {:.6} -> {:.6}, model sparsity {:.4} (target {:.4})",
                m.loss_mode, a.test_mse, b.test_mse, b.model_sparsity, b.target_sparsity
            );
        }
        Cmd::Report { report, out, max_steps, force } => {
            cli_reports::cmd_report(&report, &out, force, max_steps)?;
            println!("wrote tables to {}", out.display());
        }
        Cmd::Verify { common, out } => {
            let cfg = config(&common, Overrides::default())?;
            let r = cli_reports::cmd_verify(&cfg)?;
            for c in &r.checks {
                println!(
                    "{} {:<34} max_error={:.3e} tol={:.0e}  {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_error,
                    c.tolerance,
                    c.detail
                );
            }
            if let Some(out) = out {
                let dir = OutDir::create(&out, common.force)?;
                dir.write_json(VERIFY_FILE, &r)?;
                dir.commit()?;
            }
            return Ok(r.all_passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
