//! Command-line entry point: training runs, ablation sweeps, checkpoint
//! diagnostics, and gradient checks.

use clap::{Parser, Subcommand};
use mvr_lab::agent::{critic_grad_check, Agent, AgentConfig, RewardVariant, StoredTransition};
use mvr_lab::config::RunConfig;
use mvr_lab::orchestrator::{run_ablation, run_diag, run_training};
use mvr_lab::relevance::{grad_check, RelevanceModel};
use mvr_lab::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mvr-lab", about = "Relevance-shaped RL laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment and write metrics + checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// key=value config overrides, applied after the file.
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Output directory (default: run_out).
        #[arg(long, default_value = "run_out")]
        out: PathBuf,
    },
    /// Sweep reward variants over seeds and summarize.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: String,
        /// Number of seeds per variant (base seed, base+1, ...).
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value = "ablation_out")]
        out: PathBuf,
    },
    /// Correlation/decay/bound diagnostics on a saved checkpoint.
    Diag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "diag.csv")]
        out: PathBuf,
    },
    /// Finite-difference checks of all analytic gradients.
    GradCheck,
}

fn load_config(path: &PathBuf, seed: Option<u64>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    cfg.apply_overrides(overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn cmd_grad_check() -> Result<()> {
    let mut worst_rel = 0.0f64;
    let mut worst_critic = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = RelevanceModel::new(3, 16, &mut rng);
        let a = mvr_lab::relevance::synthetic_sample(3, 6, 16, &mut rng);
        let b = mvr_lab::relevance::synthetic_sample(3, 6, 16, &mut rng);
        worst_rel = worst_rel.max(grad_check(&m, &a, &b, 1.0, 1e-5));

        let agent = Agent::new(3, 2, AgentConfig::default(), &mut rng)?;
        let t = StoredTransition {
            state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            task_reward: rng.gen_range(-1.0..1.0),
            terminal_bonus: 0.0,
            done: false,
        };
        worst_critic = worst_critic.max(critic_grad_check(&agent, &t, t.task_reward, 1e-5));
    }
    println!("relevance loss max relative error: {worst_rel:.3e}");
    println!("critic loss    max relative error: {worst_critic:.3e}");
    if worst_rel > 1e-4 || worst_critic > 1e-4 {
        return Err(Error::Numeric("gradient check exceeded 1e-4".into()));
    }
    println!("gradient checks passed (tolerance 1e-4)");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            overrides,
            out,
        } => {
            let cfg = load_config(&config, seed, &overrides)?;
            let (metrics, outcome) = run_training(&cfg, &out)?;
            println!("metrics written to {}", metrics.display());
            println!(
                "episodes {}  clips scored {}  final return {:.3}  success rate {:.2}",
                outcome.episodes_completed,
                outcome.clips_scored,
                outcome.final_eval.mean_return,
                outcome.final_eval.success_rate
            );
        }
        Command::Ablate {
            config,
            variants,
            seeds,
            out,
        } => {
            let cfg = load_config(&config, None, &[])?;
            let variants = variants
                .split(',')
                .map(|v| RewardVariant::parse(v.trim()))
                .collect::<Result<Vec<_>>>()?;
            let rows = run_ablation(&cfg, &variants, seeds, &out)?;
            println!(
                "{}",
                std::fs::read_to_string(out.join("summary.txt")).unwrap_or_default()
            );
            let failed = rows.iter().filter(|r| r.failed).count();
            println!("{} variants, {failed} failed", rows.len());
        }
        Command::Diag {
            config,
            checkpoint,
            out,
        } => {
            let cfg = load_config(&config, None, &[])?;
            let outcome = run_diag(&cfg, &checkpoint, &out)?;
            println!("diagnostics written to {}", out.display());
            if !outcome.shaping_active {
                println!("shaping inactive (empty reference set)");
            }
        }
        Command::GradCheck => cmd_grad_check()?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Error::Numeric(msg)) => {
            // Diagnostic dump for post-mortem inspection.
            eprintln!("numeric failure: {msg}");
            let _ = std::fs::write(
                "numeric_failure.txt",
                format!("numeric failure during run: {msg}\n"),
            );
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
