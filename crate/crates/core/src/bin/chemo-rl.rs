use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chemo_rl::agent::{evaluate, AgentKind};
use chemo_rl::config::ExperimentConfig;
use chemo_rl::env::{ChemoEnv, Observability};
use chemo_rl::harness::{self, EvalReport, Manifest, RunSpec};
use chemo_rl::Result;

#[derive(Parser)]
#[command(name = "chemo-rl", version, about = "Train and evaluate TD3 dosing agents on the chemotherapy model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent over several seeds with periodic evaluation.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Roll out a checkpoint and dump per-step trajectories.
    Trajectories(TrajectoryArgs),
    /// Tabulate final returns of training reports and external baselines.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "rtd3")]
    agent: AgentKind,
    #[arg(long, default_value = "pomdp")]
    observability: Observability,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', default_values_t = (0..10).collect::<Vec<u64>>())]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 400_000)]
    total_steps: u64,
    #[arg(long, default_value_t = 5_000)]
    eval_every: u64,
    #[arg(long, default_value_t = 25)]
    eval_episodes: usize,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Report discounted evaluation returns.
    #[arg(long)]
    discounted: bool,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// TOML configuration; defaults to the bundled one.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest written next to the checkpoint.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 25)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    discounted: bool,
    /// Override the environment/ODE settings stored in the manifest.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 30)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "trajectories")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report JSON files written by `train`.
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    /// Baseline CSVs with columns method,observability,n_seeds,final_mean,final_std.
    #[arg(long = "external")]
    external: Vec<PathBuf>,
    #[arg(long, default_value = "comparison.csv")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::bundled()),
    }
}

/// Environment for a checkpoint: the manifest's settings unless overridden.
fn checkpoint_env(manifest: &Manifest, config: Option<&Path>) -> Result<ChemoEnv> {
    let (env_cfg, ode) = match config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            (cfg.env, cfg.ode)
        }
        None => (manifest.env_config(), manifest.config.ode.clone()),
    };
    ChemoEnv::new(env_cfg, ode)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let config = load_config(a.config.as_deref())?;
            let spec = RunSpec {
                agent: a.agent,
                observability: a.observability,
                seeds: a.seeds,
                total_steps: a.total_steps,
                eval_every: a.eval_every,
                eval_episodes: a.eval_episodes,
                out_dir: a.out,
                discounted_eval: a.discounted,
                threads: a.threads,
            };
            let report = harness::run_training(&spec, &config)?;
            if let Some((mean, std)) = report.final_stats() {
                println!(
                    "{} / {}: final return {mean:.2} ± {std:.2} over {} seeds",
                    spec.agent.as_str(),
                    spec.observability.as_str(),
                    report.seeds.len()
                );
            }
            println!("report: {}", spec.report_path().display());
            Ok(report.failed.is_empty())
        }
        Command::Eval(a) => {
            let manifest = Manifest::read(&a.manifest)?;
            let agent = manifest.load_agent(&a.manifest)?;
            let env = checkpoint_env(&manifest, a.config.as_deref())?;
            let gamma = a.discounted.then_some(manifest.config.agent.gamma);
            let returns = evaluate(agent.as_ref(), &env, a.episodes, a.seed, gamma)?;
            let (mean, std) = harness::mean_std(&returns);
            println!("{} episodes: return {mean:.3} ± {std:.3}", returns.len());
            Ok(true)
        }
        Command::Trajectories(a) => {
            let manifest = Manifest::read(&a.manifest)?;
            let agent = manifest.load_agent(&a.manifest)?;
            let env = checkpoint_env(&manifest, a.config.as_deref())?;
            let report = harness::run_trajectories(agent.as_ref(), &env, a.episodes, a.seed, &a.out)?;
            let (mean, std) = harness::mean_std(&report.episode_returns);
            println!(
                "{} episodes written to {}: return {mean:.3} ± {std:.3}",
                report.episode_lengths.len(),
                a.out.display()
            );
            Ok(true)
        }
        Command::Compare(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| EvalReport::read(p))
                .collect::<Result<Vec<_>>>()?;
            let external: Vec<&Path> = a.external.iter().map(PathBuf::as_path).collect();
            let rows = harness::compare_report(&reports, &external)?;
            print!("{}", harness::write_comparison(&a.out, &rows)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more seeds failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
