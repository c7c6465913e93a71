//! Multi-seed experiment orchestration: training with periodic evaluation,
//! trajectory dumps and comparison tables.
//!
//! Every output is a pure function of the configuration and seeds, so
//! rerunning a command reproduces its files byte for byte.

mod compare;
mod stats;
mod trajectories;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{build_agent, evaluate, train, Agent, AgentKind};
use crate::config::ExperimentConfig;
use crate::env::{ChemoEnv, EnvConfig, Observability};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::replay::EpisodeBuffer;

pub use compare::{compare_report, read_external_csv, write_comparison, CompareRow, COMPARE_HEADER};
pub use stats::{aggregate, mean_std, AggregatePoint, CurvePoint, SeedCurve, STD_ESTIMATOR};
pub use trajectories::{run_trajectories, StepSummary, TrajectoryReport};

pub const TRAIN_STREAM: u64 = 1;
pub const EVAL_STREAM: u64 = 2;

/// Independent 64-bit seed number `index` of stream `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.set_word_pos(u128::from(index) * 2);
    r.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub agent: AgentKind,
    pub observability: Observability,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    /// Report discounted instead of plain episode returns.
    pub discounted_eval: bool,
    /// Seeds trained concurrently.
    pub threads: usize,
}

impl RunSpec {
    pub fn new(agent: AgentKind, observability: Observability, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            agent,
            observability,
            seeds: (0..10).collect(),
            total_steps: 400_000,
            eval_every: 5_000,
            eval_episodes: 25,
            out_dir: out_dir.into(),
            discounted_eval: false,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.total_steps {
            return Err(Error::Config(format!(
                "eval_every must be in 1..={} (total_steps)",
                self.total_steps
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    fn stem(&self) -> String {
        format!("{}-{}", self.agent.as_str(), self.observability.as_str())
    }

    pub fn curve_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}-seed{seed}-curve.csv", self.stem()))
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}-seed{seed}.ckpt", self.stem()))
    }

    pub fn manifest_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}-seed{seed}.json", self.stem()))
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}-aggregate.csv", self.stem()))
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}-report.json", self.stem()))
    }
}

/// Metadata stored next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub agent: AgentKind,
    pub observability: Observability,
    pub seed: u64,
    pub steps: u64,
    pub updates: u64,
    /// Checkpoint file name, relative to the manifest.
    pub checkpoint: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Rebuilds the agent and loads its parameters.
    pub fn load_agent(&self, manifest_path: &Path) -> Result<Box<dyn Agent>> {
        let ck_path = manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&self.checkpoint);
        let ck = Checkpoint::read(&mut fs::File::open(&ck_path)?)?;
        let mut agent = build_agent(
            self.agent,
            self.observability.obs_dim(),
            self.config.env.u_max,
            &self.config.agent,
            &self.config.network,
            self.seed,
        )?;
        agent.load_checkpoint(&ck)?;
        Ok(agent)
    }

    /// Environment configuration the checkpoint was trained under.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            observability: self.observability,
            seed: self.seed,
            ..self.config.env.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentKind,
    pub observability: Observability,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub discounted: bool,
    pub std_estimator: String,
    pub seeds: Vec<SeedCurve>,
    pub failed: Vec<SeedFailure>,
    pub aggregate: Vec<AggregatePoint>,
}

impl EvalReport {
    /// Cross-seed mean and std at the last checkpoint.
    pub fn final_stats(&self) -> Option<(f64, f64)> {
        self.aggregate.last().map(|a| (a.mean_return, a.std_return))
    }

    pub fn final_returns(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(SeedCurve::final_return).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Trains and evaluates one seed, writing its curve, checkpoint and
/// manifest.
pub fn run_seed(spec: &RunSpec, config: &ExperimentConfig, seed: u64) -> Result<SeedCurve> {
    let env_cfg = EnvConfig {
        observability: spec.observability,
        seed,
        ..config.env.clone()
    };
    let mut env = ChemoEnv::new(env_cfg, config.ode.clone())?;
    let eval_env = env.clone();
    let mut agent = build_agent(
        spec.agent,
        env.obs_dim(),
        config.env.u_max,
        &config.agent,
        &config.network,
        seed,
    )?;
    let mut buffer = EpisodeBuffer::new(config.agent.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRAIN_STREAM, 0));
    let gamma = spec.discounted_eval.then_some(config.agent.gamma);
    let mut points = Vec::new();

    train(
        agent.as_mut(),
        &mut env,
        &mut buffer,
        spec.total_steps,
        &mut rng,
        |step, agent, buffer| {
            if step % spec.eval_every != 0 {
                return Ok(());
            }
            let stored = buffer.len();
            let eval_seed = derive_seed(seed, EVAL_STREAM, step / spec.eval_every);
            let returns = evaluate(agent, &eval_env, spec.eval_episodes, eval_seed, gamma)?;
            if buffer.len() != stored {
                return Err(Error::Usage("evaluation modified the replay buffer".into()));
            }
            let (mean_return, std_return) = mean_std(&returns);
            points.push(CurvePoint {
                step,
                mean_return,
                std_return,
            });
            Ok(())
        },
    )?;

    let curve = SeedCurve { seed, points };
    write_curve(&spec.curve_path(seed), std::slice::from_ref(&curve))?;
    let ck_path = spec.checkpoint_path(seed);
    agent.checkpoint().write(&mut fs::File::create(&ck_path)?)?;
    let manifest = Manifest {
        agent: spec.agent,
        observability: spec.observability,
        seed,
        steps: spec.total_steps,
        updates: agent.updates(),
        checkpoint: file_name(&ck_path),
        config: config.clone(),
    };
    fs::write(spec.manifest_path(seed), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(curve)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Learning-curve CSV: `seed,step,mean_return,std_return`.
pub fn write_curve(path: &Path, curves: &[SeedCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "step", "mean_return", "std_return"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.seed.to_string(),
                p.step.to_string(),
                p.mean_return.to_string(),
                p.std_return.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cross-seed CSV; the std column name states the estimator.
pub fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "n_seeds", "mean_return", "std_return_sample_n_minus_1"])?;
    for p in points {
        w.write_record([
            p.step.to_string(),
            p.n_seeds.to_string(),
            p.mean_return.to_string(),
            p.std_return.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains every seed of `spec`. A failing seed is reported on stderr,
/// listed in the report and left out of the aggregate.
pub fn run_training(spec: &RunSpec, config: &ExperimentConfig) -> Result<EvalReport> {
    spec.validate()?;
    config.validate()?;
    fs::create_dir_all(&spec.out_dir)?;

    let mut outcomes: Vec<(u64, Result<SeedCurve>)> = Vec::with_capacity(spec.seeds.len());
    for chunk in spec.seeds.chunks(spec.threads) {
        if chunk.len() == 1 {
            outcomes.push((chunk[0], run_seed(spec, config, chunk[0])));
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| (seed, s.spawn(move || run_seed(spec, config, seed))))
                .collect();
            for (seed, h) in handles {
                let res = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Usage(format!("training thread for seed {seed} panicked"))));
                outcomes.push((seed, res));
            }
        });
    }

    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    for (seed, res) in outcomes {
        match res {
            Ok(curve) => seeds.push(curve),
            Err(e) => {
                eprintln!("warning: seed {seed} failed and is excluded: {e}");
                failed.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let aggregate = aggregate(&seeds)?;
    write_aggregate(&spec.aggregate_path(), &aggregate)?;
    let report = EvalReport {
        agent: spec.agent,
        observability: spec.observability,
        total_steps: spec.total_steps,
        eval_every: spec.eval_every,
        eval_episodes: spec.eval_episodes,
        discounted: spec.discounted_eval,
        std_estimator: STD_ESTIMATOR.to_string(),
        seeds,
        failed,
        aggregate,
    };
    fs::write(spec.report_path(), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
