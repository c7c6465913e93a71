//! TD3 agents: a memoryless baseline and a recurrent variant with separate
//! LSTM history encoders for actor and critic.

mod nets;
mod recurrent;
mod td3;
mod train;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, LstmCellState};
use crate::replay::EpisodeBuffer;

pub use nets::{MlpHead, RecurrentActorLayout, RecurrentCriticLayout, TwinCriticLayout};
pub use recurrent::{RecurrentTd3, SequenceInputs};
pub use td3::{Td3, TransitionInputs};
pub use train::{evaluate, train, StepLog, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Td3,
    Rtd3,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Td3 => "td3",
            AgentKind::Rtd3 => "rtd3",
        }
    }

    pub fn architecture(self) -> &'static str {
        match self {
            AgentKind::Td3 => "memoryless",
            AgentKind::Rtd3 => "recurrent",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td3" => Ok(AgentKind::Td3),
            "rtd3" => Ok(AgentKind::Rtd3),
            other => Err(Error::Config(format!("unknown agent kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Td3Config {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Exploration noise std as a fraction of `u_max`.
    pub exploration_noise_std: f64,
    /// Target smoothing noise std as a fraction of `u_max`.
    pub target_noise_std: f64,
    /// Target smoothing clip as a fraction of `u_max`.
    pub target_noise_clip: f64,
    /// Transitions per memoryless update.
    pub batch_size: usize,
    /// Sequences per recurrent update.
    pub sequence_batch_size: usize,
    pub context_len: usize,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    pub bootstrap_on_truncation: bool,
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must be in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must be in (0, 1]");
        }
        if self.policy_delay == 0 {
            return fail("policy_delay must be >= 1");
        }
        if self.exploration_noise_std < 0.0 || self.target_noise_std < 0.0 || self.target_noise_clip < 0.0 {
            return fail("noise parameters must be >= 0");
        }
        if self.batch_size == 0 || self.sequence_batch_size == 0 || self.context_len == 0 {
            return fail("batch sizes and context_len must be >= 1");
        }
        if self.buffer_capacity == 0 {
            return fail("buffer_capacity must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub lstm_hidden: usize,
    pub obs_embed: usize,
    pub head_hidden: usize,
    pub forget_bias: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 || self.obs_embed == 0 || self.head_hidden == 0 {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-episode policy memory. Memoryless agents carry none.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyState {
    Memoryless,
    Recurrent(LstmCellState),
}

/// Values of a TD target at one unmasked position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPoint {
    pub reward: f64,
    pub done: bool,
    pub q1_next: f64,
    pub q2_next: f64,
    pub target: f64,
}

/// `r + gamma (1 - d) min(q1, q2)`; exactly `r` when `d` is set.
pub fn td_target(reward: f64, done: bool, gamma: f64, q1_next: f64, q2_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1_next.min(q2_next)
    }
}

/// Sanity counters over the targets of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TargetCheck {
    pub positions: usize,
    /// Bootstrapped value above either target critic.
    pub min_bound_violations: usize,
    /// Terminal positions whose target differs from the reward.
    pub terminal_mismatches: usize,
}

impl TargetCheck {
    pub fn from_points(points: &[TargetPoint], gamma: f64) -> Self {
        let mut c = TargetCheck {
            positions: points.len(),
            ..Default::default()
        };
        for p in points {
            if p.done {
                if p.target.to_bits() != p.reward.to_bits() {
                    c.terminal_mismatches += 1;
                }
            } else if gamma > 0.0 {
                let boot = (p.target - p.reward) / gamma;
                let slack = 1e-9 * (1.0 + boot.abs());
                if boot > p.q1_next + slack || boot > p.q2_next + slack {
                    c.min_bound_violations += 1;
                }
            }
        }
        c
    }

    pub fn merge(&mut self, other: TargetCheck) {
        self.positions += other.positions;
        self.min_bound_violations += other.min_bound_violations;
        self.terminal_mismatches += other.terminal_mismatches;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    /// `None` while still warming up.
    pub critic_loss: Option<f64>,
    /// Present only on delayed actor steps.
    pub actor_loss: Option<f64>,
    pub targets: TargetCheck,
}

/// Common interface of the memoryless and recurrent agents.
pub trait Agent: Send {
    fn kind(&self) -> AgentKind;

    fn obs_dim(&self) -> usize;

    fn u_max(&self) -> f64;

    fn config(&self) -> &Td3Config;

    /// Fresh memory for a new episode (zero hidden state).
    fn initial_state(&self) -> PolicyState;

    /// Chooses a dose for `obs`, given the previous action and the reward it
    /// earned, and advances `state`. With `explore`, Gaussian noise of std
    /// `exploration_noise_std * u_max` is added before clamping.
    fn act(
        &self,
        state: &mut PolicyState,
        obs: &Observation,
        prev_action: f64,
        prev_reward: f64,
        explore: bool,
        rng: &mut dyn RngCore,
    ) -> Result<f64>;

    /// One learning step; a no-op before `warmup_steps` transitions exist.
    fn update(&mut self, buffer: &EpisodeBuffer, rng: &mut dyn RngCore) -> Result<LossReport>;

    /// Number of critic updates performed so far.
    fn updates(&self) -> u64;

    fn checkpoint(&self) -> Checkpoint;

    fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()>;
}

/// Builds the agent named by `kind`.
pub fn build_agent(
    kind: AgentKind,
    obs_dim: usize,
    u_max: f64,
    config: &Td3Config,
    net: &NetworkConfig,
    seed: u64,
) -> Result<Box<dyn Agent>> {
    Ok(match kind {
        AgentKind::Td3 => Box::new(Td3::new(obs_dim, u_max, config.clone(), net, seed)?),
        AgentKind::Rtd3 => Box::new(RecurrentTd3::new(obs_dim, u_max, config.clone(), net, seed)?),
    })
}

fn exploration<R: RngCore + ?Sized>(action: f64, std: f64, u_max: f64, rng: &mut R) -> f64 {
    use rand_distr::{Distribution, Normal};
    let noisy = if std > 0.0 {
        let n = Normal::new(0.0, std * u_max).expect("std > 0");
        action + n.sample(rng)
    } else {
        action
    };
    noisy.clamp(0.0, u_max)
}

/// Clipped Gaussian smoothing noise for target actions.
fn smoothing_noise<R: RngCore + ?Sized>(config: &Td3Config, u_max: f64, rng: &mut R) -> f64 {
    use rand_distr::{Distribution, Normal};
    if config.target_noise_std == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, config.target_noise_std * u_max).expect("std > 0");
    let clip = config.target_noise_clip * u_max;
    n.sample(rng).clamp(-clip, clip)
}
