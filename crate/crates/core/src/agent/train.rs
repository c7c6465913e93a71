use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Agent, TargetCheck};
use crate::env::ChemoEnv;
use crate::error::{Error, Result};
use crate::replay::{EpisodeBuffer, TransitionRecord, NULL_ACTION, NULL_REWARD};

/// What happened on one environment step of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    /// 1-based environment step.
    pub step: u64,
    pub episode: u64,
    pub action: f64,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub targets: TargetCheck,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Undiscounted return of every episode finished during training.
    pub episode_returns: Vec<f64>,
}

impl TrainLog {
    pub fn targets(&self) -> TargetCheck {
        let mut c = TargetCheck::default();
        for s in &self.steps {
            c.merge(s.targets);
        }
        c
    }
}

/// Runs `total_steps` environment steps of the usual interaction loop: act
/// with exploration (uniform random doses during warmup), step, store,
/// update. `hook` runs after every step with the 1-based step count.
pub fn train<F>(
    agent: &mut dyn Agent,
    env: &mut ChemoEnv,
    buffer: &mut EpisodeBuffer,
    total_steps: u64,
    rng: &mut ChaCha8Rng,
    mut hook: F,
) -> Result<TrainLog>
where
    F: FnMut(u64, &dyn Agent, &EpisodeBuffer) -> Result<()>,
{
    if env.obs_dim() != agent.obs_dim() {
        return Err(Error::Config(format!(
            "environment emits {} observation entries, agent expects {}",
            env.obs_dim(),
            agent.obs_dim()
        )));
    }
    let cfg = agent.config().clone();
    let u_max = env.config().u_max;
    let mut log = TrainLog::default();
    let mut episode = 0u64;
    let mut ep_return = 0.0;
    let mut obs = env.reset(rng.next_u64());
    buffer.open_episode()?;
    let mut state = agent.initial_state();
    let (mut prev_a, mut prev_r) = (NULL_ACTION, NULL_REWARD);

    for step in 1..=total_steps {
        let policy_action = agent.act(&mut state, &obs, prev_a, prev_r, true, rng)?;
        let action = if step <= cfg.warmup_steps as u64 {
            rng.random_range(0.0..=u_max)
        } else {
            policy_action
        };
        if !(0.0..=u_max).contains(&action) {
            return Err(Error::InvalidInput(format!("action {action} outside [0, {u_max}]")));
        }
        let res = env.step(action)?;
        let done = res.terminated || (res.truncated && !cfg.bootstrap_on_truncation);
        buffer.push(TransitionRecord {
            obs: obs.clone(),
            action,
            reward: res.reward,
            next_obs: res.observation.clone(),
            done,
            prev_action: prev_a,
            prev_reward: prev_r,
        })?;
        ep_return += res.reward;

        let mut entry = StepLog {
            step,
            episode,
            action,
            reward: res.reward,
            terminated: res.terminated,
            truncated: res.truncated,
            critic_loss: None,
            actor_loss: None,
            targets: TargetCheck::default(),
        };
        for _ in 0..cfg.updates_per_step {
            let report = agent.update(buffer, rng)?;
            entry.critic_loss = report.critic_loss.or(entry.critic_loss);
            entry.actor_loss = report.actor_loss.or(entry.actor_loss);
            entry.targets.merge(report.targets);
        }
        if let Some(l) = entry.critic_loss.filter(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("critic loss {l} at step {step}")));
        }
        log.steps.push(entry);

        if res.done() {
            buffer.close_episode()?;
            log.episode_returns.push(ep_return);
            ep_return = 0.0;
            episode += 1;
            obs = env.reset(rng.next_u64());
            buffer.open_episode()?;
            state = agent.initial_state();
            prev_a = NULL_ACTION;
            prev_r = NULL_REWARD;
        } else {
            obs = res.observation;
            prev_a = action;
            prev_r = res.reward;
        }
        hook(step, &*agent, buffer)?;
    }
    Ok(log)
}

/// Runs `episodes` deterministic-policy episodes on a private copy of `env`,
/// each reset with a seed drawn from `seed`. Returns the per-episode return,
/// discounted by `gamma` if given.
pub fn evaluate(
    agent: &dyn Agent,
    env: &ChemoEnv,
    episodes: usize,
    seed: u64,
    gamma: Option<f64>,
) -> Result<Vec<f64>> {
    let mut env = env.clone();
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let discount = gamma.unwrap_or(1.0);
    (0..episodes)
        .map(|_| {
            let mut obs = env.reset(seeds.next_u64());
            let mut state = agent.initial_state();
            let (mut prev_a, mut prev_r) = (NULL_ACTION, NULL_REWARD);
            let (mut total, mut weight) = (0.0, 1.0);
            loop {
                let a = agent.act(&mut state, &obs, prev_a, prev_r, false, &mut unused)?;
                let res = env.step(a)?;
                total += weight * res.reward;
                weight *= discount;
                if res.done() {
                    return Ok(total);
                }
                obs = res.observation;
                prev_a = a;
                prev_r = res.reward;
            }
        })
        .collect()
}
