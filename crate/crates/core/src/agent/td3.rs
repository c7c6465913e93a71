use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{ActorLayout, TwinCriticLayout};
use super::{
    exploration, smoothing_noise, td_target, Agent, AgentKind, LossReport, NetworkConfig, PolicyState,
    TargetCheck, TargetPoint, Td3Config,
};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, Graph, ParamSet, Tensor};
use crate::replay::{EpisodeBuffer, TransitionRecord};

/// Feed-forward TD3 acting on the current observation only.
#[derive(Debug, Clone)]
pub struct Td3 {
    config: Td3Config,
    obs_dim: usize,
    u_max: f64,
    actor: ActorLayout,
    critic: TwinCriticLayout,
    pub actor_params: ParamSet,
    pub actor_target: ParamSet,
    pub critic_params: ParamSet,
    pub critic_target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

/// Column tensors for a flat batch of transitions.
#[derive(Debug, Clone)]
pub struct TransitionInputs {
    pub obs: Tensor,
    pub next_obs: Tensor,
    pub action_norm: Tensor,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
}

impl TransitionInputs {
    pub fn from_records(records: &[TransitionRecord], obs_dim: usize, u_max: f64) -> Result<Self> {
        let n = records.len();
        let mut obs = Vec::with_capacity(n * obs_dim);
        let mut next_obs = Vec::with_capacity(n * obs_dim);
        for r in records {
            if r.obs.len() != obs_dim || r.next_obs.len() != obs_dim {
                return Err(Error::Shape(format!(
                    "record observation width {} for agent width {obs_dim}",
                    r.obs.len()
                )));
            }
            obs.extend_from_slice(r.obs.values());
            next_obs.extend_from_slice(r.next_obs.values());
        }
        Ok(Self {
            obs: Tensor::matrix(n, obs_dim, obs)?,
            next_obs: Tensor::matrix(n, obs_dim, next_obs)?,
            action_norm: Tensor::column(records.iter().map(|r| r.action / u_max).collect()),
            reward: records.iter().map(|r| r.reward).collect(),
            done: records.iter().map(|r| r.done).collect(),
        })
    }
}

impl Td3 {
    pub fn new(obs_dim: usize, u_max: f64, config: Td3Config, net: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (actor, actor_params) = ActorLayout::init(obs_dim, net.head_hidden, &mut rng)?;
        let (critic, critic_params) = TwinCriticLayout::init(obs_dim, net.head_hidden, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor_params, config.actor_lr),
            critic_opt: Adam::new(&critic_params, config.critic_lr),
            actor_target: actor_params.clone(),
            critic_target: critic_params.clone(),
            actor_params,
            critic_params,
            actor,
            critic,
            config,
            obs_dim,
            u_max,
            updates: 0,
        })
    }

    pub fn critic_layout(&self) -> &TwinCriticLayout {
        &self.critic
    }

    /// Deterministic policy output for one observation.
    pub fn policy(&self, obs: &Observation) -> Result<f64> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} entries, agent expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut g = Graph::new();
        let p = g.bind(&self.actor_params);
        let o = g.constant(Tensor::row(obs.values().to_vec()));
        let a = self.actor.forward(&mut g, &p, o, self.u_max)?;
        let v = g.value(a).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("actor output".into()));
        }
        Ok(v)
    }

    /// Smoothed twin-target bootstrap for each transition.
    pub fn compute_td_targets<R: RngCore + ?Sized>(
        &self,
        inputs: &TransitionInputs,
        rng: &mut R,
    ) -> Result<Vec<TargetPoint>> {
        let mut g = Graph::new();
        let pa = g.bind_frozen(&self.actor_target);
        let pc = g.bind_frozen(&self.critic_target);
        let next = g.constant(inputs.next_obs.clone());
        let a = self.actor.forward(&mut g, &pa, next, self.u_max)?;
        let smoothed: Vec<f64> = g
            .value(a)
            .data()
            .iter()
            .map(|&v| (v + smoothing_noise(&self.config, self.u_max, rng)).clamp(0.0, self.u_max) / self.u_max)
            .collect();
        let an = g.constant(Tensor::column(smoothed));
        let (q1, q2) = self.critic.forward(&mut g, &pc, next, an)?;
        let (q1, q2) = (g.value(q1).data(), g.value(q2).data());
        Ok((0..inputs.reward.len())
            .map(|i| {
                let (r, d) = (inputs.reward[i], inputs.done[i]);
                TargetPoint {
                    reward: r,
                    done: d,
                    q1_next: q1[i],
                    q2_next: q2[i],
                    target: td_target(r, d, self.config.gamma, q1[i], q2[i]),
                }
            })
            .collect())
    }

    /// Mean over the batch of `(Q1 - y)^2 + (Q2 - y)^2`, and its gradient
    /// with respect to `critic`.
    pub fn critic_loss(
        &self,
        critic: &ParamSet,
        inputs: &TransitionInputs,
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let n = targets.len();
        let mut g = Graph::new();
        let p = g.bind(critic);
        let o = g.constant(inputs.obs.clone());
        let a = g.constant(inputs.action_norm.clone());
        let y = g.constant(Tensor::column(targets.to_vec()));
        let (q1, q2) = self.critic.forward(&mut g, &p, o, a)?;
        let d1 = g.sub(q1, y)?;
        let d2 = g.sub(q2, y)?;
        let s1 = g.mul(d1, d1)?;
        let s2 = g.mul(d2, d2)?;
        let s = g.add(s1, s2)?;
        let total = g.sum(s);
        let loss = g.scale(total, 1.0 / n as f64);
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_grads(&p)?))
    }

    /// `-mean Q1(o, pi(o))` and its gradient with respect to `actor`.
    pub fn actor_loss(&self, actor: &ParamSet, inputs: &TransitionInputs) -> Result<(f64, Vec<Tensor>)> {
        let n = inputs.reward.len();
        let mut g = Graph::new();
        let pa = g.bind(actor);
        let pc = g.bind_frozen(&self.critic_params);
        let o = g.constant(inputs.obs.clone());
        let a = self.actor.forward(&mut g, &pa, o, self.u_max)?;
        let an = g.scale(a, 1.0 / self.u_max);
        let q1 = self.critic.q1_only(&mut g, &pc, o, an)?;
        let total = g.sum(q1);
        let loss = g.scale(total, -1.0 / n as f64);
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_grads(&pa)?))
    }
}

impl Agent for Td3 {
    fn kind(&self) -> AgentKind {
        AgentKind::Td3
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn u_max(&self) -> f64 {
        self.u_max
    }

    fn config(&self) -> &Td3Config {
        &self.config
    }

    fn initial_state(&self) -> PolicyState {
        PolicyState::Memoryless
    }

    fn act(
        &self,
        _state: &mut PolicyState,
        obs: &Observation,
        _prev_action: f64,
        _prev_reward: f64,
        explore: bool,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let a = self.policy(obs)?;
        Ok(if explore {
            exploration(a, self.config.exploration_noise_std, self.u_max, rng)
        } else {
            a.clamp(0.0, self.u_max)
        })
    }

    fn update(&mut self, buffer: &EpisodeBuffer, rng: &mut dyn RngCore) -> Result<LossReport> {
        if (buffer.total_steps() as usize) < self.config.warmup_steps || buffer.is_empty() {
            return Ok(LossReport::default());
        }
        let records = buffer.sample_transitions(self.config.batch_size, rng)?;
        let inputs = TransitionInputs::from_records(&records, self.obs_dim, self.u_max)?;
        let points = self.compute_td_targets(&inputs, rng)?;
        let targets: Vec<f64> = points.iter().map(|p| p.target).collect();

        let (critic_loss, grads) = self.critic_loss(&self.critic_params, &inputs, &targets)?;
        self.critic_opt.step(&mut self.critic_params, &grads)?;
        self.updates += 1;

        let mut report = LossReport {
            critic_loss: Some(critic_loss),
            actor_loss: None,
            targets: TargetCheck::from_points(&points, self.config.gamma),
        };
        if self.updates.is_multiple_of(self.config.policy_delay as u64) {
            let (actor_loss, grads) = self.actor_loss(&self.actor_params, &inputs)?;
            self.actor_opt.step(&mut self.actor_params, &grads)?;
            self.actor_target.polyak_update(&self.actor_params, self.config.tau)?;
            self.critic_target.polyak_update(&self.critic_params, self.config.tau)?;
            report.actor_loss = Some(actor_loss);
        }
        Ok(report)
    }

    fn updates(&self) -> u64 {
        self.updates
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("actor", self.actor_params.clone());
        ck.push("actor_target", self.actor_target.clone());
        ck.push("critic", self.critic_params.clone());
        ck.push("critic_target", self.critic_target.clone());
        ck
    }

    fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        load_into(&mut self.actor_params, ck, "actor")?;
        load_into(&mut self.actor_target, ck, "actor_target")?;
        load_into(&mut self.critic_params, ck, "critic")?;
        load_into(&mut self.critic_target, ck, "critic_target")
    }
}

pub(crate) fn load_into(dst: &mut ParamSet, ck: &Checkpoint, name: &str) -> Result<()> {
    let src = ck.get(name)?;
    if !dst.same_structure(src) {
        return Err(Error::Checkpoint(format!("parameter set '{name}' does not match this agent")));
    }
    *dst = src.clone();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn small() -> Td3 {
        let cfg = ExperimentConfig::bundled();
        let net = NetworkConfig {
            head_hidden: 8,
            ..cfg.network
        };
        Td3::new(3, 1.0, cfg.agent, &net, 7).unwrap()
    }

    #[test]
    fn policy_in_range_and_deterministic() {
        let agent = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = agent.initial_state();
        for k in 0..50 {
            let o = Observation(vec![k as f64 * 0.3 - 5.0, 100.0, -3.0]);
            let a = agent.act(&mut st, &o, 0.0, 0.0, false, &mut rng).unwrap();
            let b = agent.act(&mut st, &o, 0.7, -2.0, false, &mut rng).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a));
            let e = agent.act(&mut st, &o, 0.0, 0.0, true, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
        assert!(agent.policy(&Observation(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = small();
        let mut b = Td3::new(3, 1.0, a.config.clone(), &NetworkConfig { head_hidden: 8, ..ExperimentConfig::bundled().network }, 99).unwrap();
        assert_ne!(a.actor_params, b.actor_params);
        b.load_checkpoint(&a.checkpoint()).unwrap();
        assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    }
}
