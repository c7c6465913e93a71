use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{history_input_dim, RecurrentActorLayout, RecurrentCriticLayout};
use super::td3::load_into;
use super::{
    exploration, smoothing_noise, td_target, Agent, AgentKind, LossReport, NetworkConfig, PolicyState,
    TargetCheck, TargetPoint, Td3Config,
};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, Graph, LstmCellState, ParamSet, Tensor, Var};
use crate::replay::{EpisodeBuffer, SequenceBatch};

/// Time-major tensors for a batch of `B` windows of length `L`.
///
/// `history[k]` is the encoder input at step `k` for `k in 0..=L`: step 0 is
/// `[o_s, a_{s-1}/u_max, r_{s-1}]`, step `k + 1` is built from the `k`-th
/// transition's next observation, action and reward. Flat per-position
/// tensors have row `t * B + b`.
#[derive(Debug, Clone)]
pub struct SequenceInputs {
    pub batch: usize,
    pub context_len: usize,
    pub history: Vec<Tensor>,
    pub obs: Tensor,
    pub next_obs: Tensor,
    pub action_norm: Tensor,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub mask: Vec<f64>,
}

impl SequenceInputs {
    pub fn from_batch(batch: &SequenceBatch, obs_dim: usize, u_max: f64) -> Result<Self> {
        let b = batch.len();
        let l = batch.context_len;
        if b == 0 {
            return Err(Error::InvalidInput("empty sequence batch".into()));
        }
        let width = history_input_dim(obs_dim);
        let mut history = Vec::with_capacity(l + 1);
        let mut first = Vec::with_capacity(b * width);
        for s in &batch.sequences {
            if s.records.len() != l || s.mask.len() != l {
                return Err(Error::Shape(format!("window of length {} in batch of length {l}", s.records.len())));
            }
            let r0 = &s.records[0];
            if r0.obs.len() != obs_dim {
                return Err(Error::Shape(format!("observation width {} expected {obs_dim}", r0.obs.len())));
            }
            first.extend_from_slice(r0.obs.values());
            first.push(r0.prev_action / u_max);
            first.push(r0.prev_reward);
        }
        history.push(Tensor::matrix(b, width, first)?);

        let n = l * b;
        let mut obs = Vec::with_capacity(n * obs_dim);
        let mut next_obs = Vec::with_capacity(n * obs_dim);
        let mut action_norm = Vec::with_capacity(n);
        let mut reward = Vec::with_capacity(n);
        let mut done = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for t in 0..l {
            let mut step = Vec::with_capacity(b * width);
            for s in &batch.sequences {
                let r = &s.records[t];
                if r.obs.len() != obs_dim || r.next_obs.len() != obs_dim {
                    return Err(Error::Shape("inconsistent observation width in window".into()));
                }
                obs.extend_from_slice(r.obs.values());
                next_obs.extend_from_slice(r.next_obs.values());
                action_norm.push(r.action / u_max);
                reward.push(r.reward);
                done.push(r.done);
                mask.push(s.mask[t]);
                step.extend_from_slice(r.next_obs.values());
                step.push(r.action / u_max);
                step.push(r.reward);
            }
            history.push(Tensor::matrix(b, width, step)?);
        }
        Ok(Self {
            batch: b,
            context_len: l,
            history,
            obs: Tensor::matrix(n, obs_dim, obs)?,
            next_obs: Tensor::matrix(n, obs_dim, next_obs)?,
            action_norm: Tensor::column(action_norm),
            reward,
            done,
            mask,
        })
    }

    pub fn mask_sum(&self) -> f64 {
        self.mask.iter().sum()
    }
}

/// TD3 whose actor and critic each read the interaction history through
/// their own LSTM. Every sampled window starts from a zero hidden state.
#[derive(Debug, Clone)]
pub struct RecurrentTd3 {
    config: Td3Config,
    obs_dim: usize,
    u_max: f64,
    hidden: usize,
    actor: RecurrentActorLayout,
    critic: RecurrentCriticLayout,
    pub actor_params: ParamSet,
    pub actor_target: ParamSet,
    pub critic_params: ParamSet,
    pub critic_target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

/// Hidden vector after each history input, starting from a zero state.
fn encode(
    g: &mut Graph,
    p: &crate::nn::Bound,
    lstm: &crate::nn::Lstm,
    history: &[Var],
    batch: usize,
) -> Result<Vec<Var>> {
    let init = lstm.initial(g, &LstmCellState::zeros(batch, lstm.hidden))?;
    Ok(lstm.forward(g, p, history, init)?.0)
}

impl RecurrentTd3 {
    pub fn new(obs_dim: usize, u_max: f64, config: Td3Config, net: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (actor, actor_params) = RecurrentActorLayout::init(obs_dim, net, &mut rng)?;
        let (critic, critic_params) = RecurrentCriticLayout::init(obs_dim, net, &mut rng)?;
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
            hidden: net.lstm_hidden,
            updates: 0,
        })
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} entries, agent expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(())
    }

    fn history_row(&self, obs: &Observation, prev_action: f64, prev_reward: f64) -> Tensor {
        let mut x = obs.values().to_vec();
        x.push(prev_action / self.u_max);
        x.push(prev_reward);
        Tensor::row(x)
    }

    /// Deterministic dose after feeding one history step; advances `state`.
    pub fn policy_step(
        &self,
        state: &mut LstmCellState,
        obs: &Observation,
        prev_action: f64,
        prev_reward: f64,
    ) -> Result<f64> {
        self.check_obs(obs)?;
        let mut g = Graph::new();
        let p = g.bind(&self.actor_params);
        let init = self.actor.encoder.initial(&mut g, state)?;
        let x = g.constant(self.history_row(obs, prev_action, prev_reward));
        let next = self.actor.encoder.cell(&mut g, &p, x, init)?;
        let o = g.constant(Tensor::row(obs.values().to_vec()));
        let a = self.actor.policy(&mut g, &p, next.hidden, o, self.u_max)?;
        let v = g.value(a).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("actor output".into()));
        }
        *state = LstmCellState {
            hidden: g.value(next.hidden).clone(),
            cell: g.value(next.cell).clone(),
        };
        Ok(v)
    }

    /// Dose for the last step of a whole history `(obs, prev_action,
    /// prev_reward)` encoded in one pass from a zero state.
    pub fn act_on_history(&self, history: &[(Observation, f64, f64)]) -> Result<f64> {
        let Some((last, _, _)) = history.last() else {
            return Err(Error::InvalidInput("empty history".into()));
        };
        self.check_obs(last)?;
        let mut g = Graph::new();
        let p = g.bind(&self.actor_params);
        let xs: Vec<Var> = history
            .iter()
            .map(|(o, a, r)| {
                self.check_obs(o)?;
                Ok(g.constant(self.history_row(o, *a, *r)))
            })
            .collect::<Result<_>>()?;
        let hs = encode(&mut g, &p, &self.actor.encoder, &xs, 1)?;
        let o = g.constant(Tensor::row(last.values().to_vec()));
        let a = self.actor.policy(&mut g, &p, *hs.last().expect("non-empty"), o, self.u_max)?;
        Ok(g.value(a).data()[0])
    }

    /// Smoothed twin-target bootstrap at every position of every window.
    /// Target encoders see the history through `t + 1`.
    pub fn compute_td_targets<R: RngCore + ?Sized>(
        &self,
        inputs: &SequenceInputs,
        rng: &mut R,
    ) -> Result<Vec<TargetPoint>> {
        let b = inputs.batch;
        let mut g = Graph::new();
        let pa = g.bind_frozen(&self.actor_target);
        let pc = g.bind_frozen(&self.critic_target);
        let xs: Vec<Var> = inputs.history.iter().map(|t| g.constant(t.clone())).collect();
        let ha = encode(&mut g, &pa, &self.actor.encoder, &xs, b)?;
        let hc = encode(&mut g, &pc, &self.critic.encoder, &xs, b)?;
        let ha = g.vstack(&ha[1..])?;
        let hc = g.vstack(&hc[1..])?;
        let next = g.constant(inputs.next_obs.clone());
        let a = self.actor.policy(&mut g, &pa, ha, next, self.u_max)?;
        let smoothed: Vec<f64> = g
            .value(a)
            .data()
            .iter()
            .map(|&v| (v + smoothing_noise(&self.config, self.u_max, rng)).clamp(0.0, self.u_max) / self.u_max)
            .collect();
        let an = g.constant(Tensor::column(smoothed));
        let (q1, q2) = self.critic.q(&mut g, &pc, hc, next, an)?;
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

    /// Masked mean of `(Q1 - y)^2 + (Q2 - y)^2` over valid positions and its
    /// gradient with respect to `critic`.
    pub fn critic_loss(
        &self,
        critic: &ParamSet,
        inputs: &SequenceInputs,
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let denom = inputs.mask_sum();
        if denom <= 0.0 {
            return Err(Error::InvalidInput("batch has no valid positions".into()));
        }
        let l = inputs.context_len;
        let mut g = Graph::new();
        let p = g.bind(critic);
        let xs: Vec<Var> = inputs.history[..l].iter().map(|t| g.constant(t.clone())).collect();
        let hs = encode(&mut g, &p, &self.critic.encoder, &xs, inputs.batch)?;
        let h = g.vstack(&hs)?;
        let o = g.constant(inputs.obs.clone());
        let a = g.constant(inputs.action_norm.clone());
        let y = g.constant(Tensor::column(targets.to_vec()));
        let (q1, q2) = self.critic.q(&mut g, &p, h, o, a)?;
        let d1 = g.sub(q1, y)?;
        let d2 = g.sub(q2, y)?;
        let s1 = g.mul(d1, d1)?;
        let s2 = g.mul(d2, d2)?;
        let s = g.add(s1, s2)?;
        let masked = g.mul_const(s, Tensor::column(inputs.mask.clone()))?;
        let total = g.sum(masked);
        let loss = g.scale(total, 1.0 / denom);
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_grads(&p)?))
    }

    /// Critic-encoder hidden states over the window, as constants.
    fn critic_history(&self, inputs: &SequenceInputs) -> Result<Tensor> {
        let l = inputs.context_len;
        let mut g = Graph::new();
        let p = g.bind(&self.critic_params);
        let xs: Vec<Var> = inputs.history[..l].iter().map(|t| g.constant(t.clone())).collect();
        let hs = encode(&mut g, &p, &self.critic.encoder, &xs, inputs.batch)?;
        let h = g.vstack(&hs)?;
        Ok(g.value(h).clone())
    }

    /// `-` masked mean of `Q1(h, o, pi(h, o))` and its gradient with respect
    /// to `actor`. The critic is held fixed.
    pub fn actor_loss(&self, actor: &ParamSet, inputs: &SequenceInputs) -> Result<(f64, Vec<Tensor>)> {
        let denom = inputs.mask_sum();
        if denom <= 0.0 {
            return Err(Error::InvalidInput("batch has no valid positions".into()));
        }
        let hc = self.critic_history(inputs)?;
        let l = inputs.context_len;
        let mut g = Graph::new();
        let pa = g.bind(actor);
        let pc = g.bind_frozen(&self.critic_params);
        let xs: Vec<Var> = inputs.history[..l].iter().map(|t| g.constant(t.clone())).collect();
        let hs = encode(&mut g, &pa, &self.actor.encoder, &xs, inputs.batch)?;
        let ha = g.vstack(&hs)?;
        let o = g.constant(inputs.obs.clone());
        let a = self.actor.policy(&mut g, &pa, ha, o, self.u_max)?;
        let an = g.scale(a, 1.0 / self.u_max);
        let hc = g.constant(hc);
        let q1 = self.critic.q1_only(&mut g, &pc, hc, o, an)?;
        let masked = g.mul_const(q1, Tensor::column(inputs.mask.clone()))?;
        let total = g.sum(masked);
        let loss = g.scale(total, -1.0 / denom);
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_grads(&pa)?))
    }
}

impl Agent for RecurrentTd3 {
    fn kind(&self) -> AgentKind {
        AgentKind::Rtd3
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
        PolicyState::Recurrent(LstmCellState::zeros(1, self.hidden))
    }

    fn act(
        &self,
        state: &mut PolicyState,
        obs: &Observation,
        prev_action: f64,
        prev_reward: f64,
        explore: bool,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let PolicyState::Recurrent(cell) = state else {
            return Err(Error::InvalidInput("recurrent agent needs a recurrent policy state".into()));
        };
        let a = self.policy_step(cell, obs, prev_action, prev_reward)?;
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
        let batch = buffer.sample_sequences(self.config.sequence_batch_size, self.config.context_len, rng)?;
        let inputs = SequenceInputs::from_batch(&batch, self.obs_dim, self.u_max)?;
        let points = self.compute_td_targets(&inputs, rng)?;
        let targets: Vec<f64> = points.iter().map(|p| p.target).collect();

        let (critic_loss, grads) = self.critic_loss(&self.critic_params, &inputs, &targets)?;
        self.critic_opt.step(&mut self.critic_params, &grads)?;
        self.updates += 1;

        let valid: Vec<TargetPoint> = points
            .iter()
            .zip(&inputs.mask)
            .filter(|(_, &m)| m > 0.0)
            .map(|(p, _)| *p)
            .collect();
        let mut report = LossReport {
            critic_loss: Some(critic_loss),
            actor_loss: None,
            targets: TargetCheck::from_points(&valid, self.config.gamma),
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
