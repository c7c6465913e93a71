//! Randomized finite-difference cases for every differentiable component.

use chemo_rl::agent::{RecurrentTd3, SequenceInputs, Td3, TransitionInputs};
use chemo_rl::config::ExperimentConfig;
use chemo_rl::nn::{Activation, Dense, Graph, Lstm, LstmCellState, ParamSet, Tensor};
use chemo_rl::replay::EpisodeBuffer;
use rand::Rng;

use super::{fd_check, push_episode, tagged_episode, tiny_network};

/// Coordinates perturbed per case.
pub const PICKS: usize = 32;

fn random_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Gradient of `sum(dense(x) * c)`.
pub fn dense_case<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (fan_in, fan_out, batch) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5));
    let activation = [Activation::Linear, Activation::Relu, Activation::Tanh][rng.random_range(0..3)];
    let mut params = ParamSet::new();
    let layer = Dense::init(&mut params, "d", fan_in, fan_out, activation, rng).unwrap();
    // Non-zero biases keep ReLU pre-activations away from the kink.
    let bias = random_tensor(1, fan_out, 0.5, rng);
    *params.tensor_mut(layer.b) = bias;
    let x = random_tensor(batch, fan_in, 2.0, rng);
    let c = random_tensor(batch, fan_out, 1.0, rng);
    let eval = |p: &ParamSet, backward: bool| {
        let mut g = Graph::new();
        let b = g.bind(p);
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &b, xv).unwrap();
        let m = g.mul_const(y, c.clone()).unwrap();
        let l = g.sum(m);
        if backward {
            g.backward(l).unwrap();
        }
        (g.value(l).data()[0], if backward { g.param_grads(&b).unwrap() } else { Vec::new() })
    };
    let (_, grads) = eval(&params, true);
    fd_check(&params, &grads, PICKS, rng, |p| eval(p, false).0)
}

/// Gradient of a weighted sum of every hidden vector and the final cell,
/// through a random-length unrolled LSTM from a random initial state.
pub fn lstm_case<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (inputs, hidden) = (rng.random_range(1..5), rng.random_range(1..6));
    let (steps, batch) = (rng.random_range(1..6), rng.random_range(1..4));
    let mut params = ParamSet::new();
    let lstm = Lstm::init(&mut params, "lstm", inputs, hidden, 1.0, rng).unwrap();
    let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(batch, inputs, 1.5, rng)).collect();
    let cs: Vec<Tensor> = (0..steps).map(|_| random_tensor(batch, hidden, 1.0, rng)).collect();
    let dc = random_tensor(batch, hidden, 1.0, rng);
    let init = LstmCellState {
        hidden: random_tensor(batch, hidden, 0.5, rng),
        cell: random_tensor(batch, hidden, 0.5, rng),
    };
    let eval = |p: &ParamSet, backward: bool| {
        let mut g = Graph::new();
        let b = g.bind(p);
        let s0 = lstm.initial(&mut g, &init).unwrap();
        let xv: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let (hs, last) = lstm.forward(&mut g, &b, &xv, s0).unwrap();
        let mut terms = Vec::new();
        for (h, c) in hs.iter().zip(&cs) {
            let m = g.mul_const(*h, c.clone()).unwrap();
            terms.push(g.sum(m));
        }
        let mc = g.mul_const(last.cell, dc.clone()).unwrap();
        let mut total = g.sum(mc);
        for t in terms {
            total = g.add(total, t).unwrap();
        }
        if backward {
            g.backward(total).unwrap();
        }
        (g.value(total).data()[0], if backward { g.param_grads(&b).unwrap() } else { Vec::new() })
    };
    let (_, grads) = eval(&params, true);
    fd_check(&params, &grads, PICKS, rng, |p| eval(p, false).0)
}

/// A buffer of random episodes, some shorter than the context so that
/// sampled windows carry padding.
fn random_buffer<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> EpisodeBuffer {
    let mut buf = EpisodeBuffer::new(10_000);
    for e in 0..6 {
        let len = rng.random_range(2..20);
        let terminal = rng.random_bool(0.5);
        push_episode(&mut buf, tagged_episode(e as f64 * 0.1, len, terminal, obs_dim, rng));
    }
    buf
}

fn recurrent_setup<R: Rng + ?Sized>(rng: &mut R) -> (RecurrentTd3, SequenceInputs) {
    let cfg = ExperimentConfig::bundled();
    let obs_dim = rng.random_range(2..5);
    let agent = RecurrentTd3::new(obs_dim, 1.5, cfg.agent, &tiny_network(), rng.random()).unwrap();
    let buf = random_buffer(obs_dim, rng);
    let batch = buf.sample_sequences(3, 8, rng).unwrap();
    (agent, SequenceInputs::from_batch(&batch, obs_dim, 1.5).unwrap())
}

fn memoryless_setup<R: Rng + ?Sized>(rng: &mut R) -> (Td3, TransitionInputs) {
    let cfg = ExperimentConfig::bundled();
    let obs_dim = rng.random_range(2..5);
    let agent = Td3::new(obs_dim, 1.5, cfg.agent, &tiny_network(), rng.random()).unwrap();
    let buf = random_buffer(obs_dim, rng);
    let records = buf.sample_transitions(6, rng).unwrap();
    (agent, TransitionInputs::from_records(&records, obs_dim, 1.5).unwrap())
}

/// Recurrent actor objective, then the memoryless one.
pub fn actor_case<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (agent, inputs) = recurrent_setup(rng);
    let (_, grads) = agent.actor_loss(&agent.actor_params, &inputs).unwrap();
    let a = fd_check(&agent.actor_params, &grads, PICKS, rng, |p| agent.actor_loss(p, &inputs).unwrap().0);
    let (agent, inputs) = memoryless_setup(rng);
    let (_, grads) = agent.actor_loss(&agent.actor_params, &inputs).unwrap();
    let b = fd_check(&agent.actor_params, &grads, PICKS, rng, |p| agent.actor_loss(p, &inputs).unwrap().0);
    a.max(b)
}

/// Recurrent masked critic loss, then the memoryless one, on random targets.
pub fn critic_case<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (agent, inputs) = recurrent_setup(rng);
    let targets: Vec<f64> = (0..inputs.reward.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, grads) = agent.critic_loss(&agent.critic_params, &inputs, &targets).unwrap();
    let a = fd_check(&agent.critic_params, &grads, PICKS, rng, |p| {
        agent.critic_loss(p, &inputs, &targets).unwrap().0
    });
    let (agent, inputs) = memoryless_setup(rng);
    let targets: Vec<f64> = (0..inputs.reward.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, grads) = agent.critic_loss(&agent.critic_params, &inputs, &targets).unwrap();
    let b = fd_check(&agent.critic_params, &grads, PICKS, rng, |p| {
        agent.critic_loss(p, &inputs, &targets).unwrap().0
    });
    a.max(b)
}
