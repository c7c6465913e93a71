#![allow(dead_code)]

pub mod grad;

use chemo_rl::agent::NetworkConfig;
use chemo_rl::config::ExperimentConfig;
use chemo_rl::env::Observation;
use chemo_rl::nn::{ParamSet, Tensor};
use chemo_rl::ode::{Integrator, LatentState, OdeParams};
use chemo_rl::replay::{EpisodeBuffer, TransitionRecord, NULL_ACTION, NULL_REWARD};
use rand::Rng;

/// Noise-free RK4 result after one unit step with `substeps` sub-intervals.
pub fn rk4_unit_step(substeps: usize) -> LatentState {
    let params = OdeParams::bundled().without_noise();
    let start = LatentState::new(1.0, 0.25, 0.1, 0.0);
    Integrator::new(1.0, substeps)
        .step::<rand_chacha::ChaCha8Rng>(&start, 0.5, &params, None)
        .unwrap()
}

fn max_abs_diff(a: LatentState, b: LatentState) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `err(k) / err(2k)` against a finely resolved reference.
pub fn rk4_reduction_factor(k: usize) -> f64 {
    let reference = rk4_unit_step(4096);
    max_abs_diff(rk4_unit_step(k), reference) / max_abs_diff(rk4_unit_step(2 * k), reference)
}

/// Small agent networks for fast tests.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        lstm_hidden: 8,
        obs_embed: 4,
        head_hidden: 16,
        forget_bias: 1.0,
    }
}

/// Bundled configuration shrunk so that a 10^4-step run takes seconds.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::bundled();
    cfg.network = tiny_network();
    cfg.agent.batch_size = 32;
    cfg.agent.sequence_batch_size = 4;
    cfg.agent.context_len = 8;
    cfg.agent.warmup_steps = 200;
    cfg
}

/// Central-difference check of `grads` (flattened in set order) against
/// `loss` at up to `picks` random coordinates. Returns the worst relative
/// error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn fd_check<R: Rng + ?Sized>(
    params: &ParamSet,
    grads: &[Tensor],
    picks: usize,
    rng: &mut R,
    loss: impl Fn(&ParamSet) -> f64,
) -> f64 {
    let h = 1e-5;
    let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for _ in 0..picks.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let mut plus = params.clone();
        plus.tensor_mut(ti).data_mut()[flat] += h;
        let mut minus = params.clone();
        minus.tensor_mut(ti).data_mut()[flat] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let analytic = grads[ti].data()[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// A chained episode whose observations encode `(tag, t)` in the first two
/// entries, padded with random values to `obs_dim`.
pub fn tagged_episode<R: Rng + ?Sized>(
    tag: f64,
    len: usize,
    terminal: bool,
    obs_dim: usize,
    rng: &mut R,
) -> Vec<TransitionRecord> {
    assert!(obs_dim >= 2);
    let obs = |t: usize, rng: &mut R| {
        let mut v = vec![tag, t as f64];
        v.extend((2..obs_dim).map(|_| rng.random_range(0.0..1.0)));
        Observation(v)
    };
    let mut out: Vec<TransitionRecord> = Vec::with_capacity(len);
    let mut current = obs(0, rng);
    for t in 0..len {
        let (prev_action, prev_reward) = out
            .last()
            .map_or((NULL_ACTION, NULL_REWARD), |r| (r.action, r.reward));
        let next = obs(t + 1, rng);
        out.push(TransitionRecord {
            obs: current,
            action: rng.random_range(0.0..1.0),
            reward: rng.random_range(-1.0..1.0),
            next_obs: next.clone(),
            done: terminal && t + 1 == len,
            prev_action,
            prev_reward,
        });
        current = next;
    }
    out
}

pub fn push_episode(buf: &mut EpisodeBuffer, records: Vec<TransitionRecord>) {
    buf.open_episode().unwrap();
    for r in records {
        buf.push(r).unwrap();
    }
    buf.close_episode().unwrap();
}

pub struct ReplaySuite {
    pub rounds: usize,
    pub capacity: usize,
    pub max_stored: usize,
    /// Windows whose mask-1 region was not one contiguous run of a single
    /// episode.
    pub bad_windows: usize,
    pub chi2: f64,
    pub cells: usize,
}

impl ReplaySuite {
    /// Chi-square statistic within three standard deviations of its mean.
    pub fn uniform(&self) -> bool {
        let dof = (self.cells - 1) as f64;
        (self.chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt()
    }
}

/// Interleaves `rounds` single-transition pushes with window draws on a
/// small buffer, checking every window, then measures start uniformity on
/// the final contents.
pub fn replay_structural_suite(rounds: usize, seed: u64) -> ReplaySuite {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (capacity, ctx) = (400, 16);
    let mut buf = EpisodeBuffer::new(capacity);
    let mut pending: std::collections::VecDeque<TransitionRecord> = Default::default();
    let mut episode = 0u64;
    let mut max_stored = 0;
    let mut bad_windows = 0;

    for _ in 0..rounds {
        if pending.is_empty() {
            if buf.is_open() {
                buf.close_episode().unwrap();
            }
            let len = rng.random_range(1..60);
            let terminal = rng.random_bool(0.5);
            pending.extend(tagged_episode(episode as f64, len, terminal, 3, &mut rng));
            episode += 1;
            buf.open_episode().unwrap();
        }
        buf.push(pending.pop_front().unwrap()).unwrap();
        max_stored = max_stored.max(buf.len());
        let batch = buf.sample_sequences(1, ctx, &mut rng).unwrap();
        for s in &batch.sequences {
            let valid = s.valid_len();
            let prefix = s.mask[..valid].iter().all(|&m| m == 1.0) && s.mask[valid..].iter().all(|&m| m == 0.0);
            let tag = s.records[0].obs.0[0];
            let contiguous = s.records[..valid]
                .iter()
                .enumerate()
                .all(|(k, r)| r.obs.0[0] == tag && r.obs.0[1] == (s.start + k) as f64);
            if !(prefix && contiguous && valid >= 1) {
                bad_windows += 1;
            }
        }
    }

    let mut counts = std::collections::HashMap::new();
    let cells: usize = buf.episodes().map(|(_, r)| (r.len() + 1).saturating_sub(ctx).max(1)).sum();
    let draws = 200 * cells;
    let batch = buf.sample_sequences(draws, ctx, &mut rng).unwrap();
    for s in &batch.sequences {
        *counts.entry((s.episode_id, s.start)).or_insert(0usize) += 1;
    }
    let expected = draws as f64 / cells as f64;
    let observed_cells = counts.len();
    let chi2 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>()
        + (cells - observed_cells) as f64 * expected;
    ReplaySuite {
        rounds,
        capacity,
        max_stored,
        bad_windows,
        chi2,
        cells,
    }
}
