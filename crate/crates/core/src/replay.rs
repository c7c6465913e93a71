//! Episode-structured replay storage.
//!
//! Transitions are kept as whole episodes. Recurrent learners draw fixed
//! length windows that never cross an episode boundary (tails are padded and
//! masked); memoryless learners draw single transitions.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};

/// Action/reward fed to history encoders before the first step.
pub const NULL_ACTION: f64 = 0.0;
pub const NULL_REWARD: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Observation,
    pub action: f64,
    pub reward: f64,
    pub next_obs: Observation,
    /// Absorbing termination. Horizon truncation leaves this unset unless
    /// bootstrapping through truncation is disabled.
    pub done: bool,
    pub prev_action: f64,
    pub prev_reward: f64,
}

impl TransitionRecord {
    fn padding(obs_dim: usize) -> Self {
        Self {
            obs: Observation::zeros(obs_dim),
            action: 0.0,
            reward: 0.0,
            next_obs: Observation::zeros(obs_dim),
            done: false,
            prev_action: 0.0,
            prev_reward: 0.0,
        }
    }
}

/// One sampled window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// Always `context_len` long; padded entries are zero records.
    pub records: Vec<TransitionRecord>,
    /// 1 for real transitions, 0 for padding. Ones form a prefix.
    pub mask: Vec<f64>,
    pub start_is_episode_start: bool,
    /// Monotone id of the source episode.
    pub episode_id: u64,
    pub start: usize,
}

impl SequenceSample {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub context_len: usize,
    pub sequences: Vec<SequenceSample>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn valid_positions(&self) -> usize {
        self.sequences.iter().map(SequenceSample::valid_len).sum()
    }
}

#[derive(Debug, Clone)]
struct Episode {
    id: u64,
    records: Vec<TransitionRecord>,
    /// A record with `done` has been pushed; nothing may follow it.
    finished: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    stored: usize,
    total_steps: u64,
    next_id: u64,
    open: bool,
    obs_dim: Option<usize>,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            episodes: VecDeque::new(),
            capacity,
            stored: 0,
            total_steps: 0,
            next_id: 0,
            open: false,
            obs_dim: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Transitions currently held.
    pub fn len(&self) -> usize {
        self.stored
    }

    pub fn is_empty(&self) -> bool {
        self.stored == 0
    }

    /// Transitions ever pushed.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| !e.records.is_empty()).count()
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn obs_dim(&self) -> Option<usize> {
        self.obs_dim
    }

    /// Stored episodes, oldest first, with their ids.
    pub fn episodes(&self) -> impl Iterator<Item = (u64, &[TransitionRecord])> {
        self.episodes
            .iter()
            .filter(|e| !e.records.is_empty())
            .map(|e| (e.id, e.records.as_slice()))
    }

    pub fn open_episode(&mut self) -> Result<()> {
        if self.open {
            let current = self.episodes.back().expect("open episode exists");
            if current.records.is_empty() {
                return Ok(());
            }
            return Err(Error::Usage("an episode is already open".into()));
        }
        self.episodes.push_back(Episode {
            id: self.next_id,
            records: Vec::new(),
            finished: false,
        });
        self.next_id += 1;
        self.open = true;
        Ok(())
    }

    pub fn close_episode(&mut self) -> Result<()> {
        if !self.open {
            return Err(Error::Usage("no open episode to close".into()));
        }
        self.open = false;
        if self.episodes.back().is_some_and(|e| e.records.is_empty()) {
            self.episodes.pop_back();
        }
        Ok(())
    }

    pub fn push(&mut self, record: TransitionRecord) -> Result<()> {
        if !self.open {
            return Err(Error::Usage("push without an open episode".into()));
        }
        let dim = record.obs.len();
        if record.next_obs.len() != dim || self.obs_dim.is_some_and(|d| d != dim) {
            return Err(Error::Shape(format!(
                "record observation sizes {}/{} vs buffer {:?}",
                dim,
                record.next_obs.len(),
                self.obs_dim
            )));
        }
        let current = self.episodes.back().expect("open episode exists");
        if current.finished {
            return Err(Error::Usage("push after a terminal record".into()));
        }
        let (want_a, want_r) = match current.records.last() {
            Some(last) => (last.action, last.reward),
            None => (NULL_ACTION, NULL_REWARD),
        };
        if record.prev_action.to_bits() != want_a.to_bits()
            || record.prev_reward.to_bits() != want_r.to_bits()
        {
            return Err(Error::Usage(format!(
                "history chain broken: prev ({}, {}) but expected ({want_a}, {want_r})",
                record.prev_action, record.prev_reward
            )));
        }
        if current.records.len() + 1 > self.capacity {
            return Err(Error::Usage(format!(
                "episode longer than buffer capacity {}",
                self.capacity
            )));
        }

        self.obs_dim = Some(dim);
        let current = self.episodes.back_mut().expect("open episode exists");
        current.finished = record.done;
        current.records.push(record);
        self.stored += 1;
        self.total_steps += 1;
        while self.stored > self.capacity {
            let evicted = self.episodes.pop_front().expect("stored > 0 implies episodes");
            self.stored -= evicted.records.len();
        }
        Ok(())
    }

    /// Uniform over (episode, start) with `max(len - context_len + 1, 1)`
    /// starts per episode.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        context_len: usize,
        rng: &mut R,
    ) -> Result<SequenceBatch> {
        if self.stored == 0 {
            return Err(Error::EmptyBuffer);
        }
        if context_len == 0 {
            return Err(Error::InvalidInput("context_len must be >= 1".into()));
        }
        let obs_dim = self.obs_dim.expect("non-empty buffer has a dim");
        let eps: Vec<&Episode> = self.episodes.iter().filter(|e| !e.records.is_empty()).collect();
        let mut cumulative = Vec::with_capacity(eps.len());
        let mut total = 0usize;
        for e in &eps {
            total += (e.records.len() + 1).saturating_sub(context_len).max(1);
            cumulative.push(total);
        }
        let sequences = (0..batch_size)
            .map(|_| {
                let u = rng.random_range(0..total);
                let k = cumulative.partition_point(|&c| c <= u);
                let before = if k == 0 { 0 } else { cumulative[k - 1] };
                let start = u - before;
                let recs = &eps[k].records;
                let end = (start + context_len).min(recs.len());
                let mut records: Vec<TransitionRecord> = recs[start..end].to_vec();
                let mut mask = vec![1.0; records.len()];
                while records.len() < context_len {
                    records.push(TransitionRecord::padding(obs_dim));
                    mask.push(0.0);
                }
                SequenceSample {
                    records,
                    mask,
                    start_is_episode_start: start == 0,
                    episode_id: eps[k].id,
                    start,
                }
            })
            .collect();
        Ok(SequenceBatch {
            context_len,
            sequences,
        })
    }

    /// Uniform i.i.d. draw over all stored transitions.
    pub fn sample_transitions<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TransitionRecord>> {
        if self.stored == 0 {
            return Err(Error::EmptyBuffer);
        }
        let mut cumulative = Vec::with_capacity(self.episodes.len());
        let mut total = 0usize;
        for e in &self.episodes {
            total += e.records.len();
            cumulative.push(total);
        }
        Ok((0..batch_size)
            .map(|_| {
                let u = rng.random_range(0..total);
                let k = cumulative.partition_point(|&c| c <= u);
                let before = if k == 0 { 0 } else { cumulative[k - 1] };
                self.episodes[k].records[u - before].clone()
            })
            .collect())
    }

    /// Writes every stored episode in the debug dump format:
    /// magic `CHRLEPIS`, version, obs dim, context length, episode count,
    /// then per episode its length followed by the records.
    pub fn write_dump<W: Write>(&self, w: &mut W, context_len: usize) -> Result<()> {
        let dim = self.obs_dim.unwrap_or(0);
        w.write_all(DUMP_MAGIC)?;
        for v in [DUMP_VERSION, dim as u32, context_len as u32, self.num_episodes() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (_, records) in self.episodes() {
            w.write_all(&(records.len() as u32).to_le_bytes())?;
            for r in records {
                let mut vals: Vec<f64> = r.obs.values().to_vec();
                vals.extend([r.action, r.reward]);
                vals.extend_from_slice(r.next_obs.values());
                vals.extend([r.prev_action, r.prev_reward]);
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&[u8::from(r.done)])?;
            }
        }
        Ok(())
    }

    /// Reads a dump back into a buffer of the given capacity. Returns the
    /// buffer and the recorded context length.
    pub fn read_dump<R: Read>(r: &mut R, capacity: usize) -> Result<(Self, usize)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Checkpoint("not an episode dump".into()));
        }
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            *h = read_u32(r)?;
        }
        let [version, dim, context_len, n_eps] = header;
        if version != DUMP_VERSION {
            return Err(Error::Checkpoint(format!("unsupported dump version {version}")));
        }
        let dim = dim as usize;
        let mut episodes = Vec::with_capacity(n_eps as usize);
        for _ in 0..n_eps {
            let len = read_u32(r)?;
            let mut recs = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let obs = (0..dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
                let action = read_f64(r)?;
                let reward = read_f64(r)?;
                let next_obs = (0..dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
                let prev_action = read_f64(r)?;
                let prev_reward = read_f64(r)?;
                let mut d = [0u8; 1];
                r.read_exact(&mut d)?;
                recs.push(TransitionRecord {
                    obs: Observation(obs),
                    action,
                    reward,
                    next_obs: Observation(next_obs),
                    done: d[0] != 0,
                    prev_action,
                    prev_reward,
                });
            }
            episodes.push(recs);
        }
        let mut buf = EpisodeBuffer::new(capacity);
        for recs in episodes {
            buf.open_episode()?;
            for rec in recs {
                buf.push(rec)?;
            }
            buf.close_episode()?;
        }
        Ok((buf, context_len as usize))
    }
}

const DUMP_MAGIC: &[u8; 8] = b"CHRLEPIS";
const DUMP_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
