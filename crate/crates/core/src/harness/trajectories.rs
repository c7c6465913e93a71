use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::mean_std;
use crate::agent::Agent;
use crate::env::{ChemoEnv, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::replay::{NULL_ACTION, NULL_REWARD};

/// Percentiles of final tumor burden used to pick representative episodes.
pub const REPRESENTATIVE_PERCENTILES: [u32; 3] = [25, 50, 75];

/// Cross-episode statistics at one time step, over the episodes still
/// running at that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub n_episodes: usize,
    /// Mean and std of `N, T, I, B, action, reward`, in that order.
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub episode_lengths: Vec<usize>,
    pub episode_returns: Vec<f64>,
    pub final_tumor: Vec<f64>,
    /// `(percentile, episode index)`.
    pub representative: Vec<(u32, usize)>,
    pub summary: Vec<StepSummary>,
}

const SUMMARY_FIELDS: [&str; 6] = ["N", "T", "I", "B", "action", "reward"];

/// Rolls out the deterministic policy for `n_episodes` episodes and writes
/// `trajectories.csv` (every step), `summary.csv` (per-step mean/std) and
/// `representative.csv` into `out_dir`.
pub fn run_trajectories(
    agent: &dyn Agent,
    env: &ChemoEnv,
    n_episodes: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<TrajectoryReport> {
    if n_episodes == 0 {
        return Err(Error::InvalidInput("n_episodes must be >= 1".into()));
    }
    if agent.obs_dim() != env.obs_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} observation entries, environment emits {}",
            agent.obs_dim(),
            env.obs_dim()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let mut env = env.clone();
    let mut writer = TrajectoryWriter::new(
        fs::File::create(out_dir.join("trajectories.csv"))?,
        env.config().observability,
    )?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    // rows[e][t] = [N, T, I, B, action, reward]
    let mut rows: Vec<Vec<[f64; 6]>> = Vec::with_capacity(n_episodes);
    let mut returns = Vec::with_capacity(n_episodes);

    for ep in 0..n_episodes {
        let mut obs = env.reset(seeds.next_u64());
        let mut state = agent.initial_state();
        let (mut prev_a, mut prev_r) = (NULL_ACTION, NULL_REWARD);
        let mut ep_rows = Vec::new();
        let mut total = 0.0;
        for t in 0.. {
            let a = agent.act(&mut state, &obs, prev_a, prev_r, false, &mut unused)?;
            let res = env.step(a)?;
            writer.record(ep, t, &obs, a, &res)?;
            let s = res.info;
            ep_rows.push([s.normal, s.tumor, s.immune, s.drug, a, res.reward]);
            total += res.reward;
            if res.done() {
                break;
            }
            obs = res.observation;
            prev_a = a;
            prev_r = res.reward;
        }
        rows.push(ep_rows);
        returns.push(total);
    }
    writer.finish()?;

    let horizon = rows.iter().map(Vec::len).max().unwrap_or(0);
    let summary: Vec<StepSummary> = (0..horizon)
        .map(|t| {
            let live: Vec<&[f64; 6]> = rows.iter().filter_map(|r| r.get(t)).collect();
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for k in 0..6 {
                let col: Vec<f64> = live.iter().map(|r| r[k]).collect();
                (mean[k], std[k]) = mean_std(&col);
            }
            StepSummary {
                t,
                n_episodes: live.len(),
                mean,
                std,
            }
        })
        .collect();
    write_summary(&out_dir.join("summary.csv"), &summary)?;

    let final_tumor: Vec<f64> = rows.iter().map(|r| r.last().map_or(f64::NAN, |x| x[1])).collect();
    let representative = representative_episodes(&final_tumor);
    let mut w = csv::Writer::from_path(out_dir.join("representative.csv"))?;
    w.write_record(["percentile", "episode", "final_tumor"])?;
    for &(p, e) in &representative {
        w.write_record([p.to_string(), e.to_string(), final_tumor[e].to_string()])?;
    }
    w.flush()?;

    Ok(TrajectoryReport {
        episode_lengths: rows.iter().map(Vec::len).collect(),
        episode_returns: returns,
        final_tumor,
        representative,
        summary,
    })
}

/// Episode at each of [`REPRESENTATIVE_PERCENTILES`] of `final_tumor`, by
/// nearest rank on the sorted values (ties broken by episode index).
pub fn representative_episodes(final_tumor: &[f64]) -> Vec<(u32, usize)> {
    let n = final_tumor.len();
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| final_tumor[a].total_cmp(&final_tumor[b]).then(a.cmp(&b)));
    REPRESENTATIVE_PERCENTILES
        .iter()
        .map(|&p| {
            let rank = (f64::from(p) / 100.0 * (n - 1) as f64).round() as usize;
            (p, order[rank])
        })
        .collect()
}

fn write_summary(path: &Path, summary: &[StepSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "n_episodes".to_string()];
    for f in SUMMARY_FIELDS {
        header.push(format!("mean_{f}"));
        header.push(format!("std_{f}"));
    }
    w.write_record(&header)?;
    for s in summary {
        let mut row = vec![s.t.to_string(), s.n_episodes.to_string()];
        for k in 0..6 {
            row.push(s.mean[k].to_string());
            row.push(s.std[k].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_picks() {
        let tumor = [0.5, 0.1, 0.9, 0.3, 0.7];
        // sorted: 1 (0.1), 3 (0.3), 0 (0.5), 4 (0.7), 2 (0.9)
        assert_eq!(representative_episodes(&tumor), vec![(25, 3), (50, 0), (75, 4)]);
        assert_eq!(representative_episodes(&[2.0]), vec![(25, 0), (50, 0), (75, 0)]);
    }
}
