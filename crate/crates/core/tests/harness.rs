mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use chemo_rl::agent::{evaluate, AgentKind};
use chemo_rl::config::ExperimentConfig;
use chemo_rl::env::{ChemoEnv, Observability};
use chemo_rl::harness::{
    aggregate, compare_report, derive_seed, mean_std, read_external_csv, run_training, run_trajectories, CurvePoint,
    EvalReport, Manifest, RunSpec, SeedCurve, EVAL_STREAM,
};
use chemo_rl::Error;

fn spec(agent: AgentKind, dir: &Path, seeds: Vec<u64>, total: u64, every: u64) -> RunSpec {
    RunSpec {
        seeds,
        total_steps: total,
        eval_every: every,
        eval_episodes: 3,
        threads: 1,
        ..RunSpec::new(agent, Observability::Partial, dir)
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn smoke_run_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config();
    let s = spec(AgentKind::Td3, dir.path(), vec![0, 1, 2], 10_000, 2_500);
    let report = run_training(&s, &cfg).unwrap();
    assert!(report.failed.is_empty());
    assert_eq!(report.seeds.len(), 3);
    for curve in &report.seeds {
        let steps: Vec<u64> = curve.points.iter().map(|p| p.step).collect();
        assert_eq!(steps, [2_500, 5_000, 7_500, 10_000]);
        assert!(s.curve_path(curve.seed).exists());
        assert!(s.checkpoint_path(curve.seed).exists());
    }

    for (k, point) in report.aggregate.iter().enumerate() {
        let values: Vec<f64> = report.seeds.iter().map(|c| c.points[k].mean_return).collect();
        let mean = values.iter().sum::<f64>() / 3.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert_eq!(point.n_seeds, 3);
        assert!((point.mean_return - mean).abs() < 1e-12);
        assert!((point.std_return - var.sqrt()).abs() < 1e-12);
    }
    let agg = fs::read_to_string(s.aggregate_path()).unwrap();
    assert_eq!(agg.lines().count(), 5);

    // The saved checkpoint reproduces the final evaluation.
    let manifest_path = s.manifest_path(1);
    let manifest = Manifest::read(&manifest_path).unwrap();
    assert_eq!(manifest.steps, 10_000);
    assert_eq!(manifest.updates, 10_000 - 199);
    let agent = manifest.load_agent(&manifest_path).unwrap();
    let env_cfg = chemo_rl::env::EnvConfig {
        seed: 1,
        ..manifest.env_config()
    };
    let env = ChemoEnv::new(env_cfg, manifest.config.ode.clone()).unwrap();
    let returns = evaluate(agent.as_ref(), &env, 3, derive_seed(1, EVAL_STREAM, 4), None).unwrap();
    assert_eq!(mean_std(&returns).0, report.seeds[1].points[3].mean_return);

    let back = EvalReport::read(&s.report_path()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn single_checkpoint_when_total_equals_interval() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(AgentKind::Rtd3, dir.path(), vec![4], 300, 300);
    let report = run_training(&s, &common::tiny_config()).unwrap();
    assert_eq!(report.seeds[0].points.len(), 1);
    assert_eq!(report.aggregate.len(), 1);
    assert_eq!(report.aggregate[0].n_seeds, 1);
    assert_eq!(report.aggregate[0].std_return, 0.0);
}

#[test]
fn reruns_and_thread_counts_give_identical_files() {
    let cfg = common::tiny_config();
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(AgentKind::Rtd3, dir.path(), vec![3, 8], 800, 400);
        s.threads = threads;
        run_training(&s, &cfg).unwrap();
        dir_bytes(dir.path())
    };
    let a = run(1);
    assert_eq!(a.len(), 2 * 3 + 2);
    assert_eq!(a, run(1));
    assert_eq!(a, run(2));
}

#[test]
fn trajectory_outputs() {
    let cfg = common::tiny_config();
    let agent = chemo_rl::agent::build_agent(AgentKind::Rtd3, 3, 1.0, &cfg.agent, &cfg.network, 2).unwrap();

    let env = ChemoEnv::new(cfg.env.clone(), cfg.ode.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let one = run_trajectories(agent.as_ref(), &env, 1, 9, dir.path()).unwrap();
    assert!(one.summary.iter().all(|s| s.n_episodes == 1 && s.std.iter().all(|&v| v == 0.0)));

    let dir = tempfile::tempdir().unwrap();
    let rep = run_trajectories(agent.as_ref(), &env, 6, 9, dir.path()).unwrap();
    let rows = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap().lines().count();
    assert_eq!(rows, rep.episode_lengths.iter().sum::<usize>() + 1);
    assert_eq!(rep.representative.len(), 3);
    assert!(dir.path().join("summary.csv").exists());
    assert!(dir.path().join("representative.csv").exists());

    let quiet = ChemoEnv::new(cfg.env.clone(), cfg.ode.without_noise()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rep = run_trajectories(agent.as_ref(), &quiet, 4, 9, dir.path()).unwrap();
    assert!(rep.episode_returns.windows(2).all(|w| w[0] == w[1]));
    assert!(rep.episode_lengths.windows(2).all(|w| w[0] == w[1]));
    assert!(rep.summary.iter().all(|s| s.std.iter().all(|&v| v == 0.0)));

    let full = ChemoEnv::new(
        chemo_rl::env::EnvConfig {
            observability: Observability::Full,
            ..cfg.env.clone()
        },
        cfg.ode.clone(),
    )
    .unwrap();
    assert!(run_trajectories(agent.as_ref(), &full, 2, 0, dir.path()).is_err());
}

fn curve(seed: u64, finals: &[(u64, f64)]) -> SeedCurve {
    SeedCurve {
        seed,
        points: finals
            .iter()
            .map(|&(step, mean_return)| CurvePoint {
                step,
                mean_return,
                std_return: 0.0,
            })
            .collect(),
    }
}

#[test]
fn comparison_table() {
    let seeds = vec![curve(0, &[(5, 0.0), (10, 10.0)]), curve(1, &[(5, 0.0), (10, 20.0)]), curve(2, &[(5, 0.0), (10, 30.0)])];
    let report = EvalReport {
        agent: AgentKind::Rtd3,
        observability: Observability::Partial,
        total_steps: 10,
        eval_every: 5,
        eval_episodes: 1,
        discounted: false,
        std_estimator: chemo_rl::harness::STD_ESTIMATOR.into(),
        aggregate: aggregate(&seeds).unwrap(),
        seeds,
        failed: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    let ext = dir.path().join("baselines.csv");
    fs::write(&ext, "method,observability,n_seeds,final_mean,final_std\nrppo,pomdp,5,1.5,0.5\n").unwrap();
    let rows = compare_report(&[report], &[ext.as_path()]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].n_seeds, rows[0].final_mean, rows[0].final_std), (3, 20.0, 10.0));
    assert_eq!(rows[1].method, "rppo");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "method,obs,n,mean,std\nx,y,1,0,0\n").unwrap();
    assert!(matches!(read_external_csv(&bad), Err(Error::Schema(_))));

    let mismatched = [curve(0, &[(5, 1.0), (10, 2.0)]), curve(1, &[(5, 1.0), (15, 2.0)])];
    assert!(matches!(aggregate(&mismatched), Err(Error::Schema(_))));
}

#[test]
fn failed_seed_is_reported_and_exit_code_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config();
    cfg.ode.r1 = 1e200;
    let cfg_path = dir.path().join("divergent.toml");
    fs::write(&cfg_path, cfg.to_toml_string()).unwrap();
    let out = dir.path().join("runs");
    let status = Command::new(env!("CARGO_BIN_EXE_chemo-rl"))
        .args(["train", "--agent", "td3", "--seeds", "0", "--total-steps", "50", "--eval-every", "50"])
        .args(["--eval-episodes", "1", "--out"])
        .arg(&out)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(!status.status.success());
    let report = EvalReport::read(&out.join("td3-pomdp-report.json")).unwrap();
    assert_eq!(report.failed.len(), 1);
    assert!(report.seeds.is_empty());
    assert!(String::from_utf8_lossy(&status.stderr).contains("seed 0"));

    let ok = Command::new(env!("CARGO_BIN_EXE_chemo-rl"))
        .args(["train", "--agent", "td3", "--seeds", "0", "--total-steps", "50", "--eval-every", "50"])
        .args(["--eval-episodes", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = common::tiny_config();
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}
