//! Library-level stage workflow, the same calls the subcommands make.

use std::path::{Path, PathBuf};

use coldchain_core::config::RunConfig;
use coldchain_core::data::read_feature_file;
use coldchain_core::pipeline::{self, build_envs, files, forecast_demand, read_costs, read_demand, sweep_envs, SweepGrid};
use coldchain_core::rl::{greedy_allocate, load_qnet};
use coldchain_core::sru::load_predictor;
use coldchain_core::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// The fixture config shrunk for speed, writing into `out`.
fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixtures().join("config.toml")).unwrap();
    cfg.output.dir = out.to_path_buf();
    cfg.predictor.epochs = 20;
    cfg.agent.episodes = 4;
    cfg.agent.horizon = 20;
    cfg
}

#[test]
fn stages_one_at_a_time_match_the_pipeline() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let whole = pipeline::run_pipeline(&small_config(a.path())).unwrap();

    let cfg = small_config(b.path());
    pipeline::run_ingest(&cfg).unwrap();
    pipeline::run_train_predictor(&cfg).unwrap();
    pipeline::run_eval_predictor(&cfg).unwrap();
    pipeline::run_simulate_costs(&cfg).unwrap();
    pipeline::run_train_agent(&cfg).unwrap();
    let allocations = pipeline::run_eval_agent(&cfg).unwrap();

    assert_eq!(allocations, whole.allocations);
    for name in [files::ALLOCATIONS, files::METRICS, files::QNET, files::DEMAND, files::REWARD_CURVES] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn persisted_artifacts_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = pipeline::run_pipeline(&cfg).unwrap();

    let features = read_feature_file(std::io::BufReader::new(
        std::fs::File::open(tmp.path().join(files::FEATURES)).unwrap(),
    ))
    .unwrap();
    assert_eq!(features.len(), 3);

    let model = load_predictor(&tmp.path().join(files::PREDICTOR)).unwrap();
    let demand = forecast_demand(&features, &model, cfg.predictor.warmup).unwrap();
    assert_eq!(demand, read_demand(&tmp.path().join(files::DEMAND)).unwrap());

    let qnet = load_qnet(&tmp.path().join(files::QNET)).unwrap();
    let costs = read_costs(&tmp.path().join(files::COSTS)).unwrap();
    assert_eq!(costs.len(), 3);
    assert!(costs.iter().all(|c| (0.0..=1.0).contains(&c.normalized_cost)));
    assert!(costs.iter().any(|c| c.normalized_cost == 1.0));

    let mut envs = build_envs(&demand, &costs, &cfg.agent).unwrap();
    let replay: Vec<_> = envs
        .iter_mut()
        .map(|(s, e)| greedy_allocate(&qnet, s, e).unwrap())
        .collect();
    assert_eq!(replay, run.allocations);

    let metrics = run.metrics;
    assert!(metrics.auc.is_some() && metrics.scaled_avg_reward.is_some());
}

#[test]
fn agent_stage_needs_costs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    pipeline::run_ingest(&cfg).unwrap();
    pipeline::run_train_predictor(&cfg).unwrap();
    match pipeline::run_train_agent(&cfg) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with(files::COSTS), "{p:?}"),
        other => panic!("expected a missing costs file, got {other:?}"),
    }
}

#[test]
fn demand_rows_must_be_contiguous() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("demand.csv");
    std::fs::write(&path, "state,day,predicted_demand\nA,15,10\nA,17,12\n").unwrap();
    assert!(matches!(read_demand(&path), Err(Error::Row { line: 3, .. })));
    std::fs::write(&path, "state,day,predicted_demand\nA,15,10\nB,15,3\nA,16,12\n").unwrap();
    assert!(matches!(read_demand(&path), Err(Error::Row { line: 4, .. })));
}

#[test]
fn sweep_cells_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    pipeline::run_pipeline(&cfg).unwrap();
    let demand = read_demand(&tmp.path().join(files::DEMAND)).unwrap();
    let costs = read_costs(&tmp.path().join(files::COSTS)).unwrap();
    let envs = build_envs(&demand, &costs, &cfg.agent).unwrap();
    let grid = SweepGrid {
        lrs: vec![0.1, 0.2],
        gammas: vec![0.5, 0.9],
    };
    let first = sweep_envs(&envs, &cfg.agent, &grid, &tmp.path().join("s1")).unwrap();
    let second = sweep_envs(&envs, &cfg.agent, &grid, &tmp.path().join("s2")).unwrap();
    assert_eq!(first, second);
    let seeds: Vec<u64> = first.iter().map(|c| c.seed).collect();
    assert_eq!(seeds, vec![42, 43, 40, 41]);
    assert_eq!(first[3].curves_file, "reward_curves_lr0.2_gamma0.9.csv");
}
