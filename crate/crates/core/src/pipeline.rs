//! Stage runners behind the command line. Each stage reads the artifacts of
//! earlier stages from the output directory and writes its own, so any stage
//! can be re-run alone once its inputs exist.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::cost::{aggregate_cost, normalize_costs, read_state_meta, simulate_cost_matrix, CostMatrix, StateMeta};
use crate::data::{ingest, read_feature_file, write_feature_file, FeatureSequence, IngestReport};
use crate::error::{Error, Result};
use crate::eval::{
    convergence_ratio, tolerance_prf, write_metrics, write_pr_curve, ConvergenceRatio, Metrics, PrCurve,
    PredictionPair,
};
use crate::rl::{
    greedy_allocate, load_qnet, save_qnet, train_agent, write_allocations, write_reward_curves, AgentConfig,
    Allocation, AllocationEnv, RewardCurve, TrainedAgent,
};
use crate::sru::{
    load_predictor, save_predictor, scaled_to_doses, test_pairs, train_predictor, SruModel, TrainConfig,
    TrainingCurve,
};

/// Artifact file names inside the output directory.
pub mod files {
    pub const FEATURES: &str = "features.csv";
    pub const INGEST_REPORT: &str = "ingest_report.json";
    pub const PREDICTOR: &str = "predictor.ckpt";
    pub const PREDICTOR_ABLATION: &str = "predictor_ablation.ckpt";
    pub const TRAINING_CURVE: &str = "training_curve.csv";
    pub const TRAINING_CURVE_ABLATION: &str = "training_curve_ablation.csv";
    pub const TEST_PREDICTIONS: &str = "test_predictions.csv";
    pub const PR_CURVE: &str = "pr_curve.csv";
    pub const PR_CURVE_ABLATION: &str = "pr_curve_ablation.csv";
    pub const PREDICTOR_METRICS: &str = "predictor_metrics.json";
    pub const COST_MATRIX: &str = "cost_matrix.csv";
    pub const COSTS: &str = "costs.csv";
    pub const DEMAND: &str = "demand.csv";
    pub const QNET: &str = "qnet.ckpt";
    pub const REWARD_CURVES: &str = "reward_curves.csv";
    pub const AGENT_SUMMARY: &str = "agent_summary.json";
    pub const ALLOCATIONS: &str = "allocations.csv";
    pub const METRICS: &str = "metrics.json";
    pub const SWEEP_DIR: &str = "sweep";
    pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
}

/// Tolerance bands for the headline F1 values.
pub const BAND_10: f64 = 0.10;
pub const BAND_20: f64 = 0.20;

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output.dir.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn load_features(cfg: &RunConfig) -> Result<Vec<FeatureSequence>> {
    read_feature_file(open(&out_path(cfg, files::FEATURES))?)
}

// ---------------------------------------------------------------- ingest

pub fn run_ingest(cfg: &RunConfig) -> Result<IngestReport> {
    let (sequences, report) = ingest(
        &cfg.data.vaccinations,
        &cfg.data.population,
        &cfg.data.states,
        cfg.data.split(),
    )?;
    if sequences.is_empty() {
        return Err(Error::invalid("no state has enough data points"));
    }
    let path = out_path(cfg, files::FEATURES);
    let mut out = create(&path)?;
    write_feature_file(&mut out, &sequences)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&out_path(cfg, files::INGEST_REPORT), &report)?;
    info!("ingested {} states", sequences.len());
    Ok(report)
}

// ---------------------------------------------------------------- predictor

/// Loss curves of the configured predictor and of its attention-flipped twin.
#[derive(Debug, Clone)]
pub struct PredictorRun {
    pub model: SruModel,
    pub curve: TrainingCurve,
    pub ablation_curve: TrainingCurve,
}

fn ablation_config(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        use_attention: !cfg.use_attention,
        ..*cfg
    }
}

/// Trains the configured variant plus the ablation twin (attention toggled)
/// with the same seed and epoch budget.
pub fn run_train_predictor(cfg: &RunConfig) -> Result<PredictorRun> {
    let features = load_features(cfg)?;
    let (model, curve) = train_predictor(&features, &cfg.predictor)?;
    let (ablation, ablation_curve) = train_predictor(&features, &ablation_config(&cfg.predictor))?;
    save_predictor(&model, &out_path(cfg, files::PREDICTOR))?;
    save_predictor(&ablation, &out_path(cfg, files::PREDICTOR_ABLATION))?;
    curve.write_csv(&out_path(cfg, files::TRAINING_CURVE))?;
    ablation_curve.write_csv(&out_path(cfg, files::TRAINING_CURVE_ABLATION))?;
    Ok(PredictorRun {
        model,
        curve,
        ablation_curve,
    })
}

/// Per-day test-split forecasts in doses next to the recorded doses.
pub fn test_predictions(features: &[FeatureSequence], model: &SruModel, warmup: usize) -> Result<Vec<(String, usize, PredictionPair)>> {
    let mut out = Vec::new();
    for seq in features {
        let pairs = test_pairs(seq, warmup);
        let ends: Vec<usize> = pairs.iter().map(|p| p.end).collect();
        let preds = model.predict_prefixes(&seq.features, &ends)?;
        for (p, scaled) in pairs.iter().zip(preds) {
            let day = p.end + 1;
            out.push((
                seq.state.clone(),
                day,
                PredictionPair {
                    predicted: scaled_to_doses(scaled, seq.population, &seq.state) as f64,
                    actual: seq.targets[day],
                },
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub auc: f64,
    pub f1_at_10: f64,
    pub f1_at_20: f64,
    pub test_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub attention: VariantScores,
    pub no_attention: VariantScores,
    /// How much sooner the attention variant reaches the no-attention
    /// variant's final train loss; `None` when that target is meaningless.
    pub convergence: Option<ConvergenceRatio>,
    pub final_train_mse_attention: f64,
    pub final_train_mse_no_attention: f64,
}

fn variant_scores(pairs: &[PredictionPair]) -> Result<(VariantScores, PrCurve)> {
    let c10 = tolerance_prf(pairs, BAND_10)?;
    let c20 = tolerance_prf(pairs, BAND_20)?;
    Ok((
        VariantScores {
            auc: c10.auc,
            f1_at_10: c10.f1,
            f1_at_20: c20.f1,
            test_pairs: pairs.len(),
        },
        c10,
    ))
}

/// Attention-vs-plain convergence on train loss: target is the plain variant's final loss.
pub fn attention_convergence(attention: &[f64], plain: &[f64]) -> Option<ConvergenceRatio> {
    let target = *plain.last()?;
    match convergence_ratio(attention, plain, target) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("convergence ratio unavailable: {e}");
            None
        }
    }
}

pub fn run_eval_predictor(cfg: &RunConfig) -> Result<PredictorMetrics> {
    let features = load_features(cfg)?;
    let primary = load_predictor(&out_path(cfg, files::PREDICTOR))?;
    let ablation = load_predictor(&out_path(cfg, files::PREDICTOR_ABLATION))?;
    let curve = TrainingCurve::read_csv(&out_path(cfg, files::TRAINING_CURVE))?;
    let ablation_curve = TrainingCurve::read_csv(&out_path(cfg, files::TRAINING_CURVE_ABLATION))?;
    let warmup = cfg.predictor.warmup;

    let primary_preds = test_predictions(&features, &primary, warmup)?;
    let ablation_preds = test_predictions(&features, &ablation, warmup)?;
    let pairs = |v: &[(String, usize, PredictionPair)]| v.iter().map(|x| x.2).collect::<Vec<_>>();
    let (primary_scores, primary_pr) = variant_scores(&pairs(&primary_preds))?;
    let (ablation_scores, ablation_pr) = variant_scores(&pairs(&ablation_preds))?;

    let path = out_path(cfg, files::TEST_PREDICTIONS);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["state", "day", "variant", "predicted", "actual"])?;
    for (tag, preds) in [("primary", &primary_preds), ("ablation", &ablation_preds)] {
        for (state, day, p) in preds {
            w.write_record([
                state.clone(),
                day.to_string(),
                tag.to_string(),
                format!("{}", p.predicted),
                format!("{}", p.actual),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (name, pr) in [(files::PR_CURVE, &primary_pr), (files::PR_CURVE_ABLATION, &ablation_pr)] {
        let path = out_path(cfg, name);
        let mut out = create(&path)?;
        write_pr_curve(&mut out, pr)?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }

    let (att, plain, att_curve, plain_curve) = if cfg.predictor.use_attention {
        (primary_scores, ablation_scores, &curve, &ablation_curve)
    } else {
        (ablation_scores, primary_scores, &ablation_curve, &curve)
    };
    let last = |c: &TrainingCurve| c.epochs.last().map_or(f64::NAN, |e| e.train_mse);
    let metrics = PredictorMetrics {
        attention: att,
        no_attention: plain,
        convergence: attention_convergence(&att_curve.train_mse(), &plain_curve.train_mse()),
        final_train_mse_attention: last(att_curve),
        final_train_mse_no_attention: last(plain_curve),
    };
    write_json(&out_path(cfg, files::PREDICTOR_METRICS), &metrics)?;
    update_metrics(cfg, |m| {
        m.auc = Some(primary_scores.auc);
        m.f1_at_10 = Some(primary_scores.f1_at_10);
        m.f1_at_20 = Some(primary_scores.f1_at_20);
        m.convergence_ratio = metrics.convergence.map(|c| c.ratio);
    })?;
    Ok(metrics)
}

fn update_metrics(cfg: &RunConfig, f: impl FnOnce(&mut Metrics)) -> Result<Metrics> {
    let path = out_path(cfg, files::METRICS);
    let mut m = if path.exists() { read_json(&path)? } else { Metrics::default() };
    f(&mut m);
    let mut out = create(&path)?;
    write_metrics(&mut out, &m)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

// ---------------------------------------------------------------- costs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCost {
    pub state: String,
    pub aggregate_cost: f64,
    pub normalized_cost: f64,
}

fn select_metas(cfg: &RunConfig) -> Result<Vec<StateMeta>> {
    let metas = read_state_meta(&cfg.data.state_meta)?;
    if cfg.data.states.is_empty() {
        return Ok(metas);
    }
    cfg.data
        .states
        .iter()
        .map(|s| {
            metas
                .iter()
                .find(|m| &m.state == s)
                .cloned()
                .ok_or_else(|| Error::UnknownState(format!("{s} (not in state meta)")))
        })
        .collect()
}

pub fn run_simulate_costs(cfg: &RunConfig) -> Result<Vec<StateCost>> {
    let metas = select_metas(cfg)?;
    let matrix = simulate_cost_matrix(&metas, cfg.costs.seed)?;
    let aggregated = metas
        .iter()
        .map(|m| aggregate_cost(&matrix, &m.state, cfg.costs.aggregate_mode))
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_costs(&aggregated)?;
    let costs: Vec<StateCost> = metas
        .iter()
        .zip(aggregated.iter().zip(&normalized))
        .map(|(m, (a, n))| StateCost {
            state: m.state.clone(),
            aggregate_cost: *a,
            normalized_cost: *n,
        })
        .collect();

    let path = out_path(cfg, files::COST_MATRIX);
    let mut out = create(&path)?;
    matrix.write_csv(&mut out)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    write_costs(&out_path(cfg, files::COSTS), &costs)?;
    Ok(costs)
}

fn write_costs(path: &Path, costs: &[StateCost]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["state", "aggregate_cost", "normalized_cost"])?;
    for c in costs {
        w.write_record([
            c.state.clone(),
            format!("{:e}", c.aggregate_cost),
            format!("{:e}", c.normalized_cost),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_costs(path: &Path) -> Result<Vec<StateCost>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<StateCost>, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(rows)
}

/// Re-reads a cost matrix artifact (for inspection and round-trip checks).
pub fn read_cost_matrix(cfg: &RunConfig) -> Result<CostMatrix> {
    let path = out_path(cfg, files::COST_MATRIX);
    CostMatrix::read_csv(open(&path)?, &path)
}

// ---------------------------------------------------------------- demand

/// Predicted daily demand for one state; `day` indexes the state's series.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    pub state: String,
    pub first_day: usize,
    pub doses: Vec<f64>,
}

/// One-day-ahead forecasts for every day that has `warmup` days of history.
pub fn forecast_demand(features: &[FeatureSequence], model: &SruModel, warmup: usize) -> Result<Vec<DemandSeries>> {
    features
        .iter()
        .map(|seq| {
            let first_day = warmup + 1;
            if first_day >= seq.len() {
                return Err(Error::invalid(format!(
                    "{}: {} days leave nothing to forecast after {warmup} warm-up days",
                    seq.state,
                    seq.len()
                )));
            }
            let ends: Vec<usize> = (first_day - 1..seq.len() - 1).collect();
            let scaled = model.predict_prefixes(&seq.features, &ends)?;
            Ok(DemandSeries {
                state: seq.state.clone(),
                first_day,
                doses: scaled
                    .iter()
                    .map(|s| scaled_to_doses(*s, seq.population, &seq.state) as f64)
                    .collect(),
            })
        })
        .collect()
}

fn write_demand(path: &Path, series: &[DemandSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["state", "day", "predicted_demand"])?;
    for s in series {
        for (k, d) in s.doses.iter().enumerate() {
            w.write_record([s.state.clone(), (s.first_day + k).to_string(), format!("{d}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_demand(path: &Path) -> Result<Vec<DemandSeries>> {
    #[derive(Deserialize)]
    struct Row {
        state: String,
        day: usize,
        predicted_demand: f64,
    }
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out: Vec<DemandSeries> = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let r: Row = row?;
        let line = i as u64 + 2;
        match out.last_mut() {
            Some(s) if s.state == r.state => {
                if r.day != s.first_day + s.doses.len() {
                    return Err(Error::Row {
                        path: path.to_path_buf(),
                        line,
                        message: format!("day {} out of sequence for {}", r.day, r.state),
                    });
                }
                s.doses.push(r.predicted_demand);
            }
            _ => {
                if out.iter().any(|s| s.state == r.state) {
                    return Err(Error::Row {
                        path: path.to_path_buf(),
                        line,
                        message: format!("rows for {} are not contiguous", r.state),
                    });
                }
                out.push(DemandSeries {
                    state: r.state,
                    first_day: r.day,
                    doses: vec![r.predicted_demand],
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

// ---------------------------------------------------------------- agent

/// One environment per demand series, priced with that state's normalized cost.
pub fn build_envs(demand: &[DemandSeries], costs: &[StateCost], agent: &AgentConfig) -> Result<Vec<(String, AllocationEnv)>> {
    demand
        .iter()
        .map(|s| {
            let cost = costs
                .iter()
                .find(|c| c.state == s.state)
                .ok_or_else(|| Error::UnknownState(format!("{} (no simulated cost)", s.state)))?;
            let env = AllocationEnv::new(&s.doses, cost.normalized_cost, agent.horizon, agent.env_config())?;
            Ok((s.state.clone(), env))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrainingSummary {
    pub state: String,
    pub final_quartile_avg_reward: f64,
    pub final_quartile_scaled_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub scaled_avg_reward: f64,
    pub experiences_stored: usize,
    pub sgd_steps: u64,
    pub states: Vec<StateTrainingSummary>,
}

fn summarize(agent: &TrainedAgent) -> AgentSummary {
    AgentSummary {
        scaled_avg_reward: agent.scaled_avg_reward(),
        experiences_stored: agent.experiences_stored,
        sgd_steps: agent.sgd_steps,
        states: agent
            .curves
            .iter()
            .map(|c| StateTrainingSummary {
                state: c.state.clone(),
                final_quartile_avg_reward: c.final_quartile_raw(),
                final_quartile_scaled_reward: c.final_quartile_scaled(),
            })
            .collect(),
    }
}

fn write_curves(path: &Path, curves: &[RewardCurve]) -> Result<()> {
    let mut out = create(path)?;
    write_reward_curves(&mut out, curves)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Forecasts demand with the trained predictor, then trains the Q-network on it.
pub fn run_train_agent(cfg: &RunConfig) -> Result<AgentSummary> {
    let features = load_features(cfg)?;
    let model = load_predictor(&out_path(cfg, files::PREDICTOR))?;
    let costs = read_costs(&out_path(cfg, files::COSTS))?;
    let demand = forecast_demand(&features, &model, cfg.predictor.warmup)?;
    write_demand(&out_path(cfg, files::DEMAND), &demand)?;

    let mut envs = build_envs(&demand, &costs, &cfg.agent)?;
    let agent = train_agent(&mut envs, &cfg.agent)?;
    save_qnet(&agent.qnet, &cfg.agent, &out_path(cfg, files::QNET))?;
    write_curves(&out_path(cfg, files::REWARD_CURVES), &agent.curves)?;
    let summary = summarize(&agent);
    write_json(&out_path(cfg, files::AGENT_SUMMARY), &summary)?;
    Ok(summary)
}

pub fn run_eval_agent(cfg: &RunConfig) -> Result<Vec<Allocation>> {
    let qnet = load_qnet(&out_path(cfg, files::QNET))?;
    let demand = read_demand(&out_path(cfg, files::DEMAND))?;
    let costs = read_costs(&out_path(cfg, files::COSTS))?;
    let mut envs = build_envs(&demand, &costs, &cfg.agent)?;
    let allocations = envs
        .iter_mut()
        .map(|(state, env)| greedy_allocate(&qnet, state, env))
        .collect::<Result<Vec<_>>>()?;

    let path = out_path(cfg, files::ALLOCATIONS);
    let mut out = create(&path)?;
    write_allocations(&mut out, &allocations)?;
    out.flush().map_err(|e| Error::io(&path, e))?;

    let summary_path = out_path(cfg, files::AGENT_SUMMARY);
    let scaled = if summary_path.exists() {
        Some(read_json::<AgentSummary>(&summary_path)?.scaled_avg_reward)
    } else {
        None
    };
    update_metrics(cfg, |m| m.scaled_avg_reward = scaled)?;
    for a in &allocations {
        info!(
            "{}: {} doses over {} days, total reward {:.3}",
            a.state,
            a.total_allocation,
            a.days.len(),
            a.total_reward
        );
    }
    Ok(allocations)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub predictor: PredictorMetrics,
    pub agent: AgentSummary,
    pub allocations: Vec<Allocation>,
    pub metrics: Metrics,
}

/// Every stage in order, writing every intermediate artifact.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let metrics_path = out_path(cfg, files::METRICS);
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    run_ingest(cfg)?;
    run_train_predictor(cfg)?;
    let predictor = run_eval_predictor(cfg)?;
    run_simulate_costs(cfg)?;
    let agent = run_train_agent(cfg)?;
    let allocations = run_eval_agent(cfg)?;
    let metrics = read_json(&metrics_path)?;
    Ok(PipelineOutcome {
        predictor,
        agent,
        allocations,
        metrics,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lrs: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            lrs: vec![0.1, 0.2, 0.3],
            gammas: (1..=9).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub lr: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Mean over states of the final-quartile episode reward.
    pub final_quartile_avg_reward: f64,
    /// Same, after min-max scaling each state's rewards over its own run.
    pub final_quartile_scaled_reward: f64,
    pub scaled_avg_reward: f64,
    pub curves_file: String,
}

/// Seed of cell `index`: the run seed mixed with the cell index.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

pub fn curves_file_name(lr: f64, gamma: f64) -> String {
    format!("reward_curves_lr{lr}_gamma{gamma}.csv")
}

/// Trains one agent per `(lr, γ)` cell on fresh copies of `envs`, in parallel.
/// Each cell's reward curves are written to `dir`; cells come back in grid order.
pub fn sweep_envs(envs: &[(String, AllocationEnv)], base: &AgentConfig, grid: &SweepGrid, dir: &Path) -> Result<Vec<SweepCell>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cells: Vec<(usize, f64, f64)> = grid
        .lrs
        .iter()
        .flat_map(|lr| grid.gammas.iter().map(move |g| (*lr, *g)))
        .enumerate()
        .map(|(i, (lr, g))| (i, lr, g))
        .collect();
    let results: Vec<Result<SweepCell>> = cells
        .par_iter()
        .map(|&(index, lr, gamma)| {
            let cfg = AgentConfig {
                lr,
                gamma,
                seed: cell_seed(base.seed, index),
                ..base.clone()
            };
            let mut local = envs.to_vec();
            let agent = train_agent(&mut local, &cfg)?;
            let file = curves_file_name(lr, gamma);
            write_curves(&dir.join(&file), &agent.curves)?;
            let mean = |f: &dyn Fn(&RewardCurve) -> f64| {
                agent.curves.iter().map(f).sum::<f64>() / agent.curves.len() as f64
            };
            Ok(SweepCell {
                lr,
                gamma,
                seed: cfg.seed,
                final_quartile_avg_reward: mean(&|c| c.final_quartile_raw()),
                final_quartile_scaled_reward: mean(&|c| c.final_quartile_scaled()),
                scaled_avg_reward: agent.scaled_avg_reward(),
                curves_file: file,
            })
        })
        .collect();
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;

    let path = dir.join(files::SWEEP_SUMMARY);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "lr",
        "gamma",
        "seed",
        "final_quartile_avg_reward",
        "final_quartile_scaled_reward",
        "scaled_avg_reward",
        "curves_file",
    ])?;
    for c in &cells {
        w.write_record([
            c.lr.to_string(),
            c.gamma.to_string(),
            c.seed.to_string(),
            format!("{:e}", c.final_quartile_avg_reward),
            format!("{:e}", c.final_quartile_scaled_reward),
            format!("{:e}", c.scaled_avg_reward),
            c.curves_file.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}

/// The learning-rate × discount grid on the persisted demand and cost artifacts.
pub fn run_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    for lr in &grid.lrs {
        AgentConfig { lr: *lr, ..cfg.agent.clone() }.validate()?;
    }
    for g in &grid.gammas {
        AgentConfig { gamma: *g, ..cfg.agent.clone() }.validate()?;
    }
    let demand = read_demand(&out_path(cfg, files::DEMAND))?;
    let costs = read_costs(&out_path(cfg, files::COSTS))?;
    let envs = build_envs(&demand, &costs, &cfg.agent)?;
    sweep_envs(&envs, &cfg.agent, grid, &out_path(cfg, files::SWEEP_DIR))
}
