use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::model::{PrefixTarget, SruConfig, SruModel};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::numeric::{read_checkpoint, sgd_step, write_checkpoint, Checkpoint, Parameters, Rng};

/// Days of history required before the first training pair.
pub const WARMUP: usize = 14;
pub const CHECKPOINT_KIND: &str = "sru-predictor";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_attention: bool,
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.01,
            seed: 42,
            use_attention: true,
            warmup: WARMUP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    /// `None` when no validation pairs exist.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochLoss>,
}

impl TrainingCurve {
    pub fn train_mse(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_mse).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(out, "epoch,train_mse,val_mse")?;
            for e in &self.epochs {
                match e.val_mse {
                    Some(v) => writeln!(out, "{},{:e},{:e}", e.epoch, e.train_mse, v)?,
                    None => writeln!(out, "{},{:e},", e.epoch, e.train_mse)?,
                }
            }
            out.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            epoch: usize,
            train_mse: f64,
            val_mse: Option<f64>,
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let mut epochs = Vec::new();
        for row in rdr.deserialize() {
            let r: Row = row?;
            epochs.push(EpochLoss {
                epoch: r.epoch,
                train_mse: r.train_mse,
                val_mse: r.val_mse,
            });
        }
        Ok(TrainingCurve { epochs })
    }
}

/// Pairs `[0..=t] → y_{t+1}` whose target day falls in `[lo, hi)`.
pub fn prefix_pairs(seq: &FeatureSequence, warmup: usize, lo: usize, hi: usize) -> Vec<PrefixTarget> {
    let hi = hi.min(seq.len());
    (lo.max(warmup + 1)..hi)
        .map(|day| PrefixTarget {
            end: day - 1,
            target: seq.scaled_target(day),
        })
        .collect()
}

pub fn train_pairs(seq: &FeatureSequence, warmup: usize) -> Vec<PrefixTarget> {
    prefix_pairs(seq, warmup, 0, seq.split.train_end)
}

pub fn validation_pairs(seq: &FeatureSequence, warmup: usize) -> Vec<PrefixTarget> {
    prefix_pairs(seq, warmup, seq.split.train_end, seq.split.val_end)
}

pub fn test_pairs(seq: &FeatureSequence, warmup: usize) -> Vec<PrefixTarget> {
    prefix_pairs(seq, warmup, seq.split.val_end, seq.len())
}

/// Mean squared error over the given pairs of every sequence; `None` if there are none.
pub fn dataset_mse(
    model: &SruModel,
    dataset: &[FeatureSequence],
    pairs: impl Fn(&FeatureSequence) -> Vec<PrefixTarget>,
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in dataset {
        let p = pairs(seq);
        if p.is_empty() {
            continue;
        }
        sum += model.loss_and_grad(&seq.features, &p, 1.0, None, None)?;
        count += p.len();
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// SGD on next-day MSE, one update per state per epoch in a seeded shuffled order.
pub fn train_predictor(dataset: &[FeatureSequence], config: &TrainConfig) -> Result<(SruModel, TrainingCurve)> {
    if (!(config.lr > 0.0) || !config.lr.is_finite()) && config.lr != 0.0 {
        return Err(Error::Config {
            field: "predictor.lr".into(),
            message: format!("learning rate must be positive, got {}", config.lr),
        });
    }
    let per_state: Vec<Vec<PrefixTarget>> = dataset.iter().map(|s| train_pairs(s, config.warmup)).collect();
    if per_state.iter().all(|p| p.is_empty()) {
        return Err(Error::invalid(format!(
            "no training pairs: every train split is shorter than warmup {} + 2 days",
            config.warmup
        )));
    }

    let mut rng = Rng::new(config.seed);
    let mut model = SruModel::random(SruConfig::new(config.use_attention), &mut rng)?;
    let mut grad = SruModel::zeros(model.config)?;
    let mut params = model.flatten();
    let mut order: Vec<usize> = (0..dataset.len()).filter(|&i| !per_state[i].is_empty()).collect();
    let mut curve = TrainingCurve::default();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let pairs = &per_state[i];
            grad.zero();
            let weight = 1.0 / pairs.len() as f64;
            model
                .loss_and_grad(&dataset[i].features, pairs, weight, Some(&mut grad), None)
                .map_err(|e| diverged(epoch, e))?;
            sgd_step(&mut params, &grad.flatten(), config.lr)?;
            model.assign(&params)?;
        }
        let train_mse = dataset_mse(&model, dataset, |s| train_pairs(s, config.warmup))
            .map_err(|e| diverged(epoch, e))?
            .expect("non-empty train pairs");
        let val_mse = dataset_mse(&model, dataset, |s| validation_pairs(s, config.warmup))
            .map_err(|e| diverged(epoch, e))?;
        if !train_mse.is_finite() || val_mse.is_some_and(|v| !v.is_finite()) {
            return Err(diverged(epoch, Error::NonFinite("loss".into())));
        }
        if epoch == 1 || epoch % 50 == 0 || epoch == config.epochs {
            info!("predictor epoch {epoch}: train mse {train_mse:.6e}, val mse {val_mse:?}");
        }
        curve.epochs.push(EpochLoss { epoch, train_mse, val_mse });
    }
    Ok((model, curve))
}

fn diverged(epoch: usize, cause: Error) -> Error {
    Error::numerical("train-predictor", format!("epoch {epoch}: {cause}"))
}

/// Forecast for the day after `t` in doses: output × population, clamped at 0, rounded.
pub fn predict_demand(dataset: &[FeatureSequence], state: &str, t: usize, model: &SruModel) -> Result<u64> {
    let seq = dataset
        .iter()
        .find(|s| s.state == state)
        .ok_or_else(|| Error::UnknownState(state.to_string()))?;
    if t >= seq.len() {
        return Err(Error::invalid(format!("day {t} beyond {state}'s {} days", seq.len())));
    }
    let scaled = model.predict(&seq.features[..=t])?;
    Ok(scaled_to_doses(scaled, seq.population, state))
}

pub fn scaled_to_doses(scaled: f64, population: f64, state: &str) -> u64 {
    let doses = scaled * population;
    if doses < 0.0 {
        warn!("negative demand forecast {doses:.1} for {state} clamped to 0");
        return 0;
    }
    doses.round() as u64
}

pub fn save_predictor(model: &SruModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        kind: CHECKPOINT_KIND.into(),
        meta: vec![
            ("input_dim".into(), model.config.input_dim.to_string()),
            ("hidden_dim".into(), model.config.hidden_dim.to_string()),
            ("use_attention".into(), model.config.use_attention.to_string()),
            ("fixed_len".into(), model.config.fixed_len.to_string()),
        ],
        tensors: model.tensors(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(&mut out, &ckpt)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_predictor(path: &Path) -> Result<SruModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ckpt = read_checkpoint(BufReader::new(file))?;
    if ckpt.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "expected kind `{CHECKPOINT_KIND}`, found `{}`",
            ckpt.kind
        )));
    }
    let num = |key: &str| -> Result<usize> {
        ckpt.meta_value(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta `{key}`")))
    };
    let use_attention = match ckpt.meta_value("use_attention") {
        Some("true") => true,
        Some("false") => false,
        _ => return Err(Error::Checkpoint("missing or bad meta `use_attention`".into())),
    };
    let config = SruConfig {
        input_dim: num("input_dim")?,
        hidden_dim: num("hidden_dim")?,
        use_attention,
        fixed_len: num("fixed_len")?,
    };
    let mut model = SruModel::zeros(config)?;
    model.load_tensors(&ckpt.tensors)?;
    Ok(model)
}
