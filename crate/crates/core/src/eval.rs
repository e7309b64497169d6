//! Tolerance-band precision/recall for the demand predictor, convergence
//! speed comparison of two loss curves, and min-max scaled rewards.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionPair {
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Thresholds in descending order, so recall never decreases along the list.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub f1: f64,
    pub positives: usize,
}

/// Positive when the prediction is within `band` of the truth (exact match when the truth is 0).
pub fn tolerance_label(pair: &PredictionPair, band: f64) -> bool {
    if pair.actual == 0.0 {
        pair.predicted == 0.0
    } else {
        (pair.predicted - pair.actual).abs() <= band * pair.actual
    }
}

/// Higher is better: `−|pred − true| / max(true, 1)`.
pub fn tolerance_score(pair: &PredictionPair) -> f64 {
    -(pair.predicted - pair.actual).abs() / pair.actual.max(1.0)
}

fn counts(labels: &[bool], scores: &[f64], threshold: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (l, s) in labels.iter().zip(scores) {
        if *s >= threshold {
            if *l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

fn f1(tp: usize, fp: usize, positives: usize) -> f64 {
    let predicted = tp + fp;
    if tp == 0 || predicted == 0 || positives == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / positives as f64;
    2.0 * p * r / (p + r)
}

/// Sweeps a threshold over every distinct score. AUC is the trapezoidal area
/// under precision against recall, starting from (recall 0, precision 1); it
/// is 0 when no pair is labeled positive. F1 is taken at the operating point
/// `score ≥ −band`.
pub fn tolerance_prf(pairs: &[PredictionPair], band: f64) -> Result<PrCurve> {
    if pairs.is_empty() {
        return Err(Error::invalid("no prediction pairs"));
    }
    if !(band > 0.0 && band < 1.0) {
        return Err(Error::invalid(format!("band must lie in (0, 1), got {band}")));
    }
    if pairs.iter().any(|p| !p.predicted.is_finite() || !(p.actual >= 0.0) || !p.actual.is_finite()) {
        return Err(Error::invalid("predictions must be finite and truths non-negative"));
    }
    let labels: Vec<bool> = pairs.iter().map(|p| tolerance_label(p, band)).collect();
    let scores: Vec<f64> = pairs.iter().map(tolerance_score).collect();
    let positives = labels.iter().filter(|l| **l).count();

    let mut thresholds = scores.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<PrPoint> = thresholds
        .iter()
        .map(|&t| {
            let (tp, fp) = counts(&labels, &scores, t);
            PrPoint {
                threshold: t,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if positives > 0 { tp as f64 / positives as f64 } else { 0.0 },
            }
        })
        .collect();

    let auc = if positives == 0 {
        0.0
    } else {
        let mut area = 0.0;
        let (mut r0, mut p0) = (0.0, 1.0);
        for pt in &points {
            area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
            r0 = pt.recall;
            p0 = pt.precision;
        }
        area
    };
    let (tp, fp) = counts(&labels, &scores, -band);
    Ok(PrCurve {
        points,
        auc,
        f1: f1(tp, fp, positives),
        positives,
    })
}

pub fn write_pr_curve<W: Write>(out: W, curve: &PrCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "precision", "recall"])?;
    for p in &curve.points {
        w.write_record([
            format!("{:e}", p.threshold),
            format!("{:e}", p.precision),
            format!("{:e}", p.recall),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<pr curve>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRatio {
    pub ratio: f64,
    /// 1-based epoch at which each curve first reaches the target.
    pub epoch_a: usize,
    pub epoch_b: Option<usize>,
    /// True when `curve_b` never reached the target, making `ratio` a lower bound.
    pub lower_bound: bool,
}

fn first_reaching(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|v| *v <= target).map(|i| i + 1)
}

/// How many times faster `curve_a` reaches `target` than `curve_b`.
pub fn convergence_ratio(curve_a: &[f64], curve_b: &[f64], target: f64) -> Result<ConvergenceRatio> {
    if curve_a.is_empty() || curve_b.is_empty() {
        return Err(Error::invalid("empty loss curve"));
    }
    if target >= curve_a[0] && target >= curve_b[0] {
        return Err(Error::invalid(format!(
            "target {target} is above both starting losses; every curve meets it at once"
        )));
    }
    let epoch_a = first_reaching(curve_a, target)
        .ok_or_else(|| Error::invalid(format!("first curve never reaches {target}")))?;
    let epoch_b = first_reaching(curve_b, target);
    let (ratio, lower_bound) = match epoch_b {
        Some(b) => (b as f64 / epoch_a as f64, false),
        None => (curve_b.len() as f64 / epoch_a as f64, true),
    };
    Ok(ConvergenceRatio {
        ratio,
        epoch_a,
        epoch_b,
        lower_bound,
    })
}

/// Affine map taking `[min, max]` of a reward run onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScale {
    pub min: f64,
    pub max: f64,
}

impl RewardScale {
    pub fn fit(rewards: &[f64]) -> Self {
        let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        RewardScale { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// 0.5 for a degenerate range.
    pub fn apply(&self, r: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (r - self.min) / (self.max - self.min)
        }
    }
}

/// Mean reward after min-max scaling over the whole run; 0.5 with a warning if the rewards are constant.
pub fn minmax_scaled_reward(rewards: &[f64]) -> f64 {
    let scale = RewardScale::fit(rewards);
    if rewards.is_empty() || scale.is_degenerate() {
        warn!("reward run has no spread; scaled average reported as 0.5");
        return 0.5;
    }
    rewards.iter().map(|r| scale.apply(*r)).sum::<f64>() / rewards.len() as f64
}

/// Headline metrics; a field stays `None` until the stage producing it has run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: Option<f64>,
    pub f1_at_10: Option<f64>,
    pub f1_at_20: Option<f64>,
    pub convergence_ratio: Option<f64>,
    pub scaled_avg_reward: Option<f64>,
}

pub fn write_metrics<W: Write>(mut out: W, metrics: &Metrics) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, metrics).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(out).map_err(|e| Error::io("<metrics>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(predicted: f64, actual: f64) -> PredictionPair {
        PredictionPair { predicted, actual }
    }

    #[test]
    fn perfect_predictor() {
        let pairs: Vec<_> = [10.0, 20.0, 5.0].iter().map(|v| pair(*v, *v)).collect();
        let c = tolerance_prf(&pairs, 0.1).unwrap();
        assert_eq!((c.auc, c.f1), (1.0, 1.0));
        assert!(c.points.iter().all(|p| p.precision == 1.0 && p.recall == 1.0));
    }

    #[test]
    fn everything_off_by_100_percent() {
        let pairs: Vec<_> = [10.0, 20.0, 5.0].iter().map(|v| pair(2.0 * v, *v)).collect();
        assert_eq!(tolerance_prf(&pairs, 0.1).unwrap().f1, 0.0);
    }

    #[test]
    fn hand_enumerated_sweep() {
        // scores: −0.05, −0.3, −0.1, −1.0 ; labels at band 0.2: T, F, T, F (zero truth, nonzero pred)
        let pairs = [pair(105.0, 100.0), pair(13.0, 10.0), pair(45.0, 50.0), pair(1.0, 0.0)];
        let c = tolerance_prf(&pairs, 0.2).unwrap();
        let got: Vec<(f64, f64, f64)> = c.points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect();
        let want = [
            (-0.05, 1.0, 0.5),
            (-0.1, 1.0, 1.0),
            (-0.3, 2.0 / 3.0, 1.0),
            (-1.0, 0.5, 1.0),
        ];
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12 && (g.2 - w.2).abs() < 1e-12, "{g:?} vs {w:?}");
        }
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.f1, 1.0);
        assert!(tolerance_prf(&[], 0.1).is_err());
    }

    #[test]
    fn convergence_examples() {
        let a = [5.0, 4.0, 3.0, 2.0];
        assert_eq!(convergence_ratio(&a, &a, 3.0).unwrap().ratio, 1.0);

        let mut fast = vec![10.0; 9];
        fast.push(1.0);
        let mut slow = vec![10.0; 28];
        slow.push(1.0);
        assert!((convergence_ratio(&fast, &slow, 1.0).unwrap().ratio - 2.9).abs() < 1e-12);

        let never = vec![10.0; 40];
        let r = convergence_ratio(&fast, &never, 1.0).unwrap();
        assert!(r.lower_bound && r.ratio == 4.0);
        assert!(convergence_ratio(&a, &a, 6.0).is_err());
        assert!(convergence_ratio(&never, &a, 1.0).is_err());
    }

    #[test]
    fn scaled_reward_examples() {
        assert_eq!(minmax_scaled_reward(&[0.0, 1.0]), 0.5);
        assert_eq!(minmax_scaled_reward(&[2.0, 2.0, 2.0]), 0.5);
        assert_eq!(minmax_scaled_reward(&[0.0, 0.5, 1.0, 1.0]), 0.625);
    }

    proptest! {
        #[test]
        fn labels_are_scale_invariant(p in 0.0f64..1e4, t in 0.0f64..1e4, k in 1e-3f64..1e3, band in 0.01f64..0.99) {
            let a = tolerance_label(&pair(p, t), band);
            let b = tolerance_label(&pair(p * k, t * k), band);
            // exact boundary cases can flip under rounding of the products
            let margin = ((p - t).abs() - band * t).abs();
            prop_assume!(margin > 1e-9 * (1.0 + t));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn auc_invariant_under_monotone_score_transform(
            raw in prop::collection::vec((0.0f64..100.0, 1.0f64..100.0), 1..30),
        ) {
            // the AUC only depends on the ranking, checked via an exp transform of the sweep
            let pairs: Vec<_> = raw.iter().map(|(p, t)| pair(*p, *t)).collect();
            let c = tolerance_prf(&pairs, 0.1).unwrap();
            let labels: Vec<bool> = pairs.iter().map(|p| tolerance_label(p, 0.1)).collect();
            let transformed: Vec<f64> = pairs.iter().map(|p| tolerance_score(p).exp() * 3.0 + 1.0).collect();
            let mut ts = transformed.clone();
            ts.sort_by(|a, b| b.total_cmp(a));
            ts.dedup();
            let positives = labels.iter().filter(|l| **l).count();
            let mut area = 0.0;
            let (mut r0, mut p0) = (0.0, 1.0);
            for t in ts {
                let (tp, fp) = counts(&labels, &transformed, t);
                let (p, r) = (tp as f64 / (tp + fp) as f64, if positives > 0 { tp as f64 / positives as f64 } else { 0.0 });
                area += (r - r0) * (p + p0) / 2.0;
                r0 = r;
                p0 = p;
            }
            if positives == 0 { area = 0.0; }
            prop_assert!((area - c.auc).abs() < 1e-12);
        }

        #[test]
        fn curve_shape(raw in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30), band in 0.05f64..0.5) {
            let pairs: Vec<_> = raw.iter().map(|(p, t)| pair(*p, *t)).collect();
            let c = tolerance_prf(&pairs, band).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.auc) && (0.0..=1.0).contains(&c.f1));
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold > w[1].threshold);
                prop_assert!(w[0].recall <= w[1].recall);
            }
        }

        #[test]
        fn self_ratio_is_one(curve in prop::collection::vec(0.0f64..10.0, 2..40), pick in 0usize..40) {
            let target = curve[pick % curve.len()];
            prop_assume!(target < curve[0]);
            prop_assert_eq!(convergence_ratio(&curve, &curve, target).unwrap().ratio, 1.0);
        }

        #[test]
        fn scaled_reward_affine_invariant(r in prop::collection::vec(-10.0f64..10.0, 2..50), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let t: Vec<f64> = r.iter().map(|v| a * v + b).collect();
            prop_assert!((minmax_scaled_reward(&r) - minmax_scaled_reward(&t)).abs() < 1e-9);
        }
    }
}
