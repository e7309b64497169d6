use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::Serialize;

use super::records::{PopulationTable, RecordSet};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Counts of data-quality events raised while deriving features.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QualityCounters {
    /// Rows where `total − 2·fully` went negative and was clamped to 0.
    pub clamped_partial: usize,
}

/// People with exactly one dose: `total_vaccinations − 2·people_fully_vaccinated`,
/// clamped at 0. Single-dose vaccines push the raw value negative in real data.
pub fn derive_partial_vaccinated(
    total_vaccinations: f64,
    people_fully_vaccinated: f64,
    counters: &mut QualityCounters,
) -> f64 {
    let raw = total_vaccinations - 2.0 * people_fully_vaccinated;
    if raw < 0.0 {
        counters.clamped_partial += 1;
        0.0
    } else {
        raw
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson's r between two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("zero-variance series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    #[serde(serialize_with = "serialize_matrix")]
    pub values: Matrix,
}

fn serialize_matrix<S: serde::Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.rows()))?;
    for r in 0..m.rows() {
        seq.serialize_element(m.row(r))?;
    }
    seq.end()
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values.get(i, j))
    }
}

/// Symmetric matrix of pairwise Pearson coefficients.
pub fn pearson_correlation_matrix(
    names: &[&str],
    series: &[&[f64]],
) -> Result<CorrelationMatrix> {
    if names.len() != series.len() {
        return Err(Error::shape(names.len(), series.len()));
    }
    if series.len() < 2 {
        return Err(Error::invalid("need at least 2 series"));
    }
    let n = series[0].len();
    for (name, s) in names.iter().zip(series) {
        if s.len() != n {
            return Err(Error::invalid(format!(
                "series `{name}` has {} points, expected {n}",
                s.len()
            )));
        }
        if s.len() < 2 {
            return Err(Error::invalid(format!("series `{name}` has fewer than 2 points")));
        }
        let m = mean(s);
        if s.iter().all(|v| *v == m) {
            return Err(Error::invalid(format!("series `{name}` has zero variance")));
        }
    }
    let k = series.len();
    let mut values = Matrix::zeros(k, k);
    for i in 0..k {
        values.set(i, i, 1.0);
        for j in i + 1..k {
            let r = pearson(series[i], series[j])?;
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix {
        names: names.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// Correlation of every numeric column with `target`, pooled over all states
/// (filled records expected), sorted from most to least positive. Columns with no
/// variance are left out.
pub fn attribute_target_correlations(records: &RecordSet, target: &str) -> Vec<(String, f64)> {
    let columns = super::records::numeric_columns(records);
    let pooled = |col: &str| -> Vec<f64> {
        records
            .values()
            .flat_map(|rows| rows.iter().map(|r| r.column(col).unwrap_or(0.0)))
            .collect()
    };
    let y = pooled(target);
    let mut out: Vec<(String, f64)> = columns
        .iter()
        .filter(|c| c.as_str() != target)
        .filter_map(|c| pearson(&pooled(c), &y).ok().map(|r| (c.clone(), r)))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!(
                "split fractions must be in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Chronological split marks for a series of length `n`.
    pub fn marks(&self, n: usize) -> SplitMarks {
        let train_end = (n as f64 * self.train).round() as usize;
        let val_end = (n as f64 * (self.train + self.validation)).round() as usize;
        SplitMarks {
            train_end: train_end.min(n),
            val_end: val_end.clamp(train_end.min(n), n),
        }
    }
}

/// `[0, train_end)` train, `[train_end, val_end)` validation, `[val_end, n)` test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitMarks {
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Train,
    Validation,
    Test,
}

impl Segment {
    pub fn tag(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Validation => "val",
            Segment::Test => "test",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Segment::Train),
            "val" => Some(Segment::Validation),
            "test" => Some(Segment::Test),
            _ => None,
        }
    }
}

impl SplitMarks {
    pub fn segment(&self, t: usize) -> Segment {
        if t < self.train_end {
            Segment::Train
        } else if t < self.val_end {
            Segment::Validation
        } else {
            Segment::Test
        }
    }
}

pub const NUM_FEATURES: usize = 3;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "total_population",
    "people_partially_vaccinated",
    "people_fully_vaccinated",
];

/// Per-feature min-max scaling fitted on the train segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureNorm {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl FeatureNorm {
    pub fn fit(rows: &[[f64; NUM_FEATURES]]) -> Self {
        let mut min = [f64::INFINITY; NUM_FEATURES];
        let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
        for r in rows {
            for k in 0..NUM_FEATURES {
                min[k] = min[k].min(r[k]);
                max[k] = max[k].max(r[k]);
            }
        }
        FeatureNorm { min, max }
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        self.max[k] == self.min[k]
    }

    /// Degenerate (constant) features map to 0.
    pub fn normalize(&self, row: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            if !self.is_degenerate(k) {
                out[k] = (row[k] - self.min[k]) / (self.max[k] - self.min[k]);
            }
        }
        out
    }

    pub fn denormalize(&self, row: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            out[k] = if self.is_degenerate(k) {
                self.min[k]
            } else {
                row[k] * (self.max[k] - self.min[k]) + self.min[k]
            };
        }
        out
    }
}

/// Model-ready series for one state.
///
/// `features` are normalized with `norm` (fitted on the train segment only, so
/// validation/test values can leave `[0, 1]` when a cumulative series keeps growing).
/// `targets` stay in doses; training divides them by `population`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub state: String,
    pub population: f64,
    pub features: Vec<[f64; NUM_FEATURES]>,
    pub targets: Vec<f64>,
    pub norm: FeatureNorm,
    pub split: SplitMarks,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn scaled_target(&self, t: usize) -> f64 {
        self.targets[t] / self.population
    }
}

pub const MIN_SERIES_LEN: usize = 10;

#[derive(Debug, Clone, Default, Serialize)]
pub struct FeatureReport {
    pub quality: BTreeMap<String, QualityCounters>,
    pub skipped_states: Vec<String>,
    /// Pearson matrix of the three raw inputs pooled over all states; `None`
    /// when an input has no variance across the pooled data.
    pub input_correlation: Option<CorrelationMatrix>,
}

impl FeatureReport {
    pub fn total_clamped(&self) -> usize {
        self.quality.values().map(|q| q.clamped_partial).sum()
    }
}

/// Assembles `[population, partially vaccinated, fully vaccinated]` per state-day,
/// splits chronologically and normalizes on the train segment. Expects filled records.
pub fn build_feature_sequences(
    records: &RecordSet,
    populations: &PopulationTable,
    split: SplitFractions,
) -> Result<(Vec<FeatureSequence>, FeatureReport)> {
    split.validate()?;
    let mut report = FeatureReport::default();
    let mut sequences = Vec::new();
    let mut pooled: [Vec<f64>; NUM_FEATURES] = Default::default();

    for (state, rows) in records {
        let population = populations
            .get(state)
            .ok_or_else(|| Error::UnknownState(format!("{state} (not in population table)")))?;
        if rows.len() < MIN_SERIES_LEN {
            log::warn!(
                "{state}: only {} points (< {MIN_SERIES_LEN}); skipped",
                rows.len()
            );
            report.skipped_states.push(state.clone());
            continue;
        }
        let mut counters = QualityCounters::default();
        let mut raw = Vec::with_capacity(rows.len());
        let mut targets = Vec::with_capacity(rows.len());
        for r in rows {
            let total = r.total_vaccinations.ok_or_else(|| missing(state, "total_vaccinations"))?;
            let fully = r
                .people_fully_vaccinated
                .ok_or_else(|| missing(state, "people_fully_vaccinated"))?;
            let partial = derive_partial_vaccinated(total, fully, &mut counters);
            raw.push([population, partial, fully]);
            targets.push(r.daily_vaccinations.ok_or_else(|| missing(state, "daily_vaccinations"))?);
        }
        if counters.clamped_partial > 0 {
            log::info!(
                "{state}: {} rows clamped deriving partially vaccinated",
                counters.clamped_partial
            );
        }
        for row in &raw {
            for k in 0..NUM_FEATURES {
                pooled[k].push(row[k]);
            }
        }
        let marks = split.marks(raw.len());
        let norm = FeatureNorm::fit(&raw[..marks.train_end.max(1)]);
        let features = raw.iter().map(|r| norm.normalize(r)).collect();
        report.quality.insert(state.clone(), counters);
        sequences.push(FeatureSequence {
            state: state.clone(),
            population,
            features,
            targets,
            norm,
            split: marks,
        });
    }

    let refs: Vec<&[f64]> = pooled.iter().map(|v| v.as_slice()).collect();
    report.input_correlation = match pearson_correlation_matrix(&FEATURE_NAMES, &refs) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("input correlation screening unavailable: {e}");
            None
        }
    };
    Ok((sequences, report))
}

fn missing(state: &str, col: &str) -> Error {
    Error::invalid(format!("{state}: `{col}` missing after fill"))
}

pub const FEATURES_HEADER: &str = "state,t,x1,x2,x3,y,split";

/// Writes the per-state feature file: comment lines carrying each state's
/// population and normalization, then one CSV row per state-day.
pub fn write_feature_file<W: Write>(mut out: W, sequences: &[FeatureSequence]) -> Result<()> {
    let io = |e| Error::io("<feature file>", e);
    for s in sequences {
        let join = |v: &[f64; NUM_FEATURES]| {
            v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
        };
        writeln!(
            out,
            "# state={} population={:e} min={} max={}",
            s.state,
            s.population,
            join(&s.norm.min),
            join(&s.norm.max)
        )
        .map_err(io)?;
    }
    writeln!(out, "{FEATURES_HEADER}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    for s in sequences {
        for t in 0..s.len() {
            let x = &s.features[t];
            w.write_record([
                s.state.clone(),
                t.to_string(),
                format!("{:e}", x[0]),
                format!("{:e}", x[1]),
                format!("{:e}", x[2]),
                s.targets[t].to_string(),
                s.split.segment(t).tag().to_string(),
            ])?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_feature_file<R: BufRead>(input: R) -> Result<Vec<FeatureSequence>> {
    let bad = |msg: String| Error::invalid(format!("feature file: {msg}"));
    let mut meta: Vec<(String, f64, FeatureNorm)> = Vec::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<feature file>", e))?;
        if let Some(rest) = line.strip_prefix("# ") {
            let mut population = None;
            let mut min = None;
            let mut max = None;
            // state names may contain spaces; split on the known keys instead
            let p_at = rest.find(" population=").ok_or_else(|| bad(format!("bad meta `{line}`")))?;
            let state = rest[..p_at].strip_prefix("state=").map(str::to_string);
            for kv in rest[p_at + 1..].split_whitespace() {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad meta `{kv}`")))?;
                match k {
                    "population" => population = v.parse::<f64>().ok(),
                    "min" => min = parse_triplet(v),
                    "max" => max = parse_triplet(v),
                    _ => {}
                }
            }
            match (state, population, min, max) {
                (Some(s), Some(p), Some(min), Some(max)) => meta.push((s, p, FeatureNorm { min, max })),
                _ => return Err(bad(format!("incomplete meta `{line}`"))),
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut by_state: BTreeMap<String, Vec<([f64; NUM_FEATURES], f64, Segment)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("bad number in row {row:?}")))
        };
        let seg = row
            .get(6)
            .and_then(Segment::from_tag)
            .ok_or_else(|| bad(format!("bad split tag in row {row:?}")))?;
        by_state
            .entry(row[0].to_string())
            .or_default()
            .push(([num(2)?, num(3)?, num(4)?], num(5)?, seg));
    }
    let mut out = Vec::new();
    for (state, population, norm) in meta {
        let rows = by_state
            .remove(&state)
            .ok_or_else(|| bad(format!("no rows for state `{state}`")))?;
        let train_end = rows.iter().filter(|r| r.2 == Segment::Train).count();
        let val_end = train_end + rows.iter().filter(|r| r.2 == Segment::Validation).count();
        out.push(FeatureSequence {
            state,
            population,
            features: rows.iter().map(|r| r.0).collect(),
            targets: rows.iter().map(|r| r.1).collect(),
            norm,
            split: SplitMarks { train_end, val_end },
        });
    }
    if let Some(extra) = by_state.keys().next() {
        return Err(bad(format!("rows for `{extra}` without a meta line")));
    }
    Ok(out)
}

fn parse_triplet(v: &str) -> Option<[f64; NUM_FEATURES]> {
    let parts: Vec<f64> = v.split(';').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derive_examples() {
        let mut q = QualityCounters::default();
        assert_eq!(derive_partial_vaccinated(100.0, 30.0, &mut q), 40.0);
        assert_eq!(derive_partial_vaccinated(0.0, 0.0, &mut q), 0.0);
        assert_eq!(q.clamped_partial, 0);
        assert_eq!(derive_partial_vaccinated(10.0, 6.0, &mut q), 0.0);
        assert_eq!(q.clamped_partial, 1);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12);
    }

    #[test]
    fn correlation_matrix_errors_name_the_series() {
        let a = [1.0, 2.0, 3.0];
        let flat = [2.0, 2.0, 2.0];
        let err = pearson_correlation_matrix(&["a", "flat"], &[&a, &flat]).unwrap_err();
        assert!(err.to_string().contains("flat"));
        let short = [1.0, 2.0];
        assert!(pearson_correlation_matrix(&["a", "short"], &[&a, &short]).is_err());
    }

    #[test]
    fn split_marks_for_240_points() {
        let m = SplitFractions::default().marks(240);
        assert_eq!((m.train_end, m.val_end), (192, 216));
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let rows = vec![[5.0, 1.0, 2.0], [5.0, 3.0, 4.0]];
        let norm = FeatureNorm::fit(&rows);
        assert!(norm.is_degenerate(0));
        assert_eq!(norm.normalize(&rows[1])[0], 0.0);
        assert_eq!(norm.normalize(&rows[1])[1], 1.0);
    }

    proptest! {
        #[test]
        fn derive_is_linear_in_total(a in 0u32..1_000_000, b in 0u32..300_000, c in 0u32..1_000_000) {
            let (a, b, c) = (a as f64, b as f64, c as f64);
            prop_assume!(a - 2.0 * b >= 0.0);
            let mut q = QualityCounters::default();
            let lhs = derive_partial_vaccinated(a + c, b, &mut q) - derive_partial_vaccinated(a, b, &mut q);
            prop_assert_eq!(lhs, c);
            prop_assert_eq!(q.clamped_partial, 0);
        }

        #[test]
        fn normalization_round_trips(rows in proptest::collection::vec(
            proptest::array::uniform3(-1e6f64..1e6), 2..20)) {
            let norm = FeatureNorm::fit(&rows);
            for r in &rows {
                let back = norm.denormalize(&norm.normalize(r));
                for k in 0..NUM_FEATURES {
                    if !norm.is_degenerate(k) {
                        let scale = r[k].abs().max(1.0);
                        prop_assert!((back[k] - r[k]).abs() <= 1e-9 * scale);
                    }
                    let n = norm.normalize(r)[k];
                    prop_assert!((0.0..=1.0).contains(&n));
                }
            }
        }

        #[test]
        fn correlation_invariant_to_positive_affine(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..30),
            noise_seed in any::<u64>(),
            scale in 0.01f64..100.0,
            shift in -1e3f64..1e3,
        ) {
            let mut rng = crate::numeric::Rng::new(noise_seed);
            let ys: Vec<f64> = xs.iter().map(|x| x + rng.uniform_range(-50.0, 50.0)).collect();
            let r = match pearson(&xs, &ys) { Ok(r) => r, Err(_) => return Ok(()) };
            let scaled: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let r2 = pearson(&scaled, &ys).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
        }

        #[test]
        fn correlation_matrix_shape(seed in any::<u64>(), n in 3usize..40) {
            let mut rng = crate::numeric::Rng::new(seed);
            let s: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
            let refs: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
            let m = pearson_correlation_matrix(&["a", "b", "c"], &refs).unwrap();
            for i in 0..3 {
                prop_assert!((m.values.get(i, i) - 1.0).abs() < 1e-12);
                for j in 0..3 {
                    prop_assert_eq!(m.values.get(i, j), m.values.get(j, i));
                    prop_assert!((-1.0..=1.0).contains(&m.values.get(i, j)));
                }
            }
        }

        #[test]
        fn split_marks_follow_fractions(n in 10usize..2000) {
            let m = SplitFractions::default().marks(n);
            prop_assert!((m.train_end as f64 - 0.8 * n as f64).abs() <= 1.0);
            prop_assert!(((m.val_end - m.train_end) as f64 - 0.1 * n as f64).abs() <= 1.0);
            prop_assert!(((n - m.val_end) as f64 - 0.1 * n as f64).abs() <= 1.0);
            prop_assert_eq!(m, SplitFractions::default().marks(n));
        }
    }
}
