//! Vaccination/census CSV ingest and feature engineering.

mod features;
mod records;

pub use features::*;
pub use records::*;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Everything `ingest` reports besides the sequences themselves.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub states: Vec<String>,
    pub fill: FillReport,
    pub monotonic_violations: usize,
    pub features: FeatureReport,
    /// Raw attributes ranked by Pearson correlation with `daily_vaccinations`.
    pub attribute_correlations: Vec<(String, f64)>,
}

/// Parse → restrict to `states` (empty = all) → fill → features.
pub fn ingest(
    vaccination_csv: &Path,
    population_csv: &Path,
    states: &[String],
    split: SplitFractions,
) -> Result<(Vec<FeatureSequence>, IngestReport)> {
    let mut records = parse_vaccination_csv(vaccination_csv)?;
    if !states.is_empty() {
        for s in states {
            if !records.contains_key(s) {
                return Err(crate::Error::UnknownState(s.clone()));
            }
        }
        records.retain(|k, _| states.contains(k));
    }
    let populations = parse_population_csv(population_csv)?;
    let monotonic_violations = monotonic_violations(&records);
    let fill = fill_missing(&mut records);
    let attribute_correlations = attribute_target_correlations(&records, "daily_vaccinations");
    let (sequences, features) = build_feature_sequences(&records, &populations, split)?;
    let report = IngestReport {
        states: sequences.iter().map(|s| s.state.clone()).collect(),
        fill,
        monotonic_violations,
        features,
        attribute_correlations,
    };
    Ok((sequences, report))
}
