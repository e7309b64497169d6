//! Deterministic synthetic vaccination data shaped like the public state
//! vaccination files: a bell-shaped daily dose curve per state, first and
//! second doses with a lag, a share of single-dose shots, and scattered
//! empty cells.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use crate::cost::StateMeta;
use crate::data::{PopulationTable, RecordSet, VaccinationRecord};
use crate::numeric::Rng;

const STATE_NAMES: [&str; 10] = [
    "Alabama", "Colorado", "Georgia", "Iowa", "Kansas", "Maine", "Nevada", "Ohio", "Oregon", "Texas",
];

/// Days between first and second dose.
pub const SECOND_DOSE_LAG: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub states: usize,
    pub days: usize,
    pub seed: u64,
    /// Probability that any one count cell is left empty.
    pub missing_rate: f64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            states: 5,
            days: 120,
            seed: 7,
            missing_rate: 0.02,
            start: NaiveDate::from_ymd_opt(2021, 1, 12).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: RecordSet,
    pub populations: PopulationTable,
    pub metas: Vec<StateMeta>,
}

pub fn state_name(k: usize) -> String {
    STATE_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("State{k:02}"))
}

pub fn synthesize(cfg: &SynthConfig) -> SynthData {
    let mut rng = Rng::new(cfg.seed);
    let mut records = RecordSet::new();
    let mut populations = BTreeMap::new();
    let mut metas = Vec::with_capacity(cfg.states);
    let days = cfg.days as f64;

    for k in 0..cfg.states {
        let name = state_name(k);
        let population = (rng.uniform_range(1.0e6, 1.5e7)).round();
        let peak = rng.uniform_range(0.35, 0.75) * days;
        let width = rng.uniform_range(0.15, 0.3) * days;
        let amplitude = rng.uniform_range(0.004, 0.008) * population;
        let single_share = rng.uniform_range(0.03, 0.1);
        let ship_ratio = rng.uniform_range(1.15, 1.35);

        let doses: Vec<f64> = (0..cfg.days)
            .map(|t| {
                let z = (t as f64 - peak) / width;
                let level = amplitude * (-0.5 * z * z).exp() + 5e-4 * population;
                (level * rng.lognormal(0.08)).round()
            })
            .collect();

        let mut first = vec![0.0; cfg.days];
        let mut second = vec![0.0; cfg.days];
        let mut single = vec![0.0; cfg.days];
        for t in 0..cfg.days {
            single[t] = (doses[t] * single_share).round();
            let two_dose = doses[t] - single[t];
            let due: f64 = if t >= SECOND_DOSE_LAG { 0.9 * first[t - SECOND_DOSE_LAG] } else { 0.0 };
            second[t] = due.min(two_dose).round();
            first[t] = two_dose - second[t];
        }

        let mut rows = Vec::with_capacity(cfg.days);
        let (mut total, mut at_least_one, mut fully, mut distributed) = (0.0, 0.0, 0.0, 0.0f64);
        for t in 0..cfg.days {
            total += doses[t];
            at_least_one += first[t] + single[t];
            fully += second[t] + single[t];
            distributed = distributed.max((total * ship_ratio * rng.uniform_range(0.98, 1.02)).round());
            let lo = t.saturating_sub(6);
            let daily = (doses[lo..=t].iter().sum::<f64>() / (t - lo + 1) as f64).round();

            let mut cell = |v: f64| (rng.uniform() >= cfg.missing_rate).then_some(v);
            let mut rates = BTreeMap::new();
            rates.insert("total_vaccinations_per_hundred".to_string(), cell(round2(100.0 * total / population)));
            rates.insert("people_vaccinated_per_hundred".to_string(), cell(round2(100.0 * at_least_one / population)));
            rates.insert("people_fully_vaccinated_per_hundred".to_string(), cell(round2(100.0 * fully / population)));
            rates.insert("distributed_per_hundred".to_string(), cell(round2(100.0 * distributed / population)));
            rates.insert("daily_vaccinations_per_million".to_string(), cell((1e6 * daily / population).round()));
            rates.insert("share_doses_used".to_string(), cell(round3(total / distributed)));
            rows.push(VaccinationRecord {
                date: cfg.start + Duration::days(t as i64),
                state: name.clone(),
                // the first day is always complete so every column has an anchor
                total_vaccinations: if t == 0 { Some(total) } else { cell(total) },
                total_distributed: if t == 0 { Some(distributed) } else { cell(distributed) },
                people_vaccinated: if t == 0 { Some(at_least_one) } else { cell(at_least_one) },
                people_fully_vaccinated: if t == 0 { Some(fully) } else { cell(fully) },
                daily_vaccinations: if t == 0 { Some(daily) } else { cell(daily) },
                rates,
            });
        }
        records.insert(name.clone(), rows);
        populations.insert(name.clone(), population);
        metas.push(StateMeta {
            state: name,
            distance_km: rng.uniform_range(50.0, 2500.0).round(),
            financial_index: round3(rng.uniform_range(0.3, 0.9)),
            unemployment_ratio: round3(rng.uniform_range(0.03, 0.1)),
            covid_budget: (rng.uniform_range(1e8, 1e9)).round(),
        });
    }
    SynthData {
        records,
        populations: PopulationTable(populations),
        metas,
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}
