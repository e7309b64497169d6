//! Simulated cold-chain cost components per state and their aggregation
//! into one scalar cost per state.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Function {
    Procurement,
    Storage,
    Transportation,
    Management,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Labor,
    Fuel,
    Space,
    Equipment,
    Vehicle,
}

impl Function {
    pub const ALL: [Function; 4] = [
        Function::Procurement,
        Function::Storage,
        Function::Transportation,
        Function::Management,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Procurement => "procurement",
            Function::Storage => "storage",
            Function::Transportation => "transportation",
            Function::Management => "management",
        }
    }
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Labor,
        Resource::Fuel,
        Resource::Space,
        Resource::Equipment,
        Resource::Vehicle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Labor => "labor",
            Resource::Fuel => "fuel",
            Resource::Space => "space",
            Resource::Equipment => "equipment",
            Resource::Vehicle => "vehicle",
        }
    }
}

const NF: usize = 4;
const NR: usize = 5;

/// Which (function, resource) pairs carry a cost. Management's operational
/// cost is booked under equipment.
pub const MASK: [[bool; NR]; NF] = [
    // labor  fuel   space  equip  vehicle
    [true, false, false, false, false],
    [true, true, true, true, false],
    [true, true, false, false, true],
    [true, false, false, true, false],
];

pub fn is_unmasked(f: Function, r: Resource) -> bool {
    MASK[f as usize][r as usize]
}

/// Location of each component's cost distribution, in arbitrary cost units.
const BASE: [[f64; NR]; NF] = [
    [12.0, 0.0, 0.0, 0.0, 0.0],
    [10.0, 6.0, 8.0, 9.0, 0.0],
    [11.0, 7.0, 0.0, 0.0, 9.0],
    [10.0, 0.0, 0.0, 5.0, 0.0],
];

pub const COST_SIGMA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMeta {
    pub state: String,
    pub distance_km: f64,
    pub financial_index: f64,
    pub unemployment_ratio: f64,
    /// Carried through from the input file; no generator uses it.
    pub covid_budget: f64,
}

impl StateMeta {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::invalid(format!("state {}: {what} out of range: {v}", self.state)))
        };
        if !(self.distance_km >= 0.0) || !self.distance_km.is_finite() {
            return bad("distance_km", self.distance_km);
        }
        if !(0.0..=1.0).contains(&self.financial_index) {
            return bad("financial_index", self.financial_index);
        }
        if !(0.0..=1.0).contains(&self.unemployment_ratio) {
            return bad("unemployment_ratio", self.unemployment_ratio);
        }
        if !self.covid_budget.is_finite() {
            return bad("covid_budget", self.covid_budget);
        }
        Ok(())
    }
}

pub fn read_state_meta(path: &Path) -> Result<Vec<StateMeta>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_state_meta_from(file, path)
}

pub fn read_state_meta_from<R: Read>(input: R, origin: &Path) -> Result<Vec<StateMeta>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    for col in ["state", "distance_km", "financial_index", "unemployment_ratio", "covid_budget"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                path: origin.to_path_buf(),
                column: col.into(),
            });
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<StateMeta>() {
        let meta = row?;
        meta.validate()?;
        out.push(meta);
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    Ok(out)
}

pub fn write_state_meta<W: Write>(out: W, metas: &[StateMeta]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metas {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io("<state meta>", e))
}

/// Weights and costs for one state, indexed `[function][resource]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCosts {
    pub weights: [[f64; NR]; NF],
    pub costs: [[f64; NR]; NF],
}

impl StateCosts {
    pub fn empty() -> Self {
        StateCosts {
            weights: [[0.0; NR]; NF],
            costs: [[0.0; NR]; NF],
        }
    }

    pub fn weight(&self, f: Function, r: Resource) -> f64 {
        self.weights[f as usize][r as usize]
    }

    pub fn cost(&self, f: Function, r: Resource) -> f64 {
        self.costs[f as usize][r as usize]
    }

    pub fn set(&mut self, f: Function, r: Resource, weight: f64, cost: f64) {
        self.weights[f as usize][r as usize] = weight;
        self.costs[f as usize][r as usize] = cost;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// Per function, the product of `W·C` over its nonzero-weight components.
    #[default]
    Product,
    /// Per function, `Σ W·C`.
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub states: BTreeMap<String, StateCosts>,
}

impl CostMatrix {
    pub fn get(&self, state: &str) -> Result<&StateCosts> {
        self.states
            .get(state)
            .ok_or_else(|| Error::UnknownState(state.to_string()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "function", "resource", "weight", "cost"])?;
        for (state, sc) in &self.states {
            for f in Function::ALL {
                for r in Resource::ALL {
                    w.write_record([
                        state.as_str(),
                        f.name(),
                        r.name(),
                        &format!("{:e}", sc.weight(f, r)),
                        &format!("{:e}", sc.cost(f, r)),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<cost matrix>", e))
    }

    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            state: String,
            function: Function,
            resource: Resource,
            weight: f64,
            cost: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut states = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            if !row.weight.is_finite() || !row.cost.is_finite() || row.weight < 0.0 || row.cost < 0.0 {
                return Err(Error::invalid(format!(
                    "{}: bad entry for {} {} in {}",
                    row.state,
                    row.function.name(),
                    row.resource.name(),
                    origin.display()
                )));
            }
            states
                .entry(row.state)
                .or_insert_with(StateCosts::empty)
                .set(row.function, row.resource, row.weight, row.cost);
        }
        if states.is_empty() {
            return Err(Error::EmptyFile(origin.to_path_buf()));
        }
        Ok(CostMatrix { states })
    }
}

/// Draws weights and costs for every state from its own stream `seed ^ index`.
pub fn simulate_cost_matrix(metas: &[StateMeta], seed: u64) -> Result<CostMatrix> {
    let mut states = BTreeMap::new();
    for (index, meta) in metas.iter().enumerate() {
        meta.validate()?;
        states.insert(meta.state.clone(), simulate_state(meta, seed ^ index as u64));
    }
    Ok(CostMatrix { states })
}

/// Like [`simulate_cost_matrix`] but requires meta for every listed state.
pub fn simulate_for_states(metas: &[StateMeta], states: &[String], seed: u64) -> Result<CostMatrix> {
    let mut chosen = Vec::with_capacity(states.len());
    for s in states {
        let meta = metas
            .iter()
            .find(|m| &m.state == s)
            .ok_or_else(|| Error::invalid(format!("no state meta for {s}")))?;
        chosen.push(meta.clone());
    }
    simulate_cost_matrix(&chosen, seed)
}

fn simulate_state(meta: &StateMeta, seed: u64) -> StateCosts {
    let mut rng = Rng::new(seed);
    let mut sc = StateCosts::empty();
    for f in Function::ALL {
        for r in Resource::ALL {
            if !is_unmasked(f, r) {
                continue;
            }
            let mut loc = BASE[f as usize][r as usize];
            if f == Function::Transportation {
                loc *= 1.0 + meta.distance_km / 1000.0;
            }
            if r == Resource::Labor {
                loc *= (1.0 + meta.unemployment_ratio) * (2.0 - meta.financial_index);
            }
            let weight = rng.uniform_open_closed();
            let cost = loc * rng.lognormal(COST_SIGMA);
            sc.set(f, r, weight, cost);
        }
    }
    sc
}

pub fn aggregate_cost(matrix: &CostMatrix, state: &str, mode: AggregateMode) -> Result<f64> {
    aggregate_state(matrix.get(state)?, mode)
}

pub fn aggregate_state(sc: &StateCosts, mode: AggregateMode) -> Result<f64> {
    let total_weight: f64 = sc.weights.iter().flatten().sum();
    if !(total_weight > 0.0) {
        return Err(Error::invalid("every cost weight is zero"));
    }
    let mut numer = 0.0;
    for (ws, cs) in sc.weights.iter().zip(&sc.costs) {
        let terms = ws.iter().zip(cs).filter(|(w, _)| **w != 0.0).map(|(w, c)| w * c);
        numer += match mode {
            AggregateMode::Product => {
                let mut any = false;
                let p = terms.fold(1.0, |acc, v| {
                    any = true;
                    acc * v
                });
                if any {
                    p
                } else {
                    0.0
                }
            }
            AggregateMode::WeightedSum => terms.sum(),
        };
    }
    Ok(numer / total_weight)
}

/// z-score, then min-max onto `[0, 1]`; order follows the input.
pub fn normalize_costs(costs: &[f64]) -> Result<Vec<f64>> {
    if costs.len() < 2 {
        return Err(Error::invalid(format!(
            "cost normalization needs at least 2 states, got {}",
            costs.len()
        )));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("state cost".into()));
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let std = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        warn!("all state costs equal; normalized costs set to 0.5");
        return Ok(vec![0.5; costs.len()]);
    }
    let z: Vec<f64> = costs.iter().map(|c| (c - mean) / std).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        warn!("all state costs equal; normalized costs set to 0.5");
        return Ok(vec![0.5; costs.len()]);
    }
    Ok(z.iter().map(|v| (v - lo) / (hi - lo)).collect())
}
