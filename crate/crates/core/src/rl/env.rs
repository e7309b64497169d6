use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Allocation levels as fractions of the day's predicted demand.
pub const LEVELS: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25];
pub const NUM_ACTIONS: usize = LEVELS.len();
pub const STATE_DIM: usize = 4;

/// `[normalized cost, normalized demand, t/T, fraction of budget spent]`.
pub type RlState = [f64; STATE_DIM];

pub const OVER_ALLOCATION_PENALTY: f64 = 0.5;
pub const COST_PENALTY: f64 = 1.0;

/// `min(a,d)/d − 0.5·max(0,a−d)/d − max(0,c−θ)/θ`; with `d = 0` only the cost term remains.
pub fn reward_fn(allocation: f64, demand: f64, cost: f64, threshold: f64) -> f64 {
    let mut r = 0.0;
    if demand > 0.0 {
        r += allocation.min(demand) / demand;
        r -= OVER_ALLOCATION_PENALTY * (allocation - demand).max(0.0) / demand;
    }
    r - COST_PENALTY * (cost - threshold).max(0.0) / threshold
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: RlState,
    pub reward: f64,
    pub terminal: bool,
    pub demand: f64,
    pub allocation: f64,
    pub cost: f64,
}

/// Episodic environment driven by discrete allocation levels.
pub trait Environment {
    /// Steps per episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self) -> RlState;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

fn check_action(action: usize) -> Result<()> {
    if action >= NUM_ACTIONS {
        return Err(Error::invalid(format!("action index {action} outside 0..{NUM_ACTIONS}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Lower bound on the normalized cost used to price doses.
    pub cost_floor: f64,
    /// The per-day threshold never drops below this fraction of the base threshold.
    pub threshold_floor: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            cost_floor: 0.01,
            threshold_floor: 0.25,
        }
    }
}

/// One state's allocation problem over its demand series.
///
/// Doses are priced so that allocating the mean demand costs the state's
/// normalized cost. The base threshold is the median daily cost of meeting
/// demand, the episode budget is `T` times that, and each day's threshold is
/// the remaining budget spread over the remaining days.
#[derive(Debug, Clone)]
pub struct AllocationEnv {
    demand: Vec<f64>,
    max_demand: f64,
    cost_norm: f64,
    unit_cost: f64,
    base_threshold: f64,
    budget: f64,
    threshold_floor: f64,
    t: usize,
    spent: f64,
}

impl AllocationEnv {
    /// `horizon` is clamped to the series length.
    pub fn new(demand: &[f64], cost_norm: f64, horizon: usize, config: EnvConfig) -> Result<Self> {
        if demand.is_empty() || horizon == 0 {
            return Err(Error::invalid("allocation environment needs at least one day"));
        }
        if demand.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("demand must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&cost_norm) {
            return Err(Error::invalid(format!("normalized cost {cost_norm} outside [0, 1]")));
        }
        let horizon = if horizon > demand.len() {
            log::warn!("horizon {horizon} exceeds the {}-day series; clamped", demand.len());
            demand.len()
        } else {
            horizon
        };
        let demand = demand[..horizon].to_vec();
        let mean = demand.iter().sum::<f64>() / horizon as f64;
        let max_demand = demand.iter().copied().fold(0.0, f64::max);
        let priced = cost_norm.max(config.cost_floor);
        let unit_cost = if mean > 0.0 { priced / mean } else { priced };
        let mut daily: Vec<f64> = demand.iter().map(|d| unit_cost * d).collect();
        daily.sort_by(f64::total_cmp);
        let median = if horizon % 2 == 1 {
            daily[horizon / 2]
        } else {
            0.5 * (daily[horizon / 2 - 1] + daily[horizon / 2])
        };
        // a mostly-zero series or free doses still need a positive threshold
        let base_threshold = if median > 0.0 {
            median
        } else if priced > 0.0 {
            priced
        } else {
            1.0
        };
        Ok(AllocationEnv {
            demand,
            max_demand,
            cost_norm,
            unit_cost,
            base_threshold,
            budget: horizon as f64 * base_threshold,
            threshold_floor: config.threshold_floor,
            t: 0,
            spent: 0.0,
        })
    }

    pub fn unit_cost(&self) -> f64 {
        self.unit_cost
    }

    pub fn base_threshold(&self) -> f64 {
        self.base_threshold
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn threshold(&self) -> f64 {
        let remaining_days = (self.demand.len() - self.t) as f64;
        ((self.budget - self.spent) / remaining_days).max(self.threshold_floor * self.base_threshold)
    }

    fn observe(&self) -> RlState {
        let horizon = self.demand.len();
        let day = self.t.min(horizon - 1);
        let demand_norm = if self.max_demand > 0.0 {
            self.demand[day] / self.max_demand
        } else {
            0.0
        };
        [
            self.cost_norm,
            demand_norm,
            self.t as f64 / horizon as f64,
            (self.spent / self.budget).min(1.0),
        ]
    }
}

impl Environment for AllocationEnv {
    fn horizon(&self) -> usize {
        self.demand.len()
    }

    fn reset(&mut self) -> RlState {
        self.t = 0;
        self.spent = 0.0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_action(action)?;
        if self.t >= self.demand.len() {
            return Err(Error::invalid("step after the end of the episode"));
        }
        let demand = self.demand[self.t];
        let allocation = (LEVELS[action] * demand).round();
        let cost = self.unit_cost * allocation;
        let reward = reward_fn(allocation, demand, cost, self.threshold());
        self.spent += cost;
        self.t += 1;
        Ok(StepOutcome {
            next: self.observe(),
            reward,
            terminal: self.t == self.demand.len(),
            demand,
            allocation,
            cost,
        })
    }
}

/// A small discrete environment: each cell pairs a cost level with a demand
/// bin, and the next cell is drawn uniformly regardless of the action.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pub unit_costs: Vec<f64>,
    pub demands: Vec<f64>,
    pub threshold: f64,
    horizon: usize,
    rng: Rng,
    cell: usize,
    t: usize,
}

impl GridEnv {
    pub fn new(unit_costs: Vec<f64>, demands: Vec<f64>, threshold: f64, horizon: usize, seed: u64) -> Result<Self> {
        if unit_costs.is_empty() || demands.is_empty() || horizon == 0 {
            return Err(Error::invalid("grid environment needs cost levels, demand bins and a horizon"));
        }
        if !(threshold > 0.0) {
            return Err(Error::invalid("grid threshold must be positive"));
        }
        Ok(GridEnv {
            unit_costs,
            demands,
            threshold,
            horizon,
            rng: Rng::new(seed),
            cell: 0,
            t: 0,
        })
    }

    /// Five cost levels by ten demand bins with a minimum best-action margin of 0.05.
    pub fn standard(horizon: usize, seed: u64) -> Self {
        let demands = (1..=10).map(|b| 100.0 * b as f64).collect();
        let unit_costs = [0.05, 0.12, 0.2, 0.3, 0.45].iter().map(|u| u / 100.0).collect();
        GridEnv::new(unit_costs, demands, 1.0, horizon, seed).expect("valid standard grid")
    }

    pub fn num_cells(&self) -> usize {
        self.unit_costs.len() * self.demands.len()
    }

    fn split(&self, cell: usize) -> (usize, usize) {
        (cell / self.demands.len(), cell % self.demands.len())
    }

    pub fn reward(&self, cell: usize, action: usize) -> f64 {
        let (c, b) = self.split(cell);
        let demand = self.demands[b];
        let allocation = LEVELS[action] * demand;
        reward_fn(allocation, demand, self.unit_costs[c] * allocation, self.threshold)
    }

    pub fn observation(&self, cell: usize) -> RlState {
        let (c, b) = self.split(cell);
        let nc = self.unit_costs.len();
        let cost_norm = if nc > 1 { c as f64 / (nc - 1) as f64 } else { 0.0 };
        let max_d = self.demands.iter().copied().fold(0.0, f64::max);
        [cost_norm, self.demands[b] / max_d, 0.0, 0.0]
    }

    /// Index of the best immediate action per cell, lowest index on ties.
    pub fn myopic_policy(&self) -> Vec<usize> {
        (0..self.num_cells())
            .map(|cell| {
                let r: Vec<f64> = (0..NUM_ACTIONS).map(|a| self.reward(cell, a)).collect();
                super::argmax(&r)
            })
            .collect()
    }

    pub(crate) fn random_cell(&mut self) -> usize {
        self.rng.below(self.num_cells())
    }
}

impl Environment for GridEnv {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> RlState {
        self.t = 0;
        self.cell = self.random_cell();
        self.observation(self.cell)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_action(action)?;
        let (c, b) = self.split(self.cell);
        let demand = self.demands[b];
        let allocation = LEVELS[action] * demand;
        let cost = self.unit_costs[c] * allocation;
        let reward = reward_fn(allocation, demand, cost, self.threshold);
        self.cell = self.random_cell();
        self.t += 1;
        Ok(StepOutcome {
            next: self.observation(self.cell),
            reward,
            terminal: self.t >= self.horizon,
            demand,
            allocation,
            cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numeric::Rng;

    #[test]
    fn reward_examples() {
        assert_eq!(reward_fn(10.0, 10.0, 0.5, 1.0), 1.0);
        assert_eq!(reward_fn(0.0, 10.0, 0.0, 1.0), 0.0);
        assert!((reward_fn(12.5, 10.0, 1.5, 1.0) - 0.375).abs() < 1e-15);
        assert_eq!(reward_fn(5.0, 0.0, 2.0, 1.0), -1.0);
    }

    #[test]
    fn allocation_env_basics() {
        let demand = [10.0, 20.0, 30.0];
        let mut env = AllocationEnv::new(&demand, 0.0, 3, EnvConfig { cost_floor: 0.0, ..EnvConfig::default() }).unwrap();
        env.reset();
        let out = env.step(0).unwrap();
        assert_eq!((out.reward, out.terminal), (0.0, false));
        env.step(4).unwrap();
        assert!(env.step(4).unwrap().terminal);
        assert!(env.step(0).is_err());
        assert!(env.clone().step(6).is_err());
    }

    #[test]
    fn horizon_is_clamped() {
        let env = AllocationEnv::new(&[1.0, 2.0], 0.5, 10, EnvConfig::default()).unwrap();
        assert_eq!(env.horizon(), 2);
    }

    #[test]
    fn replayed_episode_is_identical() {
        let demand = [100.0, 140.0, 90.0];
        let run = || {
            let mut env = AllocationEnv::new(&demand, 0.4, 3, EnvConfig::default()).unwrap();
            let mut rng = Rng::new(8);
            let mut s = env.reset();
            let mut trace = Vec::new();
            for _ in 0..3 {
                let a = rng.below(NUM_ACTIONS);
                let out = env.step(a).unwrap();
                trace.push((s, a, out.reward, out.next, out.terminal));
                s = out.next;
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mean_demand_costs_normalized_cost() {
        let env = AllocationEnv::new(&[50.0, 100.0, 150.0], 0.6, 3, EnvConfig::default()).unwrap();
        assert!((env.unit_cost() * 100.0 - 0.6).abs() < 1e-12);
        assert!((env.base_threshold() - 0.6).abs() < 1e-12);
        assert!((env.budget() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn standard_grid_has_clear_margins() {
        let grid = GridEnv::standard(10, 0);
        for cell in 0..grid.num_cells() {
            let mut r: Vec<f64> = (0..NUM_ACTIONS).map(|a| grid.reward(cell, a)).collect();
            r.sort_by(|a, b| b.total_cmp(a));
            assert!(r[0] - r[1] >= 0.05 - 1e-12, "cell {cell}: {r:?}");
        }
        let policy = grid.myopic_policy();
        assert!(policy.iter().filter(|&&a| a != 4).count() >= 15);
    }

    proptest! {
        #[test]
        fn states_stay_in_unit_box(
            demand in prop::collection::vec(0.0f64..1e4, 1..30),
            cost in 0.0f64..=1.0,
            actions in prop::collection::vec(0usize..NUM_ACTIONS, 30),
        ) {
            let mut env = AllocationEnv::new(&demand, cost, demand.len(), EnvConfig::default()).unwrap();
            let mut s = env.reset();
            for a in actions.into_iter().take(demand.len()) {
                prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(s[2] < 1.0);
                let out = env.step(a).unwrap();
                prop_assert!(out.reward.is_finite());
                s = out.next;
            }
        }

        #[test]
        fn reward_has_at_most_two_breakpoints_in_allocation(d in 1.0f64..100.0, unit in 0.0f64..0.05, th in 0.5f64..2.0) {
            let r = |a: f64| reward_fn(a, d, unit * a, th);
            let h = d * 1e-5;
            let slope = |a: f64| (r(a + h) - r(a)) / h;
            let kinks = (1..300)
                .map(|k| k as f64 * 0.01 * d)
                .filter(|&a| (slope(a) - slope(a - h)).abs() > 1e-6 / d)
                .count();
            prop_assert!(kinks <= 2, "{kinks} kinks");
        }

        #[test]
        fn reward_has_one_breakpoint_in_cost(a in 0.0f64..200.0, d in 1.0f64..100.0, th in 0.5f64..2.0) {
            let below = reward_fn(a, d, 0.5 * th, th) - reward_fn(a, d, 0.25 * th, th);
            prop_assert!(below.abs() < 1e-12);
            let r1 = reward_fn(a, d, 1.5 * th, th);
            let r2 = reward_fn(a, d, 2.0 * th, th);
            prop_assert!(((r1 - r2) - 0.5).abs() < 1e-9);
            prop_assert!((reward_fn(a, d, th, th) - reward_fn(a, d, 0.0, th)).abs() < 1e-12);
        }
    }
}
