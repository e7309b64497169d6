use super::argmax;
use super::env::{GridEnv, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularConfig {
    pub gamma: f64,
    /// Hard cap on Q-updates.
    pub max_updates: usize,
    /// Updates between convergence checks.
    pub check_every: usize,
    /// Largest change in any Q entry between checks, relative to `max(1, max|Q|)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            gamma: 0.5,
            max_updates: 20_000_000,
            check_every: 100_000,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularResult {
    pub policy: Vec<usize>,
    /// Row-major `[cell][action]`.
    pub q: Vec<f64>,
    pub updates: usize,
}

/// Table-based Q-learning with step size `1/n(s,a)` under uniform random behavior.
/// Converged when, between two checks, the greedy policy is unchanged and no
/// entry moved by more than the tolerance.
pub fn tabular_q_oracle(env: &GridEnv, cfg: &TabularConfig) -> Result<TabularResult> {
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid(format!("tabular gamma must lie in [0, 1), got {}", cfg.gamma)));
    }
    if cfg.check_every == 0 {
        return Err(Error::invalid("check interval must be positive"));
    }
    let cells = env.num_cells();
    let mut q = vec![0.0; cells * NUM_ACTIONS];
    let mut visits = vec![0u64; cells * NUM_ACTIONS];
    let mut rng = Rng::new(cfg.seed);
    let mut snapshot = q.clone();
    let mut last_policy: Option<Vec<usize>> = None;
    let mut cell = rng.below(cells);
    let mut updates = 0;

    while updates < cfg.max_updates {
        for _ in 0..cfg.check_every {
            let action = rng.below(NUM_ACTIONS);
            let next = rng.below(cells);
            let v_next = q[next * NUM_ACTIONS..(next + 1) * NUM_ACTIONS]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let k = cell * NUM_ACTIONS + action;
            visits[k] += 1;
            let target = env.reward(cell, action) + cfg.gamma * v_next;
            q[k] += (target - q[k]) / visits[k] as f64;
            cell = next;
        }
        updates += cfg.check_every;
        let policy: Vec<usize> = q.chunks_exact(NUM_ACTIONS).map(argmax).collect();
        let scale = q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let moved = q
            .iter()
            .zip(&snapshot)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let stable = last_policy.as_ref() == Some(&policy);
        if stable && moved <= cfg.tolerance * scale && visits.iter().all(|&n| n > 0) {
            return Ok(TabularResult { policy, q, updates });
        }
        snapshot.copy_from_slice(&q);
        last_policy = Some(policy);
    }
    Err(Error::numerical(
        "tabular-oracle",
        format!("no convergence within {} updates", cfg.max_updates),
    ))
}
