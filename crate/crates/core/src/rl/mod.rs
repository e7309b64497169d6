//! Per-state allocation environment, Q-network with replay and target
//! network, and a tabular Q-learning reference.

mod agent;
mod env;
mod qnet;
mod replay;
mod tabular;

pub use agent::*;
pub use env::*;
pub use qnet::*;
pub use replay::*;
pub use tabular::*;

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
