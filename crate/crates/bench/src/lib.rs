//! Inputs shared by the benchmarks.

use coldchain_core::data::{build_feature_sequences, fill_missing, FeatureSequence, SplitFractions};
use coldchain_core::numeric::Rng;
use coldchain_core::rl::{Experience, ReplayMemory, STATE_DIM};
use coldchain_core::synth::{synthesize, SynthConfig};

/// Feature sequences of `states` synthetic states, `days` long.
pub fn sequences(states: usize, days: usize) -> Vec<FeatureSequence> {
    let data = synthesize(&SynthConfig {
        states,
        days,
        ..SynthConfig::default()
    });
    let mut records = data.records;
    fill_missing(&mut records);
    build_feature_sequences(&records, &data.populations, SplitFractions::default())
        .expect("synthetic data builds")
        .0
}

/// A replay memory filled with `n` random transitions.
pub fn filled_memory(n: usize, seed: u64) -> ReplayMemory {
    let mut rng = Rng::new(seed);
    let mut memory = ReplayMemory::new(n).expect("positive capacity");
    let draw = |rng: &mut Rng| -> [f64; STATE_DIM] { std::array::from_fn(|_| rng.uniform()) };
    for _ in 0..n {
        let state = draw(&mut rng);
        let next = draw(&mut rng);
        memory.push(Experience {
            state,
            action: rng.below(6),
            reward: rng.uniform_range(-1.0, 1.0),
            next,
            terminal: rng.uniform() < 0.01,
        });
    }
    memory
}
