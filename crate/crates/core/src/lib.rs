pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod pipeline;
pub mod rl;
pub mod sru;
pub mod synth;

pub use error::{Error, Result};
