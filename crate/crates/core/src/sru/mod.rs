//! Two stacked SRU layers, optional additive attention and a one-unit dense head.

mod layer;
mod model;
mod train;

pub use layer::{sru_cell_forward, CellOutput, LayerTrace, SruLayer};
pub use model::*;
pub use train::*;
