//! Minimal reverse-mode differentiation and the layers built on it.

mod adam;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{sigmoid, Bound, Graph, Var};
pub use layers::{dense_forward, lstm_forward, Activation, Dense, Lstm, LstmCellState, LstmVars};
pub use params::{Checkpoint, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;
