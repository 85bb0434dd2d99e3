//! Dense `f64` tensors, a reverse-mode tape, layers, AdamW and the checkpoint
//! container.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{gradient_check, BackwardReport, ConvGeometry, Graph, Padding, ScalarFn, Var};
pub use layers::{Conv1d, LayerNorm, Linear, MultiHeadAttention, ResidualBlock, SequenceEncoder, TransformerLayer};
pub use optim::AdamW;
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
