//! Tensors, the reverse-mode tape, the optimizer, and checkpoint I/O.

mod adam;
mod checkpoint;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamOptimizer, OptimError};
pub use checkpoint::{
    load_params, read_params, save_params, write_params, CheckpointError, MAGIC, VERSION,
};
pub use tape::{GraphError, NodeId, Tape, EPS_LOG};
pub use tensor::{Tensor, TensorError};
