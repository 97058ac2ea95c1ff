//! Dense tensors, reverse-mode autodiff, Adagrad, gradient checking and
//! checkpoints.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, TensorRole, CHECKPOINT_VERSION, MANIFEST_FILE,
    PAYLOAD_FILE,
};
pub use gradcheck::{grad_check, grad_check_inputs, relative_error, GradCheckReport};
pub use params::{glorot_uniform, ParamId, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

/// Adagrad denominator offset.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Global-norm gradient clip applied before every optimizer step.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;
