//! Dense matrix autodiff, transformer primitives, Adam, finite-difference
//! verification and the checkpoint archive.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, NamedTensor, TensorEntry, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{
    attention, mean_pool, sinusoidal_positions, FeedForward, LayerNorm, Linear, ProjectionParams, TransformerBlock,
    LAYER_NORM_EPS,
};
pub use params::{normal_tensor, scaled_normal, ParamId, ParamStore};
pub use real::{Precision, Real};
pub use tape::{Gradients, StoreGrads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss([usize; 2]),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("cannot update a frozen parameter store")]
    FrozenStore,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
