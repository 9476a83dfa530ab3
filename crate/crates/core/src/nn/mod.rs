//! CSI-amplitude estimator: tensors, layer kernels with hand-written
//! gradients, and the encoder-decoder network built from them.

pub mod convlstm;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use model::{
    backward, build_model, forward, loss, loss_and_grads, Batch, LayerGrads, Mode, ModelSpec, ModelWeights, Tape,
    Variant,
};
pub use scalar::Real;
pub use tensor::{FeatureMap, Tensor, TensorMap};

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in layer `{layer}`")]
    NonFinite { layer: String },
    #[error("every bin in the batch is masked")]
    AllMasked,
}
