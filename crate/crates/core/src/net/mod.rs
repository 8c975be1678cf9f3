//! Small convolutional despeckler trained from scratch.
//!
//! The network maps a noisy image `y` to an estimate `n̂` of the
//! multiplicative noise field through a stack of 3×3 convolutions (zero
//! padding, ReLU between layers, linear output). The clean estimate is
//! `y / max(n̂, EPS_DIV)`.

mod adam;
mod checkpoint;
mod model;
mod real;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ADAM_LR};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{
    backward, denoise_cnn, forward, loss_mse, Cache, ConvLayer, ConvNet, ForwardPass, Gradients, LayerGrads,
    EPS_DIV,
};
pub use real::Real;
pub use train::{train, train_manifest, write_train_log, LogRow, TrainConfig, TrainOutcome};
