//! MLP dynamics surrogates trained to predict the normalized next state.
//!
//! The default network is `[d_s + d_a, 512, 512, d_s]` with ELU hidden
//! layers, Kaiming-normal initialization and dropout 0.1. Jacobian-bearing
//! losses are differentiated exactly, including the second-order terms that
//! come from differentiating the input Jacobian with respect to the weights.

mod aggregate;
mod io;
mod loss;
mod mlp;
mod train;

pub use aggregate::{min_max_normalized, pooled_quartiles, Quartiles, RunRecord};
pub use io::{
    load_model, model_header, save_model, save_model_tagged, ModelHeader, MODEL_FORMAT_VERSION, MODEL_HEADER, MODEL_PARAMS,
};
pub use loss::{compute_loss, gradient_check, loss_gradient, Batch, LossMode, LossParts, LossSpec};
pub use mlp::{mlp_forward, mlp_init, mlp_jacobian, Gradients, MlpModel, DEFAULT_DEPTH, DEFAULT_DROPOUT, DEFAULT_WIDTH};
pub use train::{
    evaluate, split_indices, train, AdamW, EpochRecord, EvalResult, Evaluation, NormalizedSet, TrainConfig, TrainRun,
};
