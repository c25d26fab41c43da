//! Velocity network for the toy flow: random Fourier features of the position,
//! a stack of FiLM-modulated SiLU blocks conditioned on `(shape, seed slot, t)`,
//! and a linear head. Reverse mode is written out by hand for this fixed
//! architecture.
//!
//! Learnable parameters live in one flat vector so the optimizer, gradient
//! checks and checkpoints can treat them uniformly; [`ModelParams::groups`]
//! names the slices.

mod model;
mod train;

pub use model::{
    forward, loss_and_grad, rff_embed, velocity_field, ConditionVector, ModelParams, NetConfig, ParamGroup, Sample,
    SHAPE_PARAM_DIM,
};
pub use train::{adam_step, expand_samples, toy_datasets, train, AdamState, LabeledDataset, TrainConfig, TrainOutcome};
