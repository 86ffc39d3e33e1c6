//! Spatial self-attention + LSTM sequence classifier.

mod config;
mod layers;
mod network;
mod params;

pub use config::{BlockSpec, SstaConfig};
pub use layers::{
    conv2d_forward, lstm_forward, ssa_forward, Activation, FeatureMap, FilterBank, LstmTrace,
    LstmWeights, SsaWeights,
};
pub use network::{
    argmax, backward, batch_loss, build_features_table, cross_entropy, forward, loss,
    loss_and_grad, predict, sgd_step, BatchGradient, FrameSequence, SstaActivations, LOG_CLAMP,
};
pub use params::SstaParams;
