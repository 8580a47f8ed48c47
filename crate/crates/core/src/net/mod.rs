//! The dual-branch network: asymmetric convolution blocks, interactive
//! adapters, and the assembled model with its ablations.

mod acb;
mod adapter;
mod config;
mod model;

pub use acb::Acb;
pub use adapter::{Adapter, AdapterRound, ADAPTER_ROUNDS};
pub use config::{Ablation, ModelConfig, HEAD_K, INPUT_CHANNELS};
pub use model::{ForwardOptions, Model, ModelOutput, Prediction, ResBlock, Stage, StageFeatures};
