//! Emulation, training and cost modelling of an integer neural-network
//! accelerator for MRF T1/T2 map reconstruction.

pub mod error;
pub mod hardware;
pub mod model_file;
pub mod mrf;
pub mod network;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
pub use model_file::{ModelFile, TargetScale};
pub use network::{
    ForwardMode, ForwardTrace, IntegerModel, LayerParams, LayerSpec, NetworkConfig, QuantScheme,
};
pub use quant::{QTensor, QuantParams};
