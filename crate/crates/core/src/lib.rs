//! Form key-value information extraction.

pub mod aspectfeat;
pub mod cli;
pub mod docmodel;
pub mod dualnet;
pub mod evalkit;
pub mod geoenc;
pub mod scalar;
pub mod synthform;
pub mod tensor;

pub use scalar::Scalar;

/// Single-precision model parameters, the on-disk payload type.
pub type Model = dualnet::ModelParams<f32>;
/// Double-precision parameters, used for gradient checks.
pub type Model64 = dualnet::ModelParams<f64>;
pub type ParamStore32 = dualnet::ParamStore<f32>;
pub type ParamStore64 = dualnet::ParamStore<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type PreparedPage32 = dualnet::PreparedPage<f32>;
pub type PreparedPage64 = dualnet::PreparedPage<f64>;
