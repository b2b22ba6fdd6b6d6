//! Corridor traffic-signal control with a recurrent world-model agent.
//!
//! The numeric core ([`graph`], [`nn`], [`dist`], the world model and the
//! actor-critic) is generic over [`Scalar`]; training uses `f32` and the
//! gradient checks run the same code in `f64`.

pub mod behavior;
pub mod checkpoint;
pub mod dist;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod presets;
pub mod replay;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod trainer;
pub mod transforms;
pub mod world_model;

pub use error::{Error, Result};
pub use graph::{Activation, Graph, Var};
pub use params::{AdamConfig, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
