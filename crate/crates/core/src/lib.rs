//! Online class-incremental learning with two collaborating students and a
//! global workspace model built by parameter fusion.
//!
//! The numeric layers ([`tensor`], [`network`], [`fusion`], [`losses`]) are
//! generic over [`Scalar`]; the data pipeline and trainer run in `f64`
//! through the aliases below.

pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod replay;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Element type used by the data pipeline, replay buffer and trainer.
pub type Real = f64;

pub type Matrix = tensor::Matrix<Real>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type ParameterSet = network::ParameterSet<Real>;
pub type StudentModel = network::StudentModel<Real>;
pub type GlobalWorkspace = fusion::GlobalWorkspace<Real>;
