//! Weakly supervised salient object detection from hybrid labels: a small
//! set of exact masks plus many coarse maps, refined by alternating a
//! refinement network and a saliency network.

pub mod autograd;
pub mod batch;
pub mod cli_store;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod rnet;
mod scalar;
pub mod snet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RNet32 = rnet::RNet<f32>;
pub type RNet64 = rnet::RNet<f64>;
pub type SNet32 = snet::ReferenceSNet<f32>;
pub type SNet64 = snet::ReferenceSNet<f64>;
pub type Sample32 = data::Sample<f32>;
pub type Sample64 = data::Sample<f64>;
