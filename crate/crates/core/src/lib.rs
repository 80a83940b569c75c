//! Test-time batch normalization that partitions each layer's batch into
//! groups of similar samples before normalizing.
//!
//! At every normalization slot the batch is split by the connected
//! components of a first-neighbor graph over per-sample channel means
//! ([`lfd`]). Each group is normalized with its own statistics blended
//! toward the frozen source statistics ([`fabn`]). A cold-start sensitivity
//! score can switch partitioning off for layers that barely shift
//! ([`sensitivity`]).
//!
//! The statistical core is generic over [`Scalar`] (`f32`, `f64`); the
//! model, stream and harness work in `f32`.

pub mod error;
pub mod fabn;
pub mod harness;
pub mod lfd;
pub mod model;
mod scalar;
pub mod sensitivity;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use fabn::{NormMode, NormalizerConfig};
pub use scalar::Scalar;

pub type FeatureMap32 = tensor::FeatureMap<f32>;
pub type FeatureMap64 = tensor::FeatureMap<f64>;
pub type ChannelStats32 = tensor::ChannelStats<f32>;
pub type ChannelStats64 = tensor::ChannelStats<f64>;
pub type SourceStats32 = fabn::SourceStats<f32>;
pub type SourceStats64 = fabn::SourceStats<f64>;
pub type InstanceStats32 = lfd::InstanceStats<f32>;
pub type InstanceStats64 = lfd::InstanceStats<f64>;
