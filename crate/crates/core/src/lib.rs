//! Predicting whether a user will join a short-video challenge.
//!
//! Videos are encoded as frame features concatenated with a caption
//! embedding. Two proxy classifiers (video to challenge, video to user) turn
//! those into learned embeddings; challenge and user representations are
//! fixed-arity concatenations of learned embeddings, and a feed-forward head
//! over both predicts participation.
//!
//! The numeric core ([`nn`], [`train`], [`metrics`], [`proxy`],
//! [`participation`]) is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod config;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod features;
pub mod head_io;
pub mod metrics;
pub mod nn;
pub mod participation;
pub mod pipeline;
pub mod provenance;
pub mod proxy;
pub mod representations;
pub mod scalar;
pub mod store;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
