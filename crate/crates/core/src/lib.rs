//! Hyperbolic variational temporal graph neural networks.
//!
//! Node representations live on the Lorentz model of hyperbolic space.
//! A temporal graph attention encoder produces the mean of a wrapped normal
//! posterior per node and time; a Euclidean twin produces its log scale.
//! Training maximizes an evidence lower bound with reparameterised samples
//! and gradients from a small reverse-mode tape.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod manifold;
pub mod metrics;
pub mod tgnn;
pub mod time_encoding;
pub mod vgae;
pub mod wrapped_normal;

pub use error::{Error, Result};
