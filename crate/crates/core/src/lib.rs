//! Estimation in Gaussian mixtures whose components form the orbit of a
//! single center under a finite group of isometries.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fisher;
pub mod group;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod rates;
pub mod rng;
pub mod stabilizer;
pub mod stats;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use group::{make_group, FiniteIsometryGroup, GroupKind, GroupSpec};
pub use model::MixtureModel;
pub use rng::{RngStream, StreamId};
pub use stabilizer::{stabilizer, stabilizer_default, StabilizerReport};

/// Release identifier, including the group-element ordering convention so
/// that serialized element indices stay interpretable.
pub fn version_string() -> String {
    format!("mra-lab v{} ({})", env!("CARGO_PKG_VERSION"), group::ORDERING_CONVENTION)
}
