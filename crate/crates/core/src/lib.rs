//! Scattering transform on directed graphs built from the heat semigroup of a
//! drift-weighted Laplacian, with a log-normal random-walk model that turns
//! layer norms into an anomaly test.
//!
//! The pipeline is: a [`graph::DirectedGraph`] with [`graph::EdgeFields`] →
//! [`laplacian::SpectralLaplacian`] → [`semigroup::FilterPair`] →
//! [`scattering::scatter`]. The [`stochastic`] module supplies adapted weights
//! and thresholds, and [`traffic`] applies everything to periodic count data.

pub mod eigen;
pub mod error;
pub mod graph;
pub mod laplacian;
pub mod scattering;
pub mod selftest;
pub mod semigroup;
pub mod stochastic;
pub mod traffic;

pub use error::{Error, Result};
