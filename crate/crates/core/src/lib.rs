//! Representation analysis for layer-wise neural activations.
//!
//! The crate locates a scalar behavioral signal (a per-sample score in
//! `[0, 1]`) inside activation dumps: separability scoring ([`gdv`]), 2-D
//! projections ([`projections`]), six concept-direction extractors
//! ([`concepts`]), linear probes and a regression head ([`probe`]), top-K
//! sparse autoencoders ([`sae`]) and representational similarity analysis
//! ([`rsa`]). Activations are read from ACTV1 dumps ([`store`]) or generated
//! with planted structure ([`synth`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod concepts;
pub mod distance;
pub mod error;
pub mod gdv;
pub mod matrix;
pub mod probe;
pub mod projections;
pub mod rsa;
pub mod sae;
pub mod scalar;
pub mod stats;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Single-precision matrix, the element type of ACTV1 dumps.
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;

pub type PcaModel32 = projections::PcaModel<f32>;
pub type PcaModel64 = projections::PcaModel<f64>;

pub type LinearModel32 = probe::LinearModel<f32>;
pub type LinearModel64 = probe::LinearModel<f64>;

pub type SaeModel32 = sae::SaeModel<f32>;
pub type SaeModel64 = sae::SaeModel<f64>;

pub type ConceptVector32 = concepts::ConceptVector<f32>;
pub type ConceptVector64 = concepts::ConceptVector<f64>;

pub type ProjectionResult32 = projections::ProjectionResult<f32>;
pub type ProjectionResult64 = projections::ProjectionResult<f64>;
