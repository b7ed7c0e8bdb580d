//! Reverse distillation over hierarchies of embedding models.
//!
//! A smaller model's embedding is kept verbatim and a larger model's
//! embedding is decomposed into what the smaller one predicts plus an
//! orthogonal residual subspace. Chaining the decomposition over a model
//! family yields Matryoshka embeddings: every declared prefix width is the
//! reverse-distilled embedding of the corresponding smaller model.
//!
//! Modules:
//! - [`store`]: EMB1 files, manifests, stacking.
//! - [`numerics`]: SVD, least squares, PCA, rank selection, PCR, ridge, Spearman.
//! - [`distillation`]: training pair and chain maps, artifact persistence.
//! - [`inference`]: applying maps to new sequences, prefixes.
//! - [`evaluation`]: mutation-effect probing, comparison tables.
//! - [`baselines`]: PCA-on-concatenation and the PCR/OLS ablation.
//! - [`synthetic`]: planted embedding families and DMS datasets.

pub mod artifact;
pub mod baselines;
pub mod distillation;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod numerics;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
