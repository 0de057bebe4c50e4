//! Bilinear MLP classifiers and their weight-based decomposition.
//!
//! A bilinear layer computes `g(x) = (W x) ⊙ (V x)`, optionally followed by a
//! linear projection. Every output direction `u` of such a layer reduces to a
//! symmetric interaction matrix `Q` with `uᵀ g(x) = xᵀ Q x`, and the
//! eigendecomposition of `Q` splits the output into independent eigenvector
//! activations `λ (vᵀ x)²`. This crate contains:
//!
//! - [`linalg`]: dense matrices, a cyclic Jacobi symmetric eigensolver, a
//!   one-sided Jacobi SVD and the Moore–Penrose pseudo-inverse.
//! - [`dataset`]: IDX parsing/serialization, synthetic data, batching.
//! - [`model`]: the bilinear model, forward pass and interaction matrices.
//! - [`train`]: cross-entropy backpropagation, AdamW and latent noise.
//! - [`decompose`]: per-output spectra, multi-layer decompilation trees,
//!   change of basis and flattened HOSVD.
//! - [`spectral`]: top-k truncated models, activation ranking, cross-model
//!   similarity.
//! - [`ngram`]: weight-based bigram and skip-trigram tables.
//!
//! The crate is `no_std` (with `alloc`); file formats, IO and the command
//! line live in the `bilinear-cli` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod dataset;
pub mod decompose;
mod error;
pub mod linalg;
pub mod model;
pub mod ngram;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
