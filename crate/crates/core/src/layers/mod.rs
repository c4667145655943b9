//! Equivariant network primitives on batched multivector arrays.
//!
//! Every layer exposes a pure function on [`MvArray`](crate::batch::MvArray)
//! plus the raw forward/backward kernels that the autodiff tape reuses.

pub mod attention;
pub mod bilinear;
pub mod dense;
pub mod linear;
pub mod norm;

use thiserror::Error;

use crate::batch::BatchError;

pub use attention::{causal_mask, eq_attention, AttentionConfig, AttnGroup};
pub use bilinear::{geometric_bilinear, geometric_product, join};
pub use dense::DenseParams;
pub use linear::{eq_linear, EqLinearParams};
pub use norm::{eq_layer_norm, gated_relu, layer_norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("{what}: expected {expected} channels, got {got}")]
    Channels { what: &'static str, expected: usize, got: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("{heads} heads do not divide {mv} multivector / {scalars} scalar channels")]
    Heads { heads: usize, mv: usize, scalars: usize },
    #[error("token index out of range in attention group")]
    TokenIndex,
    #[error("query token {0} appears in more than one attention group")]
    QueryOverlap(usize),
    #[error("causal attention requires as many keys as queries in each group")]
    CausalShape,
    #[error(transparent)]
    Batch(#[from] BatchError),
}
