//! Planar projective geometric algebra and SE(2)-equivariant transformer
//! building blocks for autoregressive traffic-agent simulation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! wall-clock benchmarks live in the `planar-gatr` companion crate.

#![no_std]
// `!(x > t)` reads as "not safely above t" and deliberately catches NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod batch;
pub mod blocks;
pub mod layers;
pub mod model;
pub mod pga;
pub mod real;
pub mod scene;

pub use pga::{Motor, Multivector, Pose2};
pub use real::{DType, Real};
