//! File formats, evaluation harness and command-line plumbing around
//! [`planar_gatr_core`].

pub mod cli;
pub mod config;
pub mod harness;
pub mod io;

pub use planar_gatr_core as core;
