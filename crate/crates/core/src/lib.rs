//! Piecewise-polynomial spectral graph filters for node classification.
//!
//! The crate covers the whole pipeline: graph normalisation and statistics
//! ([`graph`]), synthetic fixtures ([`synth`]), extreme eigenpairs
//! ([`spectral`]), filter banks over spectral partitions ([`filterbank`]),
//! the differentiable model ([`model`]) and its training loop ([`train`]),
//! plus a numerical lab that checks the approximation and dimension claims
//! behind the filter family ([`approx`]).

pub mod approx;
pub mod cli;
pub mod error;
pub mod filterbank;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod model;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
