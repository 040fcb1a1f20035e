//! Spectral solvers for mean-field control of a modified viscous Burgers flow.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod costs;
pub mod error;
pub mod experiment;
pub mod field;
pub mod flow;
pub mod grid;
pub mod integrate;
pub mod io;
pub mod mfg1;
pub mod mfg2;
pub mod par;
pub mod sde;
pub mod spectral;

pub use error::{MfgError, Result};
pub use field::{Field, ScalarField, VectorField};
pub use grid::Grid;
pub use spectral::{Spectral, Spectrum};
