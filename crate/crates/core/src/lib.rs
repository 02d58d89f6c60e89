//! Manifold-learning toolkit for predicting nanoparticle size from Raman
//! spectra.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod altdmaps;
pub mod conformal;
pub mod dmaps;
pub mod error;
pub mod exec;
pub mod ihm;
pub mod linalg;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod regress;
pub mod spectra;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
