//! Exact finite computations for spreadable random arrays indexed by d-subsets of `[n]`.

pub mod boxnorm;
pub mod cli;
pub mod coding;
pub mod combin;
pub mod decomp;
pub mod error;
pub mod extraction;
pub mod models;
pub mod probspace;
pub mod sum;

pub use error::{Caps, Error, Result};
