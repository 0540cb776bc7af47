#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod rng;

pub use error::{LsboError, Result};
pub mod vae;
pub mod cycles;
pub mod stats;
pub mod gp;
pub mod acquisition;
pub mod tasks;
pub mod lsbo;
pub mod cli;
