#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod barriers;
pub mod exponents;
pub mod geometry;
pub mod ma_measure;
pub mod solver;
pub mod cli;

pub use error::{Error, Result};
