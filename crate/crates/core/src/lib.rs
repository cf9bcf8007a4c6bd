// Negated float comparisons such as `!(x > 0.0)` are used on purpose so
// that NaN inputs fall into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod harness;
pub mod modcore;
pub mod predictor;
pub mod sigen;
pub mod unfold;

pub use error::{Error, Result};
