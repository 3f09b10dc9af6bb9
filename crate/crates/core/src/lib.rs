// `!(x >= 0.0)` is deliberate throughout: it rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the summation formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
