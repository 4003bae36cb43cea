// Negated float comparisons (`!(x > 0.0)`) are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod concentration;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod pca;
pub mod schedule;
pub mod sgd;
pub mod toy;

pub use error::{Error, Result};
