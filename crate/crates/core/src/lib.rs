#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifier;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod rebalance;
pub mod trainer;

pub use error::{Error, Result};
