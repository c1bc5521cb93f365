#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod analysis;
pub mod convexity;
pub mod dynamics;
pub mod error;
pub mod initial_data;
pub mod pipeline;
pub mod protocol;
pub mod quadrature;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
