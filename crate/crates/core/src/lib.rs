// `!(v > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod kernelfit;
pub mod lasso;
pub mod localpoly;
pub mod rdd;
pub mod stats;
pub mod sim;
