#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod metrics;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod stability;
