#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bevmap;
pub mod cli;
pub mod controller;
pub mod dataset;
pub mod geodesy;
pub mod learning;
pub mod linalg;
pub mod metrics;
pub mod planner;
pub mod simulator;
