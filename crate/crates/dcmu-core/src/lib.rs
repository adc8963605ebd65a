// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod geometry;
pub mod robot_model;
pub mod weighted_graph;
pub mod gradcheck;
pub mod consensus;
pub mod controller;
pub mod simulator;
