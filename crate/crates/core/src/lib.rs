//! Platoon formation of human-driven vehicles behind one connected automated
//! vehicle (CAV) driven by a receding-horizon controller.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfm;
pub mod config;
pub mod model;
pub mod mpc;
pub mod qp;
pub mod sim;
pub mod sweep;
