#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
pub mod chains;
pub mod constants;
pub mod dual;
pub mod extrapolate;
pub mod forward;
pub mod potential;
pub mod quadrature;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod lattice;
pub mod model;
pub mod rng;
pub mod stats;
pub mod variance;
pub mod weights;
