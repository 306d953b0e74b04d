//! Convolutional beamspace (CBS) preprocessing for large uniform linear
//! arrays: channel models, spatial FIR filters, linear combiners,
//! complexity/SINR metrics and near-field filter design.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_model;
pub mod beamformers;
pub mod error;
pub mod metrics;
pub mod nearfield_design;
pub mod scenario;
pub mod socp_solver;
pub mod spatial_filter;

pub use error::{Error, Result};
pub use num_complex::Complex64;
