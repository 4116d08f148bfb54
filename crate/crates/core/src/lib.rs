//! Tikhonov-regularised projected gradient flow for constrained quantum
//! control.
//!
//! The modules build on each other bottom-up: [`numkit`] supplies dense
//! linear algebra and quadrature, [`model`] the controlled Schrödinger
//! dynamics and objective gradient, [`constraints`] the integral side
//! conditions, [`gram`] the regularised projection system, [`flow`] the
//! integrator and [`experiments`] the sweeps built on top of it.

// `!(x > 0.0)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod gram;
pub mod model;
pub mod numkit;

pub use error::{Error, Result};
