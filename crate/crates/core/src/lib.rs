//! Partially stochastic infinitely deep Bayesian neural networks.
//!
//! The hidden state `h_t` follows an ODE whose parameters are the weight
//! path `w_t`. The weights are deterministic except on a depth window
//! `(t₁, t₂)` or a coordinate subset, where they follow a posterior SDE
//! trained against an Ornstein–Uhlenbeck prior.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod solvers;

pub use error::{Error, Result};
