//! Direct-sampling particle filtering.
//!
//! Particles are produced as explicit functions of unit-normal reference
//! draws whose parameters solve a small per-particle equation, rather than by
//! reweighting prior samples. The crate contains the scalar Gaussian algebra
//! everything is built on, a sampler for diffusion bridges, the bearings-only
//! ship model, the forward filter with phase-weight resampling, a one-step
//! backward smoother, parameter estimation from filter output and the
//! experiment harness behind the `direct-pf` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod filter;
pub mod gaussian;
pub mod model;
pub mod seeding;
pub mod selftest;
pub mod smoother;

pub use error::{Error, Result};
