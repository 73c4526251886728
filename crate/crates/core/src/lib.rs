//! Attention-based ensemble pooling for time-series forecasting.
//!
//! An ensemble of fixed candidate models is pooled into a single forecast by
//! a trainable additive-attention block. The attention weights are computed
//! from a query describing the recent system state and one key per candidate
//! describing that candidate's recent behaviour, so the pooling can switch
//! between candidates as the underlying dynamics drift.
//!
//! The crate is `no_std` (it needs `alloc`) and carries only the numerical
//! machinery:
//!
//! * [`numerics`]: dense matrices, Adam, finite-difference gradients.
//! * [`attention`]: single- and multi-head additive attention with analytic
//!   backward passes and time-delay embedding.
//! * [`lorenz`]: RK4 integration of the stationary and non-stationary
//!   Lorenz '63 systems plus the stationary candidate ensemble.
//! * [`forecasting`]: baseline poolers, the training loop, and open/closed
//!   loop drivers.
//! * [`evaluation`]: valid time, median confidence intervals, interval and
//!   weighted interval scores.
//! * [`covid`]: quantile-forecast tables, missing-data imputation, WIS-trained
//!   pooling, and a synthetic hub-data generator.
//!
//! File formats, configuration, and the command-line runner live in the
//! `attnpool` crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(all(feature = "std", not(test)))]
extern crate std;

pub mod attention;
pub mod covid;
mod error;
pub mod evaluation;
pub mod forecasting;
pub mod lorenz;
pub(crate) mod math;
pub mod numerics;
pub mod rng;

pub use error::{Error, RecordKind, Result};
pub use numerics::Matrix;
