//! Variational Bayesian regression networks.
//!
//! Two variational models are provided on top of a small dense-network
//! engine:
//!
//! * **VBNET-FIXED**: Bayes-by-backprop regression where the Gaussian
//!   likelihood variance is a fixed constant.
//! * **VBNET-SVAR**: the same diagonal-Gaussian posterior over weights,
//!   plus a Gaussian posterior over an unconstrained parameter `S` whose
//!   softplus is the likelihood variance.
//!
//! A frequentist network (NNET) is trained with the same optimizer and is
//! used to calibrate the fixed variance. The [`experiment`] module drives
//! the synthetic-curve and riboflavin-style replications end to end.

pub mod data;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod likelihood;
pub mod ndcore;
pub mod netgrad;
pub mod objective;
pub mod priors;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
pub use ndcore::{Matrix, RngState};
