//! Homoscedastic Gaussian regression log-likelihoods.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ndcore::{shape_str, softplus, softplus_deriv};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedVarianceLik {
    pub sigma0_sq: f64,
}

impl FixedVarianceLik {
    pub fn new(sigma0_sq: f64) -> Result<Self> {
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::config(format!(
                "fixed likelihood variance must be positive, got {sigma0_sq}"
            )));
        }
        Ok(Self { sigma0_sq })
    }
}

/// Likelihood variance given by `softplus(s)` for an unconstrained `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnedVarianceLik {
    pub s: f64,
}

impl LearnedVarianceLik {
    pub fn variance(&self) -> f64 {
        softplus(self.s)
    }
}

/// Which variance a likelihood evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variance {
    Fixed(FixedVarianceLik),
    Learned(LearnedVarianceLik),
}

impl Variance {
    pub fn value(&self) -> f64 {
        match self {
            Variance::Fixed(f) => f.sigma0_sq,
            Variance::Learned(l) => l.variance(),
        }
    }
}

fn check_shapes(y: &Matrix, yhat: &Matrix) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::shape("likelihood", shape_str(y), shape_str(yhat)));
    }
    Ok(())
}

pub(crate) fn sse(y: &Matrix, yhat: &Matrix) -> f64 {
    y.data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn gaussian_log_lik(variance: f64, y: &Matrix, yhat: &Matrix) -> f64 {
    let count = y.data().len() as f64;
    -0.5 * count * (2.0 * PI * variance).ln() - sse(y, yhat) / (2.0 * variance)
}

/// `Σ_i [ -(q/2) ln(2π σ0²) - ‖y_i - ŷ_i‖² / (2σ0²) ]`.
pub fn log_lik_fixed(lik: &FixedVarianceLik, y: &Matrix, yhat: &Matrix) -> Result<f64> {
    check_shapes(y, yhat)?;
    if !(lik.sigma0_sq > 0.0) {
        return Err(Error::config("fixed likelihood variance must be positive"));
    }
    Ok(gaussian_log_lik(lik.sigma0_sq, y, yhat))
}

/// As [`log_lik_fixed`] with variance `softplus(s)`.
pub fn log_lik_learned(s: f64, y: &Matrix, yhat: &Matrix) -> Result<f64> {
    check_shapes(y, yhat)?;
    Ok(gaussian_log_lik(softplus(s), y, yhat))
}

pub fn log_lik(variance: &Variance, y: &Matrix, yhat: &Matrix) -> Result<f64> {
    match variance {
        Variance::Fixed(f) => log_lik_fixed(f, y, yhat),
        Variance::Learned(l) => log_lik_learned(l.s, y, yhat),
    }
}

#[derive(Debug, Clone)]
pub struct LikGrad {
    /// `∂ log L / ∂ŷ = (y - ŷ) / v`.
    pub d_yhat: Matrix,
    /// `∂ log L / ∂s`; `None` for a fixed variance.
    pub d_s: Option<f64>,
}

pub fn grad_log_lik(variance: &Variance, y: &Matrix, yhat: &Matrix) -> Result<LikGrad> {
    check_shapes(y, yhat)?;
    let v = variance.value();
    let d = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (a - b) / v)
        .collect();
    let d_yhat = Matrix::new(y.rows(), y.cols(), d)?;
    let d_s = match variance {
        Variance::Fixed(_) => None,
        Variance::Learned(l) => {
            let count = y.data().len() as f64;
            let dv = -count / (2.0 * v) + sse(y, yhat) / (2.0 * v * v);
            Some(dv * softplus_deriv(l.s))
        }
    };
    Ok(LikGrad { d_yhat, d_s })
}
