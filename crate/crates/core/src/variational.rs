//! Diagonal-Gaussian variational posteriors with softplus scales.
//!
//! A coordinate with parameters `(mu, rho)` has standard deviation
//! `softplus(rho)`; samples are drawn as `theta = mu + eps * softplus(rho)`
//! with `eps ~ N(0, 1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ndcore::{softplus, softplus_inv, softplus_with_deriv};
use crate::netgrad::Architecture;
use crate::{Error, Result, RngState};

/// Initial `rho` for every coordinate (`softplus(-3) ≈ 0.0486`).
pub const DEFAULT_RHO_INIT: f64 = -3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariational {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl GaussianVariational {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::shape("GaussianVariational", mu.len(), rho.len()));
        }
        if mu.iter().chain(&rho).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "variational parameters must be finite".into(),
            ));
        }
        Ok(Self { mu, rho })
    }

    pub fn scalar(mu: f64, rho: f64) -> Result<Self> {
        Self::new(vec![mu], vec![rho])
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub(crate) fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub(crate) fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.rho).all(|v| v.is_finite())
    }

    /// Standard deviations `softplus(rho)`.
    pub fn scales(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    fn check_len(&self, op: &'static str, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::shape(op, self.len(), n));
        }
        Ok(())
    }

    /// `mu + eps ⊙ softplus(rho)`.
    pub fn reparam_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_len("reparam_sample", eps.len())?;
        Ok(self
            .mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((&m, &r), &e)| m + e * softplus(r))
            .collect())
    }

    /// `Σ log N(theta_i; mu_i, softplus(rho_i)^2)`.
    pub fn log_q(&self, theta: &[f64]) -> Result<f64> {
        self.check_len("log_q", theta.len())?;
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        Ok(self
            .mu
            .iter()
            .zip(&self.rho)
            .zip(theta)
            .map(|((&m, &r), &t)| {
                let s = softplus(r);
                let z = (t - m) / s;
                -half_log_2pi - s.ln() - 0.5 * z * z
            })
            .sum())
    }

    /// Gradient with respect to `(mu, rho)` of `g(theta) + log q(theta)`
    /// where `theta = mu + eps ⊙ softplus(rho)` and `upstream = ∂g/∂theta`.
    ///
    /// The `log q` term contributes both through the sampled `theta` and
    /// through its own `(mu, sigma)` arguments.
    pub fn grad_log_terms(&self, eps: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let draw = self.draw(eps)?;
        self.grad_at(&draw, eps, upstream)
    }

    /// Sample, scales and `log q` for one noise vector.
    pub(crate) fn draw(&self, eps: &[f64]) -> Result<Draw> {
        self.check_len("draw", eps.len())?;
        let n = self.len();
        let mut draw = Draw {
            theta: Vec::with_capacity(n),
            scale: Vec::with_capacity(n),
            dscale: Vec::with_capacity(n),
            log_q: 0.0,
        };
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        for i in 0..n {
            let (s, ds) = softplus_with_deriv(self.rho[i]);
            let t = self.mu[i] + eps[i] * s;
            let z = (t - self.mu[i]) / s;
            draw.log_q += -half_log_2pi - s.ln() - 0.5 * z * z;
            draw.theta.push(t);
            draw.scale.push(s);
            draw.dscale.push(ds);
        }
        Ok(draw)
    }

    pub(crate) fn grad_at(&self, draw: &Draw, eps: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len("grad_log_terms", eps.len())?;
        self.check_len("grad_log_terms", upstream.len())?;
        let n = self.len();
        let mut d_mu = Vec::with_capacity(n);
        let mut d_rho = Vec::with_capacity(n);
        for i in 0..n {
            let (s, ds, e) = (draw.scale[i], draw.dscale[i], eps[i]);
            // θ − μ = e·s
            let dlogq_dtheta = -e / s;
            let dlogq_dmu = e / s;
            let dlogq_dsigma = -1.0 / s + e * e / s;
            let dtheta = upstream[i] + dlogq_dtheta;
            d_mu.push(dtheta + dlogq_dmu);
            d_rho.push((dtheta * e + dlogq_dsigma) * ds);
        }
        Ok((d_mu, d_rho))
    }
}

/// One reparameterized draw with the per-coordinate scales it used.
#[derive(Debug, Clone)]
pub(crate) struct Draw {
    pub theta: Vec<f64>,
    pub scale: Vec<f64>,
    pub dscale: Vec<f64>,
    pub log_q: f64,
}

/// Whether the likelihood variance is fixed or carries its own posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Svar,
}

/// Variational parameters `(mu_w, rho_w)` and, in SVAR mode, `(mu_L, rho_L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub weights: GaussianVariational,
    pub variance: Option<GaussianVariational>,
}

impl VariationalState {
    pub fn new(weights: GaussianVariational, variance: Option<GaussianVariational>) -> Result<Self> {
        if let Some(v) = &variance {
            if v.len() != 1 {
                return Err(Error::shape("variance posterior", 1, v.len()));
            }
        }
        Ok(Self { weights, variance })
    }

    /// `mu_w` from the network init scheme, `rho_w = rho_L = -3` and
    /// `mu_L` such that `softplus(mu_L) = initial_variance`.
    pub fn init(
        arch: &Architecture,
        mode: Mode,
        initial_variance: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mu = arch.init_params(rng).0;
        let rho = vec![DEFAULT_RHO_INIT; mu.len()];
        let variance = match mode {
            Mode::Fixed => None,
            Mode::Svar => {
                if !(initial_variance > 0.0 && initial_variance.is_finite()) {
                    return Err(Error::config(format!(
                        "initial likelihood variance must be positive, got {initial_variance}"
                    )));
                }
                Some(GaussianVariational::scalar(
                    softplus_inv(initial_variance),
                    DEFAULT_RHO_INIT,
                )?)
            }
        };
        Self::new(GaussianVariational::new(mu, rho)?, variance)
    }

    pub fn mode(&self) -> Mode {
        if self.variance.is_some() {
            Mode::Svar
        } else {
            Mode::Fixed
        }
    }

    /// `softplus(mu_L)`, the likelihood variance at the posterior mean of S.
    pub fn variance_at_mean(&self) -> Option<f64> {
        self.variance.as_ref().map(|v| softplus(v.mu()[0]))
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.variance.as_ref().is_none_or(|v| v.is_finite())
    }
}
