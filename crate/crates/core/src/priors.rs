//! Log prior densities over network parameters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Isotropic zero-mean Gaussian `N(0, variance · I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianPrior {
    pub variance: f64,
}

impl GaussianPrior {
    pub fn new(variance: f64) -> Result<Self> {
        let p = Self { variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::config(format!(
                "prior variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { variance: 1.0 }
    }
}

/// Two-component mixture `π N(0, slab) + (1 - π) N(0, spike)` per
/// coordinate, i.e. the spike-and-slab prior with its Bernoulli inclusion
/// indicator summed out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSlabPrior {
    pub slab_variance: f64,
    pub spike_variance: f64,
    pub inclusion_prob: f64,
}

impl SpikeSlabPrior {
    pub fn new(slab_variance: f64, spike_variance: f64, inclusion_prob: f64) -> Result<Self> {
        let p = Self {
            slab_variance,
            spike_variance,
            inclusion_prob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spike_variance > 0.0 && self.spike_variance < self.slab_variance)
            || !self.slab_variance.is_finite()
        {
            return Err(Error::config(format!(
                "spike-and-slab needs 0 < spike variance < slab variance, got {} and {}",
                self.spike_variance, self.slab_variance
            )));
        }
        if !(0.0..=1.0).contains(&self.inclusion_prob) {
            return Err(Error::config(format!(
                "inclusion probability must lie in [0, 1], got {}",
                self.inclusion_prob
            )));
        }
        Ok(())
    }
}

impl Default for SpikeSlabPrior {
    fn default() -> Self {
        Self {
            slab_variance: 1.0,
            spike_variance: 1e-4,
            inclusion_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian(GaussianPrior),
    SpikeSlab(SpikeSlabPrior),
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian(GaussianPrior::default())
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::Gaussian(p) => p.validate(),
            Prior::SpikeSlab(p) => p.validate(),
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            Prior::Gaussian(p) => log_prior_gaussian(p, theta),
            Prior::SpikeSlab(p) => log_prior_spike_slab(p, theta),
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        grad_log_prior(self, theta)
    }

    pub fn log_density_with_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        log_prior_with_grad(self, theta)
    }
}

/// `Σ log N(theta_i; 0, variance)`.
pub fn log_prior_gaussian(prior: &GaussianPrior, theta: &[f64]) -> Result<f64> {
    prior.validate()?;
    let v = prior.variance;
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    Ok(-0.5 * theta.len() as f64 * (2.0 * PI * v).ln() - sq / (2.0 * v))
}

/// Per-coordinate log weights of the two mixture components,
/// `a = log π + log N(θ; 0, slab)` and `b = log(1-π) + log N(θ; 0, spike)`,
/// with their coordinate-independent parts precomputed.
struct Mixture {
    const_slab: f64,
    const_spike: f64,
    inv2_slab: f64,
    inv2_spike: f64,
}

impl Mixture {
    fn new(p: &SpikeSlabPrior) -> Self {
        Self {
            const_slab: p.inclusion_prob.ln() - 0.5 * (2.0 * PI * p.slab_variance).ln(),
            const_spike: (-p.inclusion_prob).ln_1p() - 0.5 * (2.0 * PI * p.spike_variance).ln(),
            inv2_slab: 0.5 / p.slab_variance,
            inv2_spike: 0.5 / p.spike_variance,
        }
    }

    /// `(log(e^a + e^b), e^a / (e^a + e^b))`: log density and slab
    /// responsibility.
    #[inline]
    fn eval(&self, t: f64) -> (f64, f64) {
        let t2 = t * t;
        let a = self.const_slab - t2 * self.inv2_slab;
        let b = self.const_spike - t2 * self.inv2_spike;
        let d = a - b;
        let e = (-d.abs()).exp();
        let r = if d >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
        (a.max(b) + e.ln_1p(), r)
    }
}

/// `Σ log(π N(theta_j; 0, slab) + (1-π) N(theta_j; 0, spike))`.
pub fn log_prior_spike_slab(prior: &SpikeSlabPrior, theta: &[f64]) -> Result<f64> {
    prior.validate()?;
    let m = Mixture::new(prior);
    Ok(theta.iter().map(|&t| m.eval(t).0).sum())
}

/// Elementwise `∂ log p / ∂theta`. For the mixture this is
/// `r (-θ/slab) + (1-r)(-θ/spike)` with `r` the slab responsibility.
pub fn grad_log_prior(prior: &Prior, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(log_prior_with_grad(prior, theta)?.1)
}

/// Log density and gradient in one pass.
pub fn log_prior_with_grad(prior: &Prior, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    prior.validate()?;
    Ok(match prior {
        Prior::Gaussian(p) => (
            log_prior_gaussian(p, theta)?,
            theta.iter().map(|t| -t / p.variance).collect(),
        ),
        Prior::SpikeSlab(p) => {
            let m = Mixture::new(p);
            let mut total = 0.0;
            let grad = theta
                .iter()
                .map(|&t| {
                    let (lp, r) = m.eval(t);
                    total += lp;
                    -t * (r / p.slab_variance + (1.0 - r) / p.spike_variance)
                })
                .collect();
            (total, grad)
        }
    })
}
