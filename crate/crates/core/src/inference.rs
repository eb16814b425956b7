//! Posterior-predictive sampling, prediction intervals and the held-out
//! metrics (MSPE and interval coverage).

use serde::{Deserialize, Serialize};

use crate::ndcore::softplus;
use crate::netgrad::{self, FlatParams};
use crate::objective::{LikelihoodSpec, Noise, VbModel};
use crate::variational::VariationalState;
use crate::{Error, Matrix, Result, RngState};

pub const DEFAULT_NUM_DRAWS: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub num_draws: usize,
    /// Nominal interval coverage.
    pub level: f64,
    /// Add likelihood noise to each draw (prediction intervals). When false
    /// the intervals are credible bands for the regression function.
    pub include_noise: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            num_draws: DEFAULT_NUM_DRAWS,
            level: DEFAULT_LEVEL,
            include_noise: true,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_draws < 2 {
            return Err(Error::config(format!(
                "num_draws must be at least 2, got {}",
                self.num_draws
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Pointwise predictive mean and interval, each `m × q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: Matrix,
    pub lower: Matrix,
    pub upper: Matrix,
    pub level: f64,
    pub num_draws: usize,
}

/// Raw predictive draws: `draws[t]` is the `m × q` output of draw `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    /// Network outputs `φ(x; W_t)`.
    pub fitted: Vec<Matrix>,
    /// `fitted` plus likelihood noise, if requested.
    pub noisy: Option<Vec<Matrix>>,
}

/// Samples `W_t` (and `S_t` with a learned variance) from the variational
/// posterior and pushes `x_new` through the network.
pub fn sample_predictive(
    state: &VariationalState,
    model: &VbModel,
    x_new: &Matrix,
    num_draws: usize,
    include_noise: bool,
    rng: &mut RngState,
) -> Result<PredictiveDraws> {
    model.check_state(state)?;
    if x_new.cols() != model.arch.input_dim() {
        return Err(Error::shape("predict input columns", model.arch.input_dim(), x_new.cols()));
    }
    let mut fitted = Vec::with_capacity(num_draws);
    let mut noisy = include_noise.then(|| Vec::with_capacity(num_draws));
    for _ in 0..num_draws {
        let noise = Noise::draw(state.mode(), state.weights.len(), rng);
        let w = FlatParams(state.weights.reparam_sample(&noise.eps_w)?);
        let variance = match (&model.likelihood, &state.variance, noise.eps_s) {
            (LikelihoodSpec::Fixed(f), _, _) => f.sigma0_sq,
            (LikelihoodSpec::Learned, Some(post), Some(e)) => softplus(post.reparam_sample(&[e])?[0]),
            _ => unreachable!("state mode checked above"),
        };
        let yhat = netgrad::forward(&model.arch, &w, x_new)?;
        if let Some(noisy) = noisy.as_mut() {
            let sd = variance.sqrt();
            let mut y = yhat.clone();
            for v in y.data_mut() {
                *v += sd * rng.std_normal();
            }
            noisy.push(y);
        }
        fitted.push(yhat);
    }
    Ok(PredictiveDraws { fitted, noisy })
}

/// Predictive mean (average of `φ(x; W_t)`) and empirical equal-tailed
/// intervals at `cfg.level`.
pub fn predict(
    state: &VariationalState,
    model: &VbModel,
    x_new: &Matrix,
    cfg: &PredictConfig,
    rng: &mut RngState,
) -> Result<PredictiveSummary> {
    cfg.validate()?;
    let draws = sample_predictive(state, model, x_new, cfg.num_draws, cfg.include_noise, rng)?;
    let spread = draws.noisy.as_ref().unwrap_or(&draws.fitted);
    summarize_draws(&draws.fitted, spread, cfg.level)
}

/// Mean of `fitted` and `(1 ∓ level)/2` quantiles of `spread`, pointwise.
pub fn summarize_draws(fitted: &[Matrix], spread: &[Matrix], level: f64) -> Result<PredictiveSummary> {
    let t = fitted.len();
    if t < 2 || spread.len() != t {
        return Err(Error::config("need at least 2 matching predictive draws"));
    }
    let (rows, cols) = fitted[0].shape();
    let cells = rows * cols;
    let mut mean = vec![0.0; cells];
    for f in fitted {
        for (m, v) in mean.iter_mut().zip(f.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);

    let (lo_p, hi_p) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut lower = vec![0.0; cells];
    let mut upper = vec![0.0; cells];
    let mut column = vec![0.0; t];
    for i in 0..cells {
        for (c, s) in column.iter_mut().zip(spread) {
            *c = s.data()[i];
        }
        column.sort_by(f64::total_cmp);
        lower[i] = quantile_sorted(&column, lo_p);
        upper[i] = quantile_sorted(&column, hi_p);
    }
    Ok(PredictiveSummary {
        mean: Matrix::new(rows, cols, mean)?,
        lower: Matrix::new(rows, cols, lower)?,
        upper: Matrix::new(rows, cols, upper)?,
        level,
        num_draws: t,
    })
}

/// Order-statistic quantile with linear interpolation between
/// `sorted[floor(h)]` and `sorted[ceil(h)]`, `h = (n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// [`quantile_sorted`] on an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

/// `(1/m) Σ (y_i - ŷ_i)²`.
pub fn mspe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("mspe", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::config("mspe of an empty sample"));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Fraction of `i` with `lower_i ≤ y_i ≤ upper_i`.
pub fn coverage(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_lengths("coverage", y.len(), lower.len())?;
    check_lengths("coverage", y.len(), upper.len())?;
    if y.is_empty() {
        return Err(Error::config("coverage of an empty sample"));
    }
    let hit = y
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(v, (l, u))| *l <= *v && *v <= *u)
        .count();
    Ok(hit as f64 / y.len() as f64)
}
