//! Stochastic optimization of the variational objective and of the
//! frequentist baseline network.
//!
//! Each VB step samples noise, forms `(W, S)`, evaluates the objective and
//! its gradient, and updates `(mu_w, rho_w)` with rate `gamma_w` and
//! `(mu_L, rho_L)` with rate `gamma_l`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::likelihood::sse;
use crate::netgrad::{self, Architecture, FlatParams};
use crate::objective::{eval_objective_averaged, Batch, ObjectiveEval, VbModel};
use crate::variational::VariationalState;
use crate::{Error, Matrix, Result, RngState};

/// Width of the moving average used for early stopping.
pub const SMOOTHING_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub steps: usize,
    pub gamma_w: f64,
    pub gamma_l: f64,
    pub num_mc_samples: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop once the smoothed objective has not improved for this many
    /// steps.
    pub patience: Option<usize>,
    /// Full batch when `None`.
    pub batch_size: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            gamma_w: 1e-3,
            gamma_l: 1e-3,
            num_mc_samples: 1,
            optimizer: OptimizerKind::default(),
            seed: 0,
            patience: None,
            batch_size: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_w >= 0.0 && self.gamma_l >= 0.0)
            || !self.gamma_w.is_finite()
            || !self.gamma_l.is_finite()
        {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        if self.num_mc_samples == 0 {
            return Err(Error::config("num_mc_samples must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::config("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Per-parameter-group optimizer state.
#[derive(Debug, Clone)]
enum GroupOptimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl GroupOptimizer {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => GroupOptimizer::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => GroupOptimizer::Adam {
                beta1,
                beta2,
                eps,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    fn step(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        match self {
            GroupOptimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            GroupOptimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Optimizer over a [`VariationalState`]: one group per parameter vector.
struct StateOptimizer {
    mu_w: GroupOptimizer,
    rho_w: GroupOptimizer,
    mu_s: GroupOptimizer,
    rho_s: GroupOptimizer,
}

impl StateOptimizer {
    fn new(kind: OptimizerKind, n_w: usize) -> Self {
        Self {
            mu_w: GroupOptimizer::new(kind, n_w),
            rho_w: GroupOptimizer::new(kind, n_w),
            mu_s: GroupOptimizer::new(kind, 1),
            rho_s: GroupOptimizer::new(kind, 1),
        }
    }

    fn apply(&mut self, cfg: &TrainerConfig, state: &mut VariationalState, eval: &ObjectiveEval) {
        let g = &eval.grad;
        self.mu_w.step(cfg.gamma_w, state.weights.mu_mut(), &g.d_mu_w);
        self.rho_w.step(cfg.gamma_w, state.weights.rho_mut(), &g.d_rho_w);
        if let (Some(post), Some(dm), Some(dr)) = (state.variance.as_mut(), g.d_mu_s, g.d_rho_s) {
            self.mu_s.step(cfg.gamma_l, post.mu_mut(), &[dm]);
            self.rho_s.step(cfg.gamma_l, post.rho_mut(), &[dr]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub f_value: f64,
    pub sampled_s: Option<f64>,
    pub grad_norm_w: f64,
    pub grad_norm_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Mean of `f` over the `window` records ending at index `end`
    /// (exclusive), or `None` if fewer are available.
    pub fn smoothed_f(&self, end: usize, window: usize) -> Option<f64> {
        if window == 0 || end < window || end > self.records.len() {
            return None;
        }
        let sum: f64 = self.records[end - window..end].iter().map(|r| r.f_value).sum();
        Some(sum / window as f64)
    }
}

/// Initial variance of S: half the target variance (floored away from 0).
pub fn default_initial_variance(data: &Dataset) -> f64 {
    (0.5 * data.target_variance()).max(1e-6)
}

/// The state [`fit_vb`] starts from for the given seed.
pub fn init_state(model: &VbModel, data: &Dataset, seed: u64) -> Result<VariationalState> {
    let mut rng = RngState::new(seed).child(0);
    VariationalState::init(&model.arch, model.mode(), default_initial_variance(data), &mut rng)
}

fn check_data(arch: &Architecture, data: &Dataset) -> Result<()> {
    if data.p() != arch.input_dim() || data.q() != arch.output_dim() {
        return Err(Error::shape(
            "training data",
            format!("{} -> {}", arch.input_dim(), arch.output_dim()),
            format!("{} -> {}", data.p(), data.q()),
        ));
    }
    Ok(())
}

/// Row subset for one step, or `None` for the full batch.
fn draw_batch(n: usize, batch_size: Option<usize>, rng: &mut RngState) -> Option<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => {
            let mut idx = rng.permutation(n);
            idx.truncate(b);
            Some(idx)
        }
        _ => None,
    }
}

/// Runs the variational optimization from [`init_state`].
pub fn fit_vb(model: &VbModel, data: &Dataset, cfg: &TrainerConfig) -> Result<(VariationalState, TrainLog)> {
    let state = init_state(model, data, cfg.seed)?;
    fit_vb_from(model, data, cfg, state)
}

/// Runs the variational optimization from a given state.
pub fn fit_vb_from(
    model: &VbModel,
    data: &Dataset,
    cfg: &TrainerConfig,
    mut state: VariationalState,
) -> Result<(VariationalState, TrainLog)> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    model.validate()?;
    check_data(&model.arch, data)?;

    let mut rng = RngState::new(cfg.seed).child(1);
    let mut opt = StateOptimizer::new(cfg.optimizer, state.weights.len());
    let mut log = TrainLog {
        records: Vec::with_capacity(cfg.steps),
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut best_at = 0;

    for step in 0..cfg.steps {
        let sub = draw_batch(data.n(), cfg.batch_size, &mut rng);
        let (bx, by);
        let batch = match &sub {
            Some(idx) => {
                bx = data.x.select_rows(idx);
                by = data.y.select_rows(idx);
                Batch::minibatch(&bx, &by, data.n())
            }
            None => Batch::full(&data.x, &data.y),
        };
        let eval = eval_objective_averaged(&state, model, batch, cfg.num_mc_samples, &mut rng)
            .map_err(|e| with_step(e, step))?;
        log.records.push(StepRecord {
            step,
            f_value: eval.f_value,
            sampled_s: eval.sampled_s,
            grad_norm_w: eval.grad.weight_norm(),
            grad_norm_s: eval.grad.variance_norm(),
        });
        opt.apply(cfg, &mut state, &eval);
        if !state.is_finite() {
            return Err(Error::Numerical(format!(
                "step {step}: variational parameters became non-finite"
            )));
        }

        if let Some(patience) = cfg.patience {
            if let Some(smooth) = log.smoothed_f(log.records.len(), SMOOTHING_WINDOW) {
                if smooth < best {
                    best = smooth;
                    best_at = step;
                } else if step - best_at >= patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((state, log))
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Point-estimate network and its training error.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentistFit {
    pub params: FlatParams,
    /// Mean squared error over all training targets.
    pub train_mse: f64,
}

pub fn mean_squared_error(y: &Matrix, yhat: &Matrix) -> f64 {
    sse(y, yhat) / y.data().len() as f64
}

/// Minimizes training MSE with the configured optimizer (rate `gamma_w`).
/// `steps = 0` returns the initialization.
pub fn fit_frequentist(arch: &Architecture, data: &Dataset, cfg: &TrainerConfig) -> Result<FrequentistFit> {
    cfg.validate()?;
    check_data(arch, data)?;
    let mut params = arch.init_params(&mut RngState::new(cfg.seed).child(0));
    let mut rng = RngState::new(cfg.seed).child(1);
    let mut opt = GroupOptimizer::new(cfg.optimizer, params.len());

    for step in 0..cfg.steps {
        let sub = draw_batch(data.n(), cfg.batch_size, &mut rng);
        let (x, y) = match &sub {
            Some(idx) => (data.x.select_rows(idx), data.y.select_rows(idx)),
            None => (data.x.clone(), data.y.clone()),
        };
        let count = y.data().len() as f64;
        let (_, grad, _) = netgrad::forward_backward(arch, &params, &x, |yhat| {
            let d = yhat
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| 2.0 * (a - b) / count)
                .collect();
            Ok((Matrix::new(y.rows(), y.cols(), d)?, ()))
        })?;
        opt.step(cfg.gamma_w, &mut params.0, &grad.0);
        if params.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "step {step}: network weights became non-finite"
            )));
        }
    }
    let yhat = netgrad::forward(arch, &params, &data.x)?;
    let train_mse = mean_squared_error(&data.y, &yhat);
    Ok(FrequentistFit { params, train_mse })
}
