//! Single-sample Monte-Carlo variational objective and its exact gradient.
//!
//! For noise `eps` the sampled parameters are `W = mu_w + eps_w ⊙ softplus(rho_w)`
//! and, with a learned variance, `S = mu_L + eps_L · softplus(rho_L)`. The
//! objective is
//!
//! ```text
//! f = log q(W) + log q(S) - c · log L(W, S | x, y) - log p(W) - log p(S)
//! ```
//!
//! where `c` rescales a mini-batch likelihood to the full data size (`c = 1`
//! for full-batch training). With a fixed variance the `S` terms vanish and
//! `L` uses `sigma0²`. One joint objective serves both parameter groups:
//! its partials with respect to `(mu_w, rho_w)` and `(mu_L, rho_L)` are the
//! two gradient sets of the alternating description.

use serde::{Deserialize, Serialize};

use crate::likelihood::{self, FixedVarianceLik, LearnedVarianceLik, Variance};
use crate::netgrad::{self, Architecture, FlatParams};
use crate::priors::{log_prior_gaussian, GaussianPrior, Prior};
use crate::variational::{Mode, VariationalState};
use crate::{Error, Matrix, Result, RngState};

/// Likelihood variance treatment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodSpec {
    /// VBNET-FIXED: known variance `sigma0²`.
    Fixed(FixedVarianceLik),
    /// VBNET-SVAR: variance `softplus(S)` with a Gaussian posterior on `S`.
    Learned,
}

/// Everything the objective needs besides data and variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct VbModel {
    pub arch: Architecture,
    pub weight_prior: Prior,
    /// Prior on the unconstrained `S`; ignored for a fixed variance.
    pub variance_prior: GaussianPrior,
    pub likelihood: LikelihoodSpec,
}

impl VbModel {
    pub fn mode(&self) -> Mode {
        match self.likelihood {
            LikelihoodSpec::Fixed(_) => Mode::Fixed,
            LikelihoodSpec::Learned => Mode::Svar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weight_prior.validate()?;
        if let LikelihoodSpec::Fixed(f) = self.likelihood {
            FixedVarianceLik::new(f.sigma0_sq)?;
        } else {
            self.variance_prior.validate()?;
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, state: &VariationalState) -> Result<()> {
        if state.mode() != self.mode() {
            return Err(Error::config(format!(
                "state is {:?} but model is {:?}",
                state.mode(),
                self.mode()
            )));
        }
        if state.weights.len() != self.arch.num_params() {
            return Err(Error::shape(
                "variational weights",
                self.arch.num_params(),
                state.weights.len(),
            ));
        }
        Ok(())
    }
}

/// A batch of observations and the factor applied to its log-likelihood.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Matrix,
    pub y: &'a Matrix,
    pub lik_scale: f64,
}

impl<'a> Batch<'a> {
    pub fn full(x: &'a Matrix, y: &'a Matrix) -> Self {
        Self { x, y, lik_scale: 1.0 }
    }

    /// Mini-batch drawn from `n_total` observations; the likelihood is
    /// scaled by `n_total / batch_size`, prior and entropy terms are not.
    pub fn minibatch(x: &'a Matrix, y: &'a Matrix, n_total: usize) -> Self {
        Self {
            x,
            y,
            lik_scale: n_total as f64 / x.rows() as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x.rows() == 0 {
            return Err(Error::config("empty batch"));
        }
        if self.x.rows() != self.y.rows() {
            return Err(Error::shape("batch rows", self.x.rows(), self.y.rows()));
        }
        Ok(())
    }
}

/// Standard-normal noise for one objective sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub eps_w: Vec<f64>,
    pub eps_s: Option<f64>,
}

impl Noise {
    /// Draws `eps_w` first, then `eps_L` in SVAR mode.
    pub fn draw(mode: Mode, num_weights: usize, rng: &mut RngState) -> Self {
        let eps_w = rng.sample_std_normal(num_weights);
        let eps_s = match mode {
            Mode::Svar => Some(rng.std_normal()),
            Mode::Fixed => None,
        };
        Self { eps_w, eps_s }
    }
}

/// Gradient shaped like [`VariationalState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrad {
    pub d_mu_w: Vec<f64>,
    pub d_rho_w: Vec<f64>,
    pub d_mu_s: Option<f64>,
    pub d_rho_s: Option<f64>,
}

impl StateGrad {
    /// Euclidean norm over the weight group.
    pub fn weight_norm(&self) -> f64 {
        self.d_mu_w
            .iter()
            .chain(&self.d_rho_w)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean norm over the variance group (0 when absent).
    pub fn variance_norm(&self) -> f64 {
        let a = self.d_mu_s.unwrap_or(0.0);
        let b = self.d_rho_s.unwrap_or(0.0);
        (a * a + b * b).sqrt()
    }

    /// All gradient entries in state order `(mu_w, rho_w, mu_L, rho_L)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.d_mu_w.clone();
        out.extend_from_slice(&self.d_rho_w);
        out.extend(self.d_mu_s);
        out.extend(self.d_rho_s);
        out
    }

    fn accumulate(&mut self, other: &StateGrad) {
        for (a, b) in self.d_mu_w.iter_mut().zip(&other.d_mu_w) {
            *a += b;
        }
        for (a, b) in self.d_rho_w.iter_mut().zip(&other.d_rho_w) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.d_mu_s.as_mut(), other.d_mu_s) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.d_rho_s.as_mut(), other.d_rho_s) {
            *a += b;
        }
    }

    fn scale(&mut self, c: f64) {
        self.d_mu_w.iter_mut().chain(&mut self.d_rho_w).for_each(|g| *g *= c);
        if let Some(g) = self.d_mu_s.as_mut() {
            *g *= c;
        }
        if let Some(g) = self.d_rho_s.as_mut() {
            *g *= c;
        }
    }
}

/// The three parts of `f`, with the `S` contributions folded into
/// `log_q` and `log_prior`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub log_q: f64,
    /// Scaled log-likelihood `c · log L`.
    pub log_lik: f64,
    pub log_prior: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub f_value: f64,
    pub terms: ObjectiveTerms,
    pub grad: StateGrad,
    pub sampled_w: FlatParams,
    pub sampled_s: Option<f64>,
}

/// Draws fresh noise from `rng` and evaluates the objective.
pub fn eval_objective(
    state: &VariationalState,
    model: &VbModel,
    batch: Batch<'_>,
    rng: &mut RngState,
) -> Result<ObjectiveEval> {
    model.check_state(state)?;
    let noise = Noise::draw(model.mode(), state.weights.len(), rng);
    eval_objective_with_noise(state, model, batch, &noise)
}

/// Objective value and gradient at explicit noise. Deterministic.
pub fn eval_objective_with_noise(
    state: &VariationalState,
    model: &VbModel,
    batch: Batch<'_>,
    noise: &Noise,
) -> Result<ObjectiveEval> {
    model.check_state(state)?;
    batch.validate()?;
    if batch.y.cols() != model.arch.output_dim() {
        return Err(Error::shape(
            "targets",
            model.arch.output_dim(),
            batch.y.cols(),
        ));
    }

    let draw = state.weights.draw(&noise.eps_w)?;
    let w = FlatParams(draw.theta.clone());
    let (variance, sampled_s, s_post) = match (&model.likelihood, &state.variance, noise.eps_s) {
        (LikelihoodSpec::Fixed(f), None, _) => (Variance::Fixed(*f), None, None),
        (LikelihoodSpec::Learned, Some(post), Some(e)) => {
            let s = post.reparam_sample(&[e])?[0];
            (Variance::Learned(LearnedVarianceLik { s }), Some(s), Some((post, e)))
        }
        _ => {
            return Err(Error::config(
                "noise does not match the likelihood mode",
            ))
        }
    };

    let c = batch.lik_scale;
    let (yhat, grad_w_lik, d_s_lik) = netgrad::forward_backward(&model.arch, &w, batch.x, |yhat| {
        let g = likelihood::grad_log_lik(&variance, batch.y, yhat)?;
        let mut up = g.d_yhat;
        // ∂f/∂ŷ = -c · ∂log L/∂ŷ
        up.data_mut().iter_mut().for_each(|v| *v *= -c);
        Ok((up, g.d_s))
    })?;

    let log_lik = c * likelihood::log_lik(&variance, batch.y, &yhat)?;
    let mut log_q = draw.log_q;
    let (mut log_prior, prior_grad) = model.weight_prior.log_density_with_grad(&w.0)?;

    let upstream_w: Vec<f64> = grad_w_lik
        .0
        .iter()
        .zip(&prior_grad)
        .map(|(gl, gp)| gl - gp)
        .collect();
    let (d_mu_w, d_rho_w) = state.weights.grad_at(&draw, &noise.eps_w, &upstream_w)?;

    let (d_mu_s, d_rho_s) = match (s_post, sampled_s) {
        (Some((post, e)), Some(s)) => {
            log_q += post.log_q(&[s])?;
            log_prior += log_prior_gaussian(&model.variance_prior, &[s])?;
            let d_prior = -s / model.variance_prior.variance;
            let upstream_s = -c * d_s_lik.expect("learned variance") - d_prior;
            let (dm, dr) = post.grad_log_terms(&[e], &[upstream_s])?;
            (Some(dm[0]), Some(dr[0]))
        }
        _ => (None, None),
    };

    let f_value = log_q - log_lik - log_prior;
    if !f_value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite objective (log q = {log_q}, log L = {log_lik}, log p = {log_prior})"
        )));
    }
    Ok(ObjectiveEval {
        f_value,
        terms: ObjectiveTerms {
            log_q,
            log_lik,
            log_prior,
        },
        grad: StateGrad {
            d_mu_w,
            d_rho_w,
            d_mu_s,
            d_rho_s,
        },
        sampled_w: w,
        sampled_s,
    })
}

/// Mean of `num_samples` independent single-sample evaluations, drawn
/// sequentially from `rng`. The reported sample `(W, S)` is the first one.
pub fn eval_objective_averaged(
    state: &VariationalState,
    model: &VbModel,
    batch: Batch<'_>,
    num_samples: usize,
    rng: &mut RngState,
) -> Result<ObjectiveEval> {
    if num_samples == 0 {
        return Err(Error::config("num_samples must be at least 1"));
    }
    let mut evals = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        evals.push(eval_objective(state, model, batch, rng)?);
    }
    Ok(average_evals(evals))
}

pub(crate) fn average_evals(evals: Vec<ObjectiveEval>) -> ObjectiveEval {
    let k = evals.len() as f64;
    let mut iter = evals.into_iter();
    let mut acc = iter.next().expect("at least one evaluation");
    for e in iter {
        acc.f_value += e.f_value;
        acc.terms.log_q += e.terms.log_q;
        acc.terms.log_lik += e.terms.log_lik;
        acc.terms.log_prior += e.terms.log_prior;
        acc.grad.accumulate(&e.grad);
    }
    if k > 1.0 {
        acc.f_value /= k;
        acc.terms.log_q /= k;
        acc.terms.log_lik /= k;
        acc.terms.log_prior /= k;
        acc.grad.scale(1.0 / k);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::softplus_inv;
    use crate::netgrad::Activation;
    use crate::priors::SpikeSlabPrior;
    use crate::variational::GaussianVariational;

    fn toy_data(rng: &mut RngState, n: usize, p: usize, q: usize) -> (Matrix, Matrix) {
        let x = Matrix::new(n, p, rng.sample_std_normal(n * p)).unwrap();
        let y = Matrix::new(n, q, rng.sample_std_normal(n * q)).unwrap();
        (x, y)
    }

    fn model(sizes: Vec<usize>, prior: Prior, lik: LikelihoodSpec) -> VbModel {
        VbModel {
            arch: Architecture::uniform(sizes, Activation::Tanh).unwrap(),
            weight_prior: prior,
            variance_prior: GaussianPrior::new(1.0).unwrap(),
            likelihood: lik,
        }
    }

    #[test]
    fn matched_distributions_cancel_at_mode() {
        // mu = 0, softplus(rho)² = prior variance, eps = 0: log q(0) = log p(0).
        let m = model(
            vec![1, 2, 1],
            Prior::Gaussian(GaussianPrior::new(1.0).unwrap()),
            LikelihoodSpec::Fixed(FixedVarianceLik::new(1.0).unwrap()),
        );
        let n = m.arch.num_params();
        let state = VariationalState::new(
            GaussianVariational::new(vec![0.0; n], vec![softplus_inv(1.0); n]).unwrap(),
            None,
        )
        .unwrap();
        let x = Matrix::column_vector(vec![0.5]);
        let y = Matrix::column_vector(vec![0.0]);
        let noise = Noise {
            eps_w: vec![0.0; n],
            eps_s: None,
        };
        let e = eval_objective_with_noise(&state, &m, Batch::full(&x, &y), &noise).unwrap();
        assert!((e.terms.log_q - e.terms.log_prior).abs() < 1e-12);
        assert!((e.f_value + e.terms.log_lik).abs() < 1e-12);
    }

    #[test]
    fn decomposition_is_reproducible_from_sample() {
        let mut rng = RngState::new(3);
        let m = model(
            vec![2, 3, 1],
            Prior::SpikeSlab(SpikeSlabPrior::default()),
            LikelihoodSpec::Learned,
        );
        let (x, y) = toy_data(&mut rng, 6, 2, 1);
        let state = VariationalState::init(&m.arch, Mode::Svar, 0.5, &mut rng).unwrap();
        let e = eval_objective(&state, &m, Batch::full(&x, &y), &mut rng).unwrap();
        let s = e.sampled_s.unwrap();
        let yhat = netgrad::forward(&m.arch, &e.sampled_w, &x).unwrap();
        let log_lik = likelihood::log_lik_learned(s, &y, &yhat).unwrap();
        let log_q = state.weights.log_q(&e.sampled_w.0).unwrap()
            + state.variance.as_ref().unwrap().log_q(&[s]).unwrap();
        let log_p = m.weight_prior.log_density(&e.sampled_w.0).unwrap()
            + log_prior_gaussian(&m.variance_prior, &[s]).unwrap();
        assert!((e.terms.log_lik - log_lik).abs() < 1e-12);
        assert!((e.terms.log_q - log_q).abs() < 1e-9);
        assert!((e.terms.log_prior - log_p).abs() < 1e-9);
        assert!((e.f_value - (log_q - log_lik - log_p)).abs() < 1e-9);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let mut rng = RngState::new(1);
        let m = model(vec![1, 2, 1], Prior::default(), LikelihoodSpec::Learned);
        let fixed_state = VariationalState::init(&m.arch, Mode::Fixed, 1.0, &mut rng).unwrap();
        let (x, y) = toy_data(&mut rng, 3, 1, 1);
        assert!(matches!(
            eval_objective(&fixed_state, &m, Batch::full(&x, &y), &mut rng),
            Err(Error::Config(_))
        ));
        let empty = Matrix::zeros(0, 1);
        let state = VariationalState::init(&m.arch, Mode::Svar, 1.0, &mut rng).unwrap();
        assert!(eval_objective(&state, &m, Batch::full(&empty, &empty), &mut rng).is_err());
    }

    #[test]
    fn fixed_and_svar_agree_at_pinned_variance() {
        let mut rng = RngState::new(77);
        let sigma0_sq = 0.37;
        let (x, y) = toy_data(&mut rng, 8, 1, 1);
        let fixed = model(
            vec![1, 4, 1],
            Prior::Gaussian(GaussianPrior::new(1.0).unwrap()),
            LikelihoodSpec::Fixed(FixedVarianceLik::new(sigma0_sq).unwrap()),
        );
        let svar = VbModel {
            likelihood: LikelihoodSpec::Learned,
            ..fixed.clone()
        };
        let fixed_state = VariationalState::init(&fixed.arch, Mode::Fixed, 1.0, &mut rng).unwrap();
        let mu_l = softplus_inv(sigma0_sq);
        let svar_state = VariationalState::new(
            fixed_state.weights.clone(),
            Some(GaussianVariational::scalar(mu_l, -50.0).unwrap()),
        )
        .unwrap();
        let seed = 5;
        let a = eval_objective(&fixed_state, &fixed, Batch::full(&x, &y), &mut RngState::new(seed)).unwrap();
        let b = eval_objective(&svar_state, &svar, Batch::full(&x, &y), &mut RngState::new(seed)).unwrap();
        assert_eq!(a.sampled_w, b.sampled_w);
        let s = b.sampled_s.unwrap();
        let s_post = svar_state.variance.as_ref().unwrap();
        let s_terms = s_post.log_q(&[s]).unwrap() - log_prior_gaussian(&svar.variance_prior, &[s]).unwrap();
        assert!((b.f_value - s_terms - a.f_value).abs() < 1e-8);
        for (ga, gb) in a.grad.flatten().iter().zip(b.grad.flatten()) {
            assert!((ga - gb).abs() < 1e-8);
        }
    }

    #[test]
    fn single_sample_average_is_identity() {
        let mut rng = RngState::new(10);
        let m = model(vec![1, 3, 1], Prior::default(), LikelihoodSpec::Learned);
        let (x, y) = toy_data(&mut rng, 5, 1, 1);
        let state = VariationalState::init(&m.arch, Mode::Svar, 1.0, &mut rng).unwrap();
        let a = eval_objective(&state, &m, Batch::full(&x, &y), &mut RngState::new(4)).unwrap();
        let b = eval_objective_averaged(&state, &m, Batch::full(&x, &y), 1, &mut RngState::new(4)).unwrap();
        assert_eq!(a.f_value, b.f_value);
        assert_eq!(a.grad, b.grad);
        assert!(eval_objective_averaged(&state, &m, Batch::full(&x, &y), 0, &mut rng).is_err());
    }

    #[test]
    fn averaging_identical_draws_matches_single() {
        let mut rng = RngState::new(12);
        let m = model(vec![1, 3, 1], Prior::default(), LikelihoodSpec::Learned);
        let (x, y) = toy_data(&mut rng, 5, 1, 1);
        let state = VariationalState::init(&m.arch, Mode::Svar, 1.0, &mut rng).unwrap();
        let single = eval_objective(&state, &m, Batch::full(&x, &y), &mut RngState::new(9)).unwrap();
        let repeats: Vec<_> = (0..4)
            .map(|_| eval_objective(&state, &m, Batch::full(&x, &y), &mut RngState::new(9)).unwrap())
            .collect();
        let avg = average_evals(repeats);
        assert!((avg.f_value - single.f_value).abs() < 1e-12 * single.f_value.abs().max(1.0));
        for (a, b) in avg.grad.flatten().iter().zip(single.grad.flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn more_samples_reduce_gradient_variance() {
        let mut rng = RngState::new(21);
        let m = model(vec![1, 4, 1], Prior::default(), LikelihoodSpec::Learned);
        let (x, y) = toy_data(&mut rng, 8, 1, 1);
        let mut state = VariationalState::init(&m.arch, Mode::Svar, 1.0, &mut rng).unwrap();
        // Wider posterior so Monte-Carlo noise is visible.
        state.weights.rho_mut().iter_mut().for_each(|r| *r = -0.5);
        let var_of = |k: usize, seed: u64| {
            let mut rng = RngState::new(seed);
            let draws: Vec<Vec<f64>> = (0..200)
                .map(|_| {
                    eval_objective_averaged(&state, &m, Batch::full(&x, &y), k, &mut rng)
                        .unwrap()
                        .grad
                        .d_mu_w
                })
                .collect();
            let n = draws.len() as f64;
            (0..draws[0].len())
                .map(|j| {
                    let mean = draws.iter().map(|d| d[j]).sum::<f64>() / n;
                    draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .sum::<f64>()
        };
        assert!(var_of(8, 1) < var_of(1, 2));
    }

    #[test]
    fn minibatch_scaling_rescales_likelihood_only() {
        let mut rng = RngState::new(2);
        let m = model(vec![1, 3, 1], Prior::default(), LikelihoodSpec::Learned);
        let (x, y) = toy_data(&mut rng, 4, 1, 1);
        let state = VariationalState::init(&m.arch, Mode::Svar, 1.0, &mut rng).unwrap();
        let full = eval_objective(&state, &m, Batch::full(&x, &y), &mut RngState::new(1)).unwrap();
        let scaled = eval_objective(&state, &m, Batch::minibatch(&x, &y, 12), &mut RngState::new(1)).unwrap();
        assert!((scaled.terms.log_lik - 3.0 * full.terms.log_lik).abs() < 1e-9);
        assert_eq!(scaled.terms.log_q, full.terms.log_q);
        assert_eq!(scaled.terms.log_prior, full.terms.log_prior);
    }
}
