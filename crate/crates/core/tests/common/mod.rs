//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use vbnet::data::fit_pca;
use vbnet::netgrad::{Activation, Architecture};
use vbnet::objective::{eval_objective_with_noise, Batch, LikelihoodSpec, Noise, VbModel};
use vbnet::likelihood::FixedVarianceLik;
use vbnet::priors::{log_prior_gaussian, log_prior_spike_slab, GaussianPrior, Prior, SpikeSlabPrior};
use vbnet::variational::{GaussianVariational, Mode, VariationalState};
use vbnet::{Matrix, RngState};

pub fn model(sizes: Vec<usize>, prior: Prior, mode: Mode) -> VbModel {
    VbModel {
        arch: Architecture::uniform(sizes, Activation::Tanh).unwrap(),
        weight_prior: prior,
        variance_prior: GaussianPrior::new(1.5).unwrap(),
        likelihood: match mode {
            Mode::Fixed => LikelihoodSpec::Fixed(FixedVarianceLik::new(0.3).unwrap()),
            Mode::Svar => LikelihoodSpec::Learned,
        },
    }
}

/// Random state with `rho` spread over a realistic range.
pub fn random_state(model: &VbModel, rng: &mut RngState) -> VariationalState {
    let mu = model.arch.init_params(rng).0;
    let rho = (0..mu.len()).map(|_| rng.uniform(-4.0, 0.0)).collect();
    let variance = match model.likelihood {
        LikelihoodSpec::Learned => Some(GaussianVariational::scalar(rng.uniform(-1.0, 1.0), rng.uniform(-3.0, -1.0)).unwrap()),
        LikelihoodSpec::Fixed(_) => None,
    };
    VariationalState::new(GaussianVariational::new(mu, rho).unwrap(), variance).unwrap()
}

fn with_param(state: &VariationalState, idx: usize, delta: f64) -> VariationalState {
    let n = state.weights.len();
    let mut mu = state.weights.mu().to_vec();
    let mut rho = state.weights.rho().to_vec();
    let mut var = state.variance.clone();
    match idx {
        i if i < n => mu[i] += delta,
        i if i < 2 * n => rho[i - n] += delta,
        i => {
            let v = var.as_ref().unwrap();
            let (mut m, mut r) = (v.mu()[0], v.rho()[0]);
            if i == 2 * n {
                m += delta;
            } else {
                r += delta;
            }
            var = Some(GaussianVariational::scalar(m, r).unwrap());
        }
    }
    VariationalState::new(GaussianVariational::new(mu, rho).unwrap(), var).unwrap()
}

/// Max elementwise relative error between the analytic objective gradient
/// at fixed noise and central differences with step `h` over every
/// variational parameter. Denominators are floored at 1e-8.
pub fn objective_fd_error(sizes: Vec<usize>, prior: Prior, mode: Mode, seed: u64, h: f64) -> f64 {
    let m = model(sizes.clone(), prior, mode);
    let mut rng = RngState::new(seed);
    let state = random_state(&m, &mut rng);
    let n_rows = 8;
    let p = sizes[0];
    let q = *sizes.last().unwrap();
    let x = Matrix::new(n_rows, p, rng.sample_std_normal(n_rows * p)).unwrap();
    let y = Matrix::new(n_rows, q, rng.sample_std_normal(n_rows * q)).unwrap();
    let batch = Batch::full(&x, &y);
    let noise = Noise::draw(mode, state.weights.len(), &mut rng);
    let eval = eval_objective_with_noise(&state, &m, batch, &noise).unwrap();
    let analytic = eval.grad.flatten();
    let f = |s: &VariationalState| eval_objective_with_noise(s, &m, batch, &noise).unwrap().f_value;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let fd = (f(&with_param(&state, i, h)) - f(&with_param(&state, i, -h))) / (2.0 * h);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Cyclic Jacobi eigenvalue algorithm for a dense symmetric matrix.
/// Returns eigenvalues (unsorted) and eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance (denominator `n - 1`) by explicit loops.
pub fn covariance(x: &Matrix) -> Vec<Vec<f64>> {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for i in 0..n {
                s += (x.get(i, a) - means[a]) * (x.get(i, b) - means[b]);
            }
            c[a][b] = s / (n - 1) as f64;
            c[b][a] = c[a][b];
        }
    }
    c
}

/// `(spectrum error, orthonormality error, direction error)` of Gram-path
/// PCA against the Jacobi oracle on the covariance of a random `n × p`
/// matrix, over the `min(n - 1, p)` leading components.
pub fn pca_oracle_errors(n: usize, p: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = RngState::new(seed);
    let x = Matrix::new(n, p, rng.sample_std_normal(n * p)).unwrap();
    let k = (n - 1).min(p);
    let pca = fit_pca(&x, k).unwrap();
    let (vals, vecs) = jacobi_eigen(&covariance(&x));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));

    let mut spec = 0.0f64;
    let mut dir = 0.0f64;
    for j in 0..k {
        let o = order[j];
        spec = spec.max((pca.explained_variance[j] - vals[o]).abs());
        let comp = pca.components.column(j);
        let dot: f64 = comp.iter().zip(&vecs[o]).map(|(a, b)| a * b).sum();
        dir = dir.max((dot.abs() - 1.0).abs());
    }
    let mut ortho = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let ca = pca.components.column(a);
            let cb = pca.components.column(b);
            let d: f64 = ca.iter().zip(&cb).map(|(u, v)| u * v).sum();
            ortho = ortho.max((d - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    (spec, ortho, dir)
}

/// Worst normalized mean deviation `|mean - mu| / (sd / sqrt(N))` and worst
/// relative SD error over the coordinates of `draws` reparameterized
/// samples.
pub fn reparam_moment_errors(mu: &[f64], rho: &[f64], draws: usize, seed: u64) -> (f64, f64) {
    let q = GaussianVariational::new(mu.to_vec(), rho.to_vec()).unwrap();
    let d = mu.len();
    let mut rng = RngState::new(seed);
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut eps = vec![0.0; d];
    for _ in 0..draws {
        rng.fill_std_normal(&mut eps);
        for (j, t) in q.reparam_sample(&eps).unwrap().into_iter().enumerate() {
            sum[j] += t;
            sq[j] += t * t;
        }
    }
    let scales = q.scales();
    let nf = draws as f64;
    let mut mean_dev = 0.0f64;
    let mut sd_err = 0.0f64;
    for j in 0..d {
        let mean = sum[j] / nf;
        let var = (sq[j] - nf * mean * mean) / (nf - 1.0);
        mean_dev = mean_dev.max((mean - mu[j]).abs() / (scales[j] / nf.sqrt()));
        sd_err = sd_err.max((var.sqrt() - scales[j]).abs() / scales[j]);
    }
    (mean_dev, sd_err)
}

/// Worst absolute gap between degenerate (π = 1 or 0) mixtures and the
/// matching Gaussian log density over `points` random coordinates.
pub fn spike_slab_degeneracy_gap(points: usize, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let (slab, spike) = (2.0, 0.05);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let t = 4.0 * rng.std_normal();
        let one = log_prior_spike_slab(&SpikeSlabPrior::new(slab, spike, 1.0).unwrap(), &[t]).unwrap();
        let zero = log_prior_spike_slab(&SpikeSlabPrior::new(slab, spike, 0.0).unwrap(), &[t]).unwrap();
        let g_slab = log_prior_gaussian(&GaussianPrior::new(slab).unwrap(), &[t]).unwrap();
        let g_spike = log_prior_gaussian(&GaussianPrior::new(spike).unwrap(), &[t]).unwrap();
        worst = worst.max((one - g_slab).abs()).max((zero - g_spike).abs());
    }
    worst
}

pub fn priors_under_test() -> [(&'static str, Prior); 2] {
    [
        ("gaussian", Prior::Gaussian(GaussianPrior::new(1.0).unwrap())),
        ("spike_slab", Prior::SpikeSlab(SpikeSlabPrior::new(1.0, 0.01, 0.5).unwrap())),
    ]
}
