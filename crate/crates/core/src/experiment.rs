//! Replicated experiments comparing VBNET-SVAR, VBNET-FIXED and a
//! frequentist network (NNET), plus result files and summaries.
//!
//! Each replication derives its own seed, builds standardized train/test
//! data, fits NNET first (its training MSE calibrates the fixed variance
//! `sigma0²`), fits the requested VB models and scores their predictions on
//! the original target scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    fit_pca, gen_curve, gen_sparse_surrogate, load_delimited, split, write_delimited, ColumnScaler, CurveNoise,
    Dataset, Standardizer,
};
use crate::inference::{self, coverage, mspe, quantile, PredictConfig};
use crate::likelihood::FixedVarianceLik;
use crate::ndcore::derive_seed;
use crate::netgrad::{self, Activation, Architecture};
use crate::objective::{LikelihoodSpec, VbModel};
use crate::priors::{GaussianPrior, Prior, SpikeSlabPrior};
use crate::trainer::{fit_frequentist, fit_vb, TrainerConfig};
use crate::{Error, Matrix, Result, RngState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Curve,
    Riboflavin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Leading principal components of the genes as inputs.
    Pca,
    /// All genes as inputs with a spike-and-slab weight prior.
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svar,
    Fixed,
    Nnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svar => "svar",
            ModelKind::Fixed => "fixed",
            ModelKind::Nnet => "nnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svar" => Ok(ModelKind::Svar),
            "fixed" => Ok(ModelKind::Fixed),
            "nnet" => Ok(ModelKind::Nnet),
            other => Err(Error::config(format!("unknown model `{other}` (expected svar, fixed or nnet)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub weight: Prior,
    /// Prior on the unconstrained variance parameter `S`.
    pub variance: GaussianPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub train_support: (f64, f64),
    pub test_support: (f64, f64),
    pub noise: CurveNoise,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            n_train: 800,
            n_test: 200,
            train_support: (-0.1, 0.6),
            test_support: (-0.25, 0.85),
            noise: CurveNoise::default(),
        }
    }
}

/// Synthetic stand-in used when no riboflavin file is configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n: usize,
    pub p: usize,
    pub active: usize,
    pub noise_sd: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n: 71,
            p: 500,
            active: 10,
            noise_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiboflavinConfig {
    /// Headered delimited file; the surrogate is used when unset.
    pub path: Option<PathBuf>,
    pub target: String,
    pub delimiter: char,
    pub n_train: usize,
    pub pca_components: usize,
    /// Floor of the fixed variance as a fraction of the train target
    /// variance.
    pub sigma0_floor_fraction: f64,
    pub surrogate: SurrogateConfig,
}

impl Default for RiboflavinConfig {
    fn default() -> Self {
        Self {
            path: None,
            target: "y".into(),
            delimiter: ',',
            n_train: 56,
            pca_components: 25,
            sigma0_floor_fraction: 0.2,
            surrogate: SurrogateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub models: Vec<ModelKind>,
    pub replications: usize,
    pub seed: u64,
    /// Concurrent replications; all available threads when unset. Not part
    /// of the recorded snapshot.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    /// Output directory; not part of the recorded snapshot.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub network: NetworkConfig,
    pub priors: PriorConfig,
    /// VB training.
    pub trainer: TrainerConfig,
    /// NNET training.
    pub frequentist: TrainerConfig,
    pub predict: PredictConfig,
    pub curve: CurveConfig,
    pub riboflavin: RiboflavinConfig,
}

impl ExperimentConfig {
    /// Declared defaults for one experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let (hidden, steps, scenario) = match experiment {
            Experiment::Curve => (vec![64, 64], 5000, None),
            Experiment::Riboflavin => (vec![128, 64], 3000, Some(Scenario::Pca)),
        };
        let trainer = TrainerConfig {
            steps,
            ..TrainerConfig::default()
        };
        Self {
            experiment,
            scenario,
            models: vec![ModelKind::Svar, ModelKind::Fixed, ModelKind::Nnet],
            replications: 10,
            seed: 2024,
            workers: None,
            out_dir: None,
            network: NetworkConfig {
                hidden,
                activation: Activation::Relu,
            },
            priors: PriorConfig {
                weight: Prior::default(),
                variance: GaussianPrior::default(),
            },
            frequentist: trainer.clone(),
            trainer,
            predict: PredictConfig::default(),
            curve: CurveConfig::default(),
            riboflavin: RiboflavinConfig::default(),
        }
        .resolved()
    }

    /// Parses a TOML document layered over [`ExperimentConfig::defaults`]
    /// for its `experiment` key (curve when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let experiment = match table.get("experiment") {
            None => Experiment::Curve,
            Some(v) => v.clone().try_into().map_err(|e| Error::config(format!("experiment: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::defaults(experiment)).map_err(|e| Error::config(e.to_string()))?;
        merge_table(&mut merged, table);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::config(e.to_string()))?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Applies scenario-implied settings: the dropout scenario always uses a
    /// spike-and-slab weight prior.
    fn resolved(mut self) -> Self {
        if self.scenario == Some(Scenario::Dropout) {
            if let Prior::Gaussian(_) = self.priors.weight {
                self.priors.weight = Prior::SpikeSlab(SpikeSlabPrior::default());
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.models.is_empty() {
            return Err(Error::config("select at least one model"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers must be at least 1"));
        }
        match (self.experiment, self.scenario) {
            (Experiment::Curve, Some(_)) => {
                return Err(Error::config("scenario applies only to the riboflavin experiment"))
            }
            (Experiment::Riboflavin, None) => {
                return Err(Error::config("riboflavin experiment needs a scenario (pca or dropout)"))
            }
            _ => {}
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::config("network needs at least one non-empty hidden layer"));
        }
        self.priors.weight.validate()?;
        self.priors.variance.validate()?;
        self.trainer.validate()?;
        if self.trainer.steps == 0 {
            return Err(Error::config("trainer.steps must be at least 1"));
        }
        self.frequentist.validate()?;
        self.predict.validate()?;
        if self.experiment == Experiment::Riboflavin {
            let r = &self.riboflavin;
            if !r.delimiter.is_ascii() {
                return Err(Error::config("delimiter must be a single ASCII character"));
            }
            if r.pca_components == 0 {
                return Err(Error::config("pca_components must be at least 1"));
            }
            if !(r.sigma0_floor_fraction >= 0.0) {
                return Err(Error::config("sigma0_floor_fraction must be non-negative"));
            }
        } else if self.curve.n_train < 2 || self.curve.n_test == 0 {
            return Err(Error::config("curve needs n_train >= 2 and n_test >= 1"));
        }
        Ok(())
    }

    fn label(&self) -> String {
        match self.scenario {
            Some(Scenario::Pca) => "riboflavin-pca".into(),
            Some(Scenario::Dropout) => "riboflavin-dropout".into(),
            None => "curve".into(),
        }
    }
}

/// Values that take precedence over a configuration file, one per
/// command-line flag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub experiment: Option<Experiment>,
    pub scenario: Option<Scenario>,
    pub models: Option<Vec<ModelKind>>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl ConfigOverrides {
    fn apply(&self, table: &mut toml::Table) -> Result<()> {
        fn set<T: Serialize>(table: &mut toml::Table, key: &str, value: &Option<T>) -> Result<()> {
            if let Some(v) = value {
                let v = toml::Value::try_from(v).map_err(|e| Error::config(format!("{key}: {e}")))?;
                table.insert(key.into(), v);
            }
            Ok(())
        }
        set(table, "experiment", &self.experiment)?;
        set(table, "scenario", &self.scenario)?;
        set(table, "models", &self.models)?;
        set(table, "replications", &self.replications)?;
        if let Some(seed) = self.seed {
            let seed = i64::try_from(seed).map_err(|_| Error::config("seed must fit in a signed 64-bit integer"))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        set(table, "workers", &self.workers)?;
        set(table, "out_dir", &self.out_dir)?;
        if let Some(path) = &self.data {
            let mut ribo = toml::Table::new();
            set(&mut ribo, "path", &Some(path))?;
            merge_table(table, toml::Table::from_iter([("riboflavin".to_string(), toml::Value::Table(ribo))]));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any) and applies `overrides` on top.
    pub fn load_with(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        overrides.apply(&mut table)?;
        Self::from_table(table)
    }
}

/// Recursive overlay of `over` onto `base`. A table with a different
/// `kind` tag replaces the base table instead of merging into it.
fn merge_table(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => {
                merge_table(b, o)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// One test point of a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    /// Row of the test point in its source dataset.
    pub row: usize,
    /// Input value for one-dimensional inputs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x: Option<f64>,
    pub y: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upper: Option<f64>,
}

/// Test-set outcome of one model in one replication. Targets and
/// predictions are on the original scale; variances are in standardized
/// target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub replication: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub num_inputs: usize,
    pub mspe: f64,
    pub coverage: Option<f64>,
    /// Coverage restricted to test inputs inside the training support.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coverage_in_support: Option<f64>,
    pub mean_half_width: Option<f64>,
    /// `sigma0²` calibrated from NNET in this replication.
    pub calibrated_sigma0_sq: f64,
    /// `softplus(mu_L)` after training (SVAR only).
    pub learned_variance: Option<f64>,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub replication: usize,
    pub model: ModelKind,
    pub seconds: f64,
}

/// Everything written to `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub records: Vec<ResultRecord>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: ResultsFile,
    /// Wall-clock fit times, kept apart from the reproducible results.
    pub timings: Vec<Timing>,
}

/// Standardized train/test data for one replication.
struct Prepared {
    train: Dataset,
    test_x: Matrix,
    test_y: Vec<f64>,
    y_scaler: ColumnScaler,
    test_rows: Vec<usize>,
    test_input: Option<Vec<f64>>,
    in_support: Option<Vec<bool>>,
    train_target_variance: f64,
}

fn prepare_curve(cfg: &ExperimentConfig, rng: &mut RngState) -> Result<Prepared> {
    let c = &cfg.curve;
    let train_raw = gen_curve(c.n_train, c.train_support, c.noise, rng)?;
    let test_raw = gen_curve(c.n_test, c.test_support, c.noise, rng)?;
    let scaler = Standardizer::fit(&train_raw);
    let train = scaler.apply(&train_raw)?;
    let test = scaler.apply(&test_raw)?;
    let xs = test_raw.x.column(0);
    let (a, b) = c.train_support;
    Ok(Prepared {
        train_target_variance: train.target_variance(),
        train,
        test_x: test.x,
        test_y: test_raw.y.column(0),
        y_scaler: scaler.y,
        test_rows: (0..c.n_test).collect(),
        in_support: Some(xs.iter().map(|&x| a <= x && x <= b).collect()),
        test_input: Some(xs),
    })
}

fn prepare_riboflavin(cfg: &ExperimentConfig, full: &Dataset, rng: &mut RngState) -> Result<Prepared> {
    let r = &cfg.riboflavin;
    let n = full.n();
    if r.n_train == 0 || r.n_train >= n {
        return Err(Error::config(format!("n_train must lie in [1, {}), got {}", n, r.n_train)));
    }
    let mut idx = rng.permutation(n);
    let test_rows = idx.split_off(r.n_train);
    let train_raw = full.select(&idx);
    let test_raw = full.select(&test_rows);
    let scaler = Standardizer::fit(&train_raw);
    let mut train = scaler.apply(&train_raw)?;
    let mut test_x = scaler.x.apply(&test_raw.x)?;
    if cfg.scenario == Some(Scenario::Pca) {
        let pca = fit_pca(&train.x, r.pca_components)?;
        let train_scores = pca.transform(&train.x)?;
        let score_scaler = ColumnScaler::fit(&train_scores);
        test_x = score_scaler.apply(&pca.transform(&test_x)?)?;
        train = train.with_inputs(score_scaler.apply(&train_scores)?)?;
    }
    Ok(Prepared {
        train_target_variance: train.target_variance(),
        train,
        test_x,
        test_y: test_raw.y.column(0),
        y_scaler: scaler.y,
        test_rows,
        test_input: None,
        in_support: None,
    })
}

/// The riboflavin table, or the configured surrogate when no path is set.
pub fn load_riboflavin(cfg: &ExperimentConfig) -> Result<Dataset> {
    let r = &cfg.riboflavin;
    let data = match &r.path {
        Some(path) => load_delimited(path, &r.target, r.delimiter as u8)?,
        None => {
            let s = r.surrogate;
            let mut rng = RngState::new(derive_seed(cfg.seed, u64::MAX));
            gen_sparse_surrogate(s.n, s.p, s.active, s.noise_sd, &mut rng)?
        }
    };
    if data.q() != 1 {
        return Err(Error::Data("expected a single target column".into()));
    }
    Ok(data)
}

fn architecture(cfg: &ExperimentConfig, p: usize) -> Result<Architecture> {
    let mut sizes = Vec::with_capacity(cfg.network.hidden.len() + 2);
    sizes.push(p);
    sizes.extend(&cfg.network.hidden);
    sizes.push(1);
    Architecture::uniform(sizes, cfg.network.activation)
}

/// `sigma0²` from the NNET train MSE: the MSE itself for the curve,
/// `max(fraction · var(y_train), MSE)` for riboflavin.
pub fn calibrate_sigma0_sq(cfg: &ExperimentConfig, nnet_train_mse: f64, train_target_variance: f64) -> f64 {
    match cfg.experiment {
        Experiment::Curve => nnet_train_mse,
        Experiment::Riboflavin => (cfg.riboflavin.sigma0_floor_fraction * train_target_variance).max(nnet_train_mse),
    }
}

fn to_original(scaler: &ColumnScaler, m: &Matrix) -> Result<Vec<f64>> {
    Ok(scaler.invert(m)?.column(0))
}

fn subset(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect()
}

fn run_replication(
    cfg: &ExperimentConfig,
    replication: usize,
    riboflavin: Option<&Dataset>,
) -> Result<(Vec<ResultRecord>, Vec<Timing>)> {
    let rep_seed = derive_seed(cfg.seed, replication as u64);
    let mut data_rng = RngState::new(rep_seed).child(0);
    let prep = match riboflavin {
        Some(full) => prepare_riboflavin(cfg, full, &mut data_rng)?,
        None => prepare_curve(cfg, &mut data_rng)?,
    };
    let fit_seed = derive_seed(rep_seed, 1);
    let arch = architecture(cfg, prep.train.p())?;
    let mut records = Vec::new();
    let mut timings = Vec::new();

    let record = |model, mean: Vec<f64>, bounds: Option<(Vec<f64>, Vec<f64>)>, sigma0_sq, learned| {
        let y = &prep.test_y;
        let (cov, cov_in, half) = match &bounds {
            Some((lo, hi)) => {
                let cov_in = match &prep.in_support {
                    Some(mask) => Some(coverage(&subset(y, mask), &subset(lo, mask), &subset(hi, mask))?),
                    None => None,
                };
                let half = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).sum::<f64>() / lo.len() as f64;
                (Some(coverage(y, lo, hi)?), cov_in, Some(half))
            }
            None => (None, None, None),
        };
        let points = (0..y.len())
            .map(|i| PointRecord {
                row: prep.test_rows[i],
                x: prep.test_input.as_ref().map(|v| v[i]),
                y: y[i],
                mean: mean[i],
                lower: bounds.as_ref().map(|b| b.0[i]),
                upper: bounds.as_ref().map(|b| b.1[i]),
            })
            .collect();
        Ok::<_, Error>(ResultRecord {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.label(),
            replication,
            model,
            seed: rep_seed,
            num_inputs: arch.input_dim(),
            mspe: mspe(y, &mean)?,
            coverage: cov,
            coverage_in_support: cov_in,
            mean_half_width: half,
            calibrated_sigma0_sq: sigma0_sq,
            learned_variance: learned,
            points,
        })
    };

    let freq_cfg = TrainerConfig {
        seed: fit_seed,
        ..cfg.frequentist.clone()
    };
    let start = Instant::now();
    let nnet = fit_frequentist(&arch, &prep.train, &freq_cfg)?;
    let nnet_seconds = start.elapsed().as_secs_f64();
    let sigma0_sq = calibrate_sigma0_sq(cfg, nnet.train_mse, prep.train_target_variance);
    if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
        return Err(Error::Numerical(format!("calibrated sigma0² is {sigma0_sq}")));
    }

    for &model in &cfg.models {
        let start = Instant::now();
        match model {
            ModelKind::Nnet => {
                let yhat = netgrad::forward(&arch, &nnet.params, &prep.test_x)?;
                let mean = to_original(&prep.y_scaler, &yhat)?;
                records.push(record(model, mean, None, sigma0_sq, None)?);
                timings.push(Timing {
                    replication,
                    model,
                    seconds: nnet_seconds,
                });
                continue;
            }
            ModelKind::Svar | ModelKind::Fixed => {
                let likelihood = if model == ModelKind::Svar {
                    LikelihoodSpec::Learned
                } else {
                    LikelihoodSpec::Fixed(FixedVarianceLik::new(sigma0_sq)?)
                };
                let vb = VbModel {
                    arch: arch.clone(),
                    weight_prior: cfg.priors.weight,
                    variance_prior: cfg.priors.variance,
                    likelihood,
                };
                let train_cfg = TrainerConfig {
                    seed: fit_seed,
                    ..cfg.trainer.clone()
                };
                let (state, _) = fit_vb(&vb, &prep.train, &train_cfg)?;
                let mut rng = RngState::new(rep_seed).child(2);
                let s = inference::predict(&state, &vb, &prep.test_x, &cfg.predict, &mut rng)?;
                let mean = to_original(&prep.y_scaler, &s.mean)?;
                let lower = to_original(&prep.y_scaler, &s.lower)?;
                let upper = to_original(&prep.y_scaler, &s.upper)?;
                records.push(record(model, mean, Some((lower, upper)), sigma0_sq, state.variance_at_mean())?);
            }
        }
        timings.push(Timing {
            replication,
            model,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((records, timings))
}

/// Runs every replication. Numerical failures are recorded per
/// replication and skipped; any other error aborts the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let riboflavin = match cfg.experiment {
        Experiment::Riboflavin => Some(load_riboflavin(cfg)?),
        Experiment::Curve => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<(Vec<ResultRecord>, Vec<Timing>)>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, rep, riboflavin.as_ref()))
            .collect()
    });

    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    for (replication, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((r, t)) => {
                records.extend(r);
                timings.extend(t);
            }
            Err(Error::Numerical(msg)) => failures.push(FailureRecord {
                replication,
                error: msg,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(ExperimentOutput {
        results: ResultsFile {
            schema_version: SCHEMA_VERSION,
            config: ExperimentConfig {
                workers: None,
                out_dir: None,
                ..cfg.clone()
            },
            records,
            failures,
        },
        timings,
    })
}

type MetricFn = fn(&ResultRecord) -> Option<f64>;

/// Five-number summary of one metric for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub metric: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryRow {
    fn from_values(model: ModelKind, metric: &str, values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            model,
            metric: metric.into(),
            count: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        }
    }
}

/// Per-model min/Q1/median/Q3/max of MSPE and, where present, coverage.
pub fn summarize(records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::config("nothing to summarize: no result records"));
    }
    let mut models: Vec<ModelKind> = records.iter().map(|r| r.model).collect();
    models.sort();
    models.dedup();
    let metrics: [(&str, MetricFn); 3] = [
        ("mspe", |r| Some(r.mspe)),
        ("coverage", |r| r.coverage),
        ("coverage_in_support", |r| r.coverage_in_support),
    ];
    let mut rows = Vec::new();
    for model in models {
        for (name, get) in metrics {
            let values: Vec<f64> = records.iter().filter(|r| r.model == model).filter_map(get).collect();
            if !values.is_empty() {
                rows.push(SummaryRow::from_values(model, name, &values));
            }
        }
    }
    Ok(rows)
}

/// Median of `metric` for `model`, if any record has it.
pub fn median_of(rows: &[SummaryRow], model: ModelKind, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.model == model && r.metric == metric)
        .map(|r| r.median)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary(rows: &[SummaryRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv_writer(&dir.join("summary.csv"))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(rows)? + "\n")?;
    Ok(())
}

/// Writes `results.json`, `metrics.csv`, `predictions.csv`,
/// `summary.{csv,json}` and `timings.csv` into `dir`. Everything except
/// `timings.csv` is a pure function of the configuration.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let results = &output.results;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(results)? + "\n")?;

    let mut w = csv_writer(&dir.join("metrics.csv"))?;
    w.write_record([
        "replication",
        "model",
        "mspe",
        "coverage",
        "coverage_in_support",
        "mean_half_width",
        "calibrated_sigma0_sq",
        "learned_variance",
    ])?;
    for r in &results.records {
        w.write_record([
            r.replication.to_string(),
            r.model.name().into(),
            r.mspe.to_string(),
            opt(r.coverage),
            opt(r.coverage_in_support),
            opt(r.mean_half_width),
            r.calibrated_sigma0_sq.to_string(),
            opt(r.learned_variance),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("predictions.csv"))?;
    w.write_record(["replication", "model", "row", "x", "y", "mean", "lower", "upper"])?;
    for r in &results.records {
        for p in &r.points {
            w.write_record([
                r.replication.to_string(),
                r.model.name().into(),
                p.row.to_string(),
                opt(p.x),
                p.y.to_string(),
                p.mean.to_string(),
                opt(p.lower),
                opt(p.upper),
            ])?;
        }
    }
    w.flush()?;

    if !results.records.is_empty() {
        write_summary(&summarize(&results.records)?, dir)?;
    }

    let mut w = csv_writer(&dir.join("timings.csv"))?;
    for t in &output.timings {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file: ResultsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "unsupported results schema version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    Ok(file)
}

/// Writes the datasets of replication 0 (raw scale) as delimited files and
/// returns their paths.
pub fn generate_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match cfg.experiment {
        Experiment::Curve => {
            let mut rng = RngState::new(derive_seed(cfg.seed, 0)).child(0);
            let c = &cfg.curve;
            for (name, n, support) in [("curve_train.csv", c.n_train, c.train_support), ("curve_test.csv", c.n_test, c.test_support)] {
                let d = gen_curve(n, support, c.noise, &mut rng)?;
                let path = dir.join(name);
                write_delimited(&d, &path, b',')?;
                written.push(path);
            }
        }
        Experiment::Riboflavin => {
            let full = load_riboflavin(cfg)?;
            let mut rng = RngState::new(derive_seed(cfg.seed, 0)).child(0);
            let (train, test) = split(&full, cfg.riboflavin.n_train, &mut rng)?;
            for (name, d) in [("riboflavin_train.csv", train), ("riboflavin_test.csv", test)] {
                let path = dir.join(name);
                write_delimited(&d, &path, cfg.riboflavin.delimiter as u8)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
