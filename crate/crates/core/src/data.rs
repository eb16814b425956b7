//! Datasets: synthetic curve, delimited-text ingestion, standardization,
//! random splits and PCA.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ndcore::{gemm, shape_str};
use crate::{Error, Matrix, Result, RngState};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub feature_names: Option<Vec<String>>,
    pub target_name: Option<String>,
    /// Transform already applied to `x` and `y`, if any.
    pub standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if x.rows() != y.rows() {
            return Err(Error::shape("dataset rows", shape_str(&x), shape_str(&y)));
        }
        Ok(Self {
            x,
            y,
            feature_names: None,
            target_name: None,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn q(&self) -> usize {
        self.y.cols()
    }

    /// Rows `idx`, in order, keeping names and standardization metadata.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Same targets, new inputs (e.g. principal-component scores).
    pub fn with_inputs(&self, x: Matrix) -> Result<Dataset> {
        let mut d = Dataset::new(x, self.y.clone())?;
        d.target_name = self.target_name.clone();
        d.standardization = self.standardization.clone();
        Ok(d)
    }

    /// Pooled sample variance of all target entries.
    pub fn target_variance(&self) -> f64 {
        sample_variance(self.y.data())
    }
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Per-column affine map `(v - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ColumnScaler {
    /// Column means and sample standard deviations; constant columns get
    /// scale 1.
    pub fn fit(m: &Matrix) -> Self {
        let (means, scales) = (0..m.cols())
            .map(|c| {
                let col = m.column(c);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let sd = sample_variance(&col).sqrt();
                (mean, if sd > 1e-12 { sd } else { 1.0 })
            })
            .unzip();
        Self { means, scales }
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.means.len() {
            return Err(Error::shape("scaler columns", self.means.len(), m.cols()));
        }
        Ok(())
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        let cols = m.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            *v = (*v - self.means[c]) / self.scales[c];
        }
        Ok(out)
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        let cols = m.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            *v = *v * self.scales[c] + self.means[c];
        }
        Ok(out)
    }

    /// Inverse map for a single value of column `c`.
    pub fn invert_value(&self, c: usize, v: f64) -> f64 {
        v * self.scales[c] + self.means[c]
    }
}

/// Input and target scalers fitted on one split and reused on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x: ColumnScaler,
    pub y: ColumnScaler,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        Self {
            x: ColumnScaler::fit(&data.x),
            y: ColumnScaler::fit(&data.y),
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = Dataset::new(self.x.apply(&data.x)?, self.y.apply(&data.y)?)?;
        out.feature_names = data.feature_names.clone();
        out.target_name = data.target_name.clone();
        out.standardization = Some(self.clone());
        Ok(out)
    }
}

/// Observation noise of the synthetic curve. `scale` is read as a variance
/// when `as_variance` is set, otherwise as a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveNoise {
    pub scale: f64,
    pub as_variance: bool,
}

impl Default for CurveNoise {
    fn default() -> Self {
        Self {
            scale: 0.02,
            as_variance: true,
        }
    }
}

impl CurveNoise {
    pub fn sd(&self) -> f64 {
        if self.as_variance {
            self.scale.sqrt()
        } else {
            self.scale
        }
    }
}

/// `x + 2 sin(2π(x + ε)) + 2 sin(4π(x + ε)) + ε`.
pub fn curve(x: f64, eps: f64) -> f64 {
    let u = x + eps;
    x + 2.0 * (2.0 * PI * u).sin() + 2.0 * (4.0 * PI * u).sin() + eps
}

/// `n` points with `x ~ U[low, high]` and one noise draw per observation,
/// shared by both sine arguments and the additive term.
pub fn gen_curve(n: usize, support: (f64, f64), noise: CurveNoise, rng: &mut RngState) -> Result<Dataset> {
    let (low, high) = support;
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::config(format!("invalid support [{low}, {high}]")));
    }
    if n == 0 {
        return Err(Error::config("curve sample size must be positive"));
    }
    if !(noise.scale >= 0.0) {
        return Err(Error::config("noise scale must be non-negative"));
    }
    let sd = noise.sd();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(low, high);
        let eps = sd * rng.std_normal();
        xs.push(x);
        ys.push(curve(x, eps));
    }
    let mut d = Dataset::new(Matrix::column_vector(xs), Matrix::column_vector(ys))?;
    d.feature_names = Some(vec!["x".into()]);
    d.target_name = Some("y".into());
    Ok(d)
}

/// Factor-structured high-dimensional regression data with a sparse
/// linear signal: `x = z L + e`, `y = Σ_{j < active} β_j x_j + noise`.
pub fn gen_sparse_surrogate(
    n: usize,
    p: usize,
    active: usize,
    noise_sd: f64,
    rng: &mut RngState,
) -> Result<Dataset> {
    const FACTORS: usize = 5;
    if n < 2 || p == 0 || active == 0 || active > p {
        return Err(Error::config(format!(
            "invalid surrogate shape n = {n}, p = {p}, active = {active}"
        )));
    }
    let loadings = Matrix::new(FACTORS, p, rng.sample_std_normal(FACTORS * p))?;
    let z = Matrix::new(n, FACTORS, rng.sample_std_normal(n * FACTORS))?;
    let mut x = Matrix::new(n, p, rng.sample_std_normal(n * p))?;
    gemm(1.0, &z, false, &loadings, false, 1.0, &mut x);
    let beta: Vec<f64> = (0..active)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * rng.uniform(0.5, 1.5) / (active as f64).sqrt()
        })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row = x.row(i);
            beta.iter().zip(row).map(|(b, v)| b * v).sum::<f64>() + noise_sd * rng.std_normal()
        })
        .collect();
    let mut d = Dataset::new(x, Matrix::column_vector(y))?;
    d.feature_names = Some((1..=p).map(|j| format!("g{j}")).collect());
    d.target_name = Some("y".into());
    Ok(d)
}

/// Reads a headered delimited file and splits `target_column` out as `y`.
///
/// Error positions are 1-based: `row` counts data rows after the header,
/// `col` counts fields from the left.
pub fn load_delimited(path: &Path, target_column: &str, delimiter: u8) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_owned()))?;

    let width = header.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Data(format!(
                "row {} has {} fields, header has {width}",
                r + 1,
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: r + 1,
                col: c + 1,
                value: cell.to_owned(),
            })?;
            if c == target {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    let mut d = Dataset::new(Matrix::new(rows, width - 1, xs)?, Matrix::column_vector(ys))?;
    d.feature_names = Some(
        header
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != target)
            .map(|(_, h)| h.clone())
            .collect(),
    );
    d.target_name = Some(target_column.to_owned());
    Ok(d)
}

/// Writes features then targets with a header row. Values use the
/// shortest round-trip representation.
pub fn write_delimited(data: &Dataset, path: &Path, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
    let mut header: Vec<String> = match &data.feature_names {
        Some(names) if names.len() == data.p() => names.clone(),
        _ => (1..=data.p()).map(|j| format!("x{j}")).collect(),
    };
    let target = data.target_name.clone().unwrap_or_else(|| "y".into());
    if data.q() == 1 {
        header.push(target);
    } else {
        header.extend((1..=data.q()).map(|j| format!("{target}{j}")));
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let fields: Vec<String> = data
            .x
            .row(i)
            .iter()
            .chain(data.y.row(i))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Index sets of a uniformly random partition.
pub fn split_indices(n: usize, n_train: usize, rng: &mut RngState) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= n {
        return Err(Error::config(format!(
            "training size must satisfy 1 <= n_train < n = {n}, got {n_train}"
        )));
    }
    let perm = rng.permutation(n);
    let (a, b) = perm.split_at(n_train);
    Ok((a.to_vec(), b.to_vec()))
}

pub fn split(data: &Dataset, n_train: usize, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.n(), n_train, rng)?;
    Ok((data.select(&train), data.select(&test)))
}

/// Principal directions of column-centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `p x k`, orthonormal columns.
    pub components: Matrix,
    pub column_means: Vec<f64>,
    /// Sample variance (denominator `n - 1`) along each component,
    /// nonincreasing.
    pub explained_variance: Vec<f64>,
}

fn center(x: &Matrix) -> (Matrix, Vec<f64>) {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|c| x.column(c).iter().sum::<f64>() / n as f64).collect();
    let mut xc = x.clone();
    for (i, v) in xc.data_mut().iter_mut().enumerate() {
        *v -= means[i % p];
    }
    (xc, means)
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn sorted_eigen(m: &Matrix) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector orthogonal to `basis` (modified Gram-Schmidt on the
/// standard basis).
fn orthogonal_complement(basis: &[Vec<f64>], p: usize) -> Vec<f64> {
    let mut best = vec![0.0; p];
    let mut best_norm = 0.0;
    for e in 0..p {
        let mut v = vec![0.0; p];
        v[e] = 1.0;
        for b in basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = v;
        }
        if best_norm > 0.5 {
            break;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}

/// Top-`k` principal components.
///
/// When `p > n` the `n x n` Gram matrix of the centered data is
/// decomposed and directions are recovered as `Xcᵀ u / sqrt(λ)`; otherwise
/// the `p x p` covariance is decomposed directly. Each direction's sign is
/// fixed so that its largest-magnitude entry is positive.
pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if k == 0 || n < 2 || k > (n - 1).min(p) {
        return Err(Error::config(format!(
            "cannot extract {k} components from {n}x{p} data (need 1 <= k <= min(n - 1, p))"
        )));
    }
    let (xc, means) = center(x);
    let denom = (n - 1) as f64;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);

    if p > n {
        let mut gram = Matrix::zeros(n, n);
        gemm(1.0, &xc, false, &xc, true, 0.0, &mut gram);
        let pairs = sorted_eigen(&gram);
        let top = pairs[0].0.max(0.0);
        for (lambda, u) in pairs.into_iter().take(k) {
            if lambda <= 1e-12 * top.max(1e-300) {
                dirs.push(orthogonal_complement(&dirs, p));
                variances.push(0.0);
                continue;
            }
            let inv = 1.0 / lambda.sqrt();
            let v: Vec<f64> = (0..p)
                .map(|j| (0..n).map(|i| xc.get(i, j) * u[i]).sum::<f64>() * inv)
                .collect();
            dirs.push(v);
            variances.push(lambda / denom);
        }
    } else {
        let mut cov = Matrix::zeros(p, p);
        gemm(1.0 / denom, &xc, true, &xc, false, 0.0, &mut cov);
        for (lambda, v) in sorted_eigen(&cov).into_iter().take(k) {
            dirs.push(v);
            variances.push(lambda.max(0.0));
        }
    }

    for v in &mut dirs {
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut components = Matrix::zeros(p, k);
    for (c, v) in dirs.iter().enumerate() {
        for (r, &val) in v.iter().enumerate() {
            components.set(r, c, val);
        }
    }
    Ok(PcaModel {
        components,
        column_means: means,
        explained_variance: variances,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    /// Scores `(x - means) · components`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.column_means.len() {
            return Err(Error::shape("pca transform", self.column_means.len(), x.cols()));
        }
        let mut xc = x.clone();
        let p = x.cols();
        for (i, v) in xc.data_mut().iter_mut().enumerate() {
            *v -= self.column_means[i % p];
        }
        let mut out = Matrix::zeros(x.rows(), self.k());
        gemm(1.0, &xc, false, &self.components, false, 0.0, &mut out);
        Ok(out)
    }

    /// Back-projection `scores · componentsᵀ + means`.
    pub fn inverse_transform(&self, scores: &Matrix) -> Result<Matrix> {
        if scores.cols() != self.k() {
            return Err(Error::shape("pca inverse", self.k(), scores.cols()));
        }
        let p = self.column_means.len();
        let mut out = Matrix::zeros(scores.rows(), p);
        gemm(1.0, scores, false, &self.components, true, 0.0, &mut out);
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += self.column_means[i % p];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn curve_formula() {
        assert_eq!(curve(0.0, 0.0), 0.0);
        assert!((curve(0.25, 0.0) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn noiseless_curve_matches_formula() {
        let noise = CurveNoise {
            scale: 0.0,
            as_variance: true,
        };
        let d = gen_curve(50, (-0.1, 0.6), noise, &mut RngState::new(1)).unwrap();
        for i in 0..50 {
            assert_eq!(d.y.get(i, 0), curve(d.x.get(i, 0), 0.0));
        }
    }

    #[test]
    fn curve_respects_support_and_seed() {
        let a = gen_curve(800, (-0.1, 0.6), CurveNoise::default(), &mut RngState::new(3)).unwrap();
        let b = gen_curve(800, (-0.1, 0.6), CurveNoise::default(), &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 800);
        assert!(a.x.data().iter().all(|&x| (-0.1..=0.6).contains(&x)));
        let t = gen_curve(200, (-0.25, 0.85), CurveNoise::default(), &mut RngState::new(4)).unwrap();
        assert_eq!(t.n(), 200);
        assert!(t.x.data().iter().all(|&x| (-0.25..=0.85).contains(&x)));
        assert!(gen_curve(10, (1.0, 1.0), CurveNoise::default(), &mut RngState::new(0)).is_err());
    }

    #[test]
    fn noise_interpretation() {
        assert!((CurveNoise::default().sd() - 0.02f64.sqrt()).abs() < 1e-15);
        let sd = CurveNoise {
            scale: 0.02,
            as_variance: false,
        };
        assert_eq!(sd.sd(), 0.02);
    }

    #[test]
    fn delimited_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let x = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.1, 3.25], vec![1e-7, 4.0]]).unwrap();
        let y = Matrix::column_vector(vec![0.3, -0.7, 12.0]);
        let mut d = Dataset::new(x, y).unwrap();
        d.feature_names = Some(vec!["a".into(), "b".into()]);
        d.target_name = Some("y".into());
        write_delimited(&d, &path, b',').unwrap();
        let back = load_delimited(&path, "y", b',').unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn target_column_can_be_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        std::fs::write(&path, "a\ty\tb\n1\t2\t3\n4\t5\t6\n").unwrap();
        let d = load_delimited(&path, "y", b'\t').unwrap();
        assert_eq!(d.x.data(), &[1.0, 3.0, 4.0, 6.0]);
        assert_eq!(d.y.data(), &[2.0, 5.0]);
        assert_eq!(d.feature_names.unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn ingestion_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_delimited(&dir.path().join("nope.csv"), "y", b','),
            Err(Error::MissingFile(_))
        ));
        let path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,c,d,e,y").unwrap();
        writeln!(f, "1,2,3,4,5,6").unwrap();
        writeln!(f, "1,2,3,4,oops,6").unwrap();
        drop(f);
        match load_delimited(&path, "y", b',') {
            Err(Error::NonNumeric { row, col, value }) => {
                assert_eq!((row, col), (2, 5));
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_delimited(&path, "target", b','),
            Err(Error::MissingColumn(_))
        ));
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "a,y\n").unwrap();
        assert!(matches!(load_delimited(&empty, "y", b','), Err(Error::Data(_))));
    }

    #[test]
    fn standardization_fits_on_train_only() {
        let mut rng = RngState::new(6);
        let x = Matrix::new(40, 3, rng.sample_std_normal(120)).unwrap();
        let y = Matrix::new(40, 1, rng.sample_std_normal(40)).unwrap();
        let train = Dataset::new(x, y).unwrap();
        let s = Standardizer::fit(&train);
        let t = s.apply(&train).unwrap();
        for c in 0..3 {
            let col = t.x.column(c);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((sample_variance(&col).sqrt() - 1.0).abs() < 1e-10);
        }
        // A shifted test split keeps a visibly nonzero mean after transform.
        let shifted: Vec<f64> = rng.sample_std_normal(60).iter().map(|v| v + 5.0).collect();
        let test = Dataset::new(
            Matrix::new(20, 3, shifted).unwrap(),
            Matrix::zeros(20, 1),
        )
        .unwrap();
        let tt = s.apply(&test).unwrap();
        let mean = tt.x.column(0).iter().sum::<f64>() / 20.0;
        assert!(mean > 1.0);
        let back = s.y.invert(&t.y).unwrap();
        for (a, b) in back.data().iter().zip(train.y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions() {
        let d = Dataset::new(
            Matrix::column_vector((0..71).map(f64::from).collect()),
            Matrix::zeros(71, 1),
        )
        .unwrap();
        let (tr, te) = split(&d, 56, &mut RngState::new(1)).unwrap();
        assert_eq!((tr.n(), te.n()), (56, 15));
        let mut all: Vec<f64> = tr.x.data().iter().chain(te.x.data()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..71).map(f64::from).collect::<Vec<_>>());
        let (tr2, _) = split(&d, 56, &mut RngState::new(1)).unwrap();
        assert_eq!(tr, tr2);
        assert!(split(&d, 71, &mut RngState::new(1)).is_err());
        assert!(split(&d, 0, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn pca_collinear_points() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let m = fit_pca(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((m.components.get(0, 0) - s).abs() < 1e-10);
        assert!((m.components.get(1, 0) - s).abs() < 1e-10);
        assert!(m.explained_variance[1].abs() < 1e-10);
    }

    #[test]
    fn pca_full_rank_reconstruction_and_variances() {
        let mut rng = RngState::new(10);
        for &(n, p) in &[(10usize, 50usize), (30, 6)] {
            let x = Matrix::new(n, p, rng.sample_std_normal(n * p)).unwrap();
            let k = (n - 1).min(p);
            let m = fit_pca(&x, k).unwrap();
            let scores = m.transform(&x).unwrap();
            let back = m.inverse_transform(&scores).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-8);
            }
            for c in 0..k {
                let v = sample_variance(&scores.column(c));
                assert!((v - m.explained_variance[c]).abs() < 1e-8);
            }
            assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn pca_rejects_too_many_components() {
        let x = Matrix::zeros(5, 20);
        assert!(matches!(fit_pca(&x, 5), Err(Error::Config(_))));
        assert!(fit_pca(&x, 0).is_err());
    }

    #[test]
    fn surrogate_shape() {
        let d = gen_sparse_surrogate(71, 500, 10, 0.5, &mut RngState::new(1)).unwrap();
        assert_eq!((d.n(), d.p(), d.q()), (71, 500, 1));
        assert!(d.x.is_finite() && d.y.is_finite());
    }
}
