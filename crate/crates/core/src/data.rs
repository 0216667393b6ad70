//! Datasets: CSV loading, min-max scaling, jitter, synthetic data, folds.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Default jitter half-width as a fraction of each feature's range.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Per-feature affine map `u = (x − min) / range`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling<T> {
    pub min: Vec<T>,
    pub range: Vec<T>,
}

impl<T: Scalar> FeatureScaling<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(self.min.iter().zip(&self.range)).map(|(&v, (&lo, &r))| (v - lo) / r).collect()
    }

    pub fn invert(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(self.min.iter().zip(&self.range)).map(|(&v, (&lo, &r))| lo + v * r).collect()
    }

    pub fn apply_rows(&self, x: &Matrix<T>) -> Matrix<T> {
        map_rows(x, |r| self.apply(r))
    }

    pub fn invert_rows(&self, u: &Matrix<T>) -> Matrix<T> {
        map_rows(u, |r| self.invert(r))
    }
}

fn map_rows<T: Scalar>(x: &Matrix<T>, f: impl Fn(&[T]) -> Vec<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&f(x.row(i)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Scaling already applied to `x`, if any.
    pub scaling: Option<FeatureScaling<T>>,
    pub jitter_seed: Option<u64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.rows(), got: y.len() });
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::TooFewPoints { needed: 1, got: x.rows() });
        }
        let feature_names = (0..x.cols()).map(|i| format!("x{i}")).collect();
        Ok(Self { x, y, feature_names, target_name: "y".into(), scaling: None, jitter_seed: None })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows at `idx`, in that order; scaling metadata is kept.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let x = Matrix::from_fn(idx.len(), self.dim(), |i, j| self.x[(idx[i], j)]);
        Self { x, y: idx.iter().map(|&i| self.y[i]).collect(), ..self.clone() }
    }

    /// Inputs in the original units.
    pub fn original_x(&self) -> Matrix<T> {
        match &self.scaling {
            Some(s) => s.invert_rows(&self.x),
            None => self.x.clone(),
        }
    }
}

/// Loads a headed CSV and splits off `target`. Lines starting with `#` are
/// ignored.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, target: &str) -> Result<Dataset<T>> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, target)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R, target: &str) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let t = headers.iter().position(|h| h == target).ok_or_else(|| Error::MissingColumn {
        target: target.into(),
        available: headers.join(", "),
    })?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in rec.iter().enumerate() {
            let column = headers.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            if cell.is_empty() {
                return Err(Error::MissingValue { row: row_no, column });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse { row: row_no, column: column.clone(), value: cell.into() })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: row_no, column, value: cell.into() });
            }
            if j == t {
                y.push(T::lit(v));
            } else {
                row.push(T::lit(v));
            }
        }
        if rec.len() < headers.len() {
            return Err(Error::MissingValue { row: row_no, column: headers[rec.len()].clone() });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if headers.len() < 2 {
        return Err(Error::InvalidConfig("need at least one feature column besides the target".into()));
    }
    let mut ds = Dataset::new(Matrix::from_rows(&rows)?, y)?;
    ds.feature_names = headers.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, h)| h.clone()).collect();
    ds.target_name = target.into();
    Ok(ds)
}

fn csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::InvalidConfig(format!("malformed csv: {e}")),
    }
}

/// Maps every feature onto `[0, 1]`, composing with any earlier scaling.
pub fn minmax_scale<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let (n, d) = (ds.len(), ds.dim());
    let mut min = vec![T::infinity(); d];
    let mut max = vec![T::neg_infinity(); d];
    for i in 0..n {
        for j in 0..d {
            min[j] = min[j].min(ds.x[(i, j)]);
            max[j] = max[j].max(ds.x[(i, j)]);
        }
    }
    let range: Vec<T> = min.iter().zip(&max).map(|(&a, &b)| b - a).collect();
    if let Some(j) = range.iter().position(|&r| !(r > T::zero())) {
        return Err(Error::ConstantFeature(ds.feature_names[j].clone()));
    }
    let scaling = FeatureScaling { min, range };
    let x = scaling.apply_rows(&ds.x);
    let combined = match &ds.scaling {
        None => scaling,
        Some(prev) => FeatureScaling {
            min: prev.invert(&scaling.min),
            range: prev.range.iter().zip(&scaling.range).map(|(&a, &b)| a * b).collect(),
        },
    };
    Ok(Dataset { x, scaling: Some(combined), ..ds.clone() })
}

/// Adds uniform noise in `±magnitude · range` to the listed feature columns.
pub fn add_jitter<T: Scalar>(ds: &Dataset<T>, columns: &[usize], magnitude: f64, seed: u64) -> Result<Dataset<T>> {
    if let Some(&c) = columns.iter().find(|&&c| c >= ds.dim()) {
        return Err(Error::DimensionMismatch { expected: ds.dim(), got: c + 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = ds.x.clone();
    for &c in columns {
        let col = ds.x.column(c);
        let lo = col.iter().copied().fold(T::infinity(), T::min);
        let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
        let range = if hi > lo { hi - lo } else { T::one() };
        for i in 0..ds.len() {
            let u: f64 = rng.random_range(-1.0..=1.0);
            x[(i, c)] += T::lit(u * magnitude) * range;
        }
    }
    Ok(Dataset { x, jitter_seed: Some(seed), ..ds.clone() })
}

/// `sin(2πx/10) + 0.2 sin(2πx/2.5)`.
pub fn higdon_function<T: Scalar>(x: T) -> T {
    let tau = T::TAU();
    (tau * x / T::lit(10.0)).sin() + T::lit(0.2) * (tau * x / T::lit(2.5)).sin()
}

/// `n` equispaced points on `range` with Gaussian noise of scale `sigma_y`.
pub fn higdon<T: Scalar>(n: usize, sigma_y: f64, seed: u64, range: (f64, f64)) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if !(sigma_y >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise scale must be non-negative, got {sigma_y}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_y).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (lo, hi) = range;
    let xs: Vec<T> = (0..n)
        .map(|i| T::lit(if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }))
        .collect();
    let y = xs.iter().map(|&x| higdon_function(x) + T::lit(noise.sample(&mut rng))).collect();
    let mut ds = Dataset::new(Matrix::from_vec(n, 1, xs)?, y)?;
    ds.feature_names = vec!["x".into()];
    Ok(ds)
}

/// Shuffled, round-robin `(train, test)` index partitions.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests = vec![Vec::new(); k];
    for (i, &v) in idx.iter().enumerate() {
        tests[i % k].push(v);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
            (train, test)
        })
        .collect())
}

pub fn kfold<T: Scalar>(ds: &Dataset<T>, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    kfold_indices(ds.len(), k, seed)
}

pub fn rmse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let sq: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok((sq / T::from_usize_lossy(pred.len())).sqrt())
}
