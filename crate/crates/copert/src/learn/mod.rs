//! Nuisance regression machinery: a mean baseline, ridge regression, random
//! forests with extractable neighbor weights and a k-fold cross-validated
//! selector.
//!
//! All learners are deterministic given a seed; fitted models are immutable
//! and safe to use from multiple threads.

mod cv;
mod forest;
mod ridge;

pub use cv::{fit_cv_select, CvFit, CvSelector};
pub use forest::{fit_forest, forest_weights, FeatureSubsampling, ForestModel, ForestParams};
pub use ridge::{fit_ridge, RidgeModel};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("empty training data")]
    EmptyData,
    #[error("feature matrix has {rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("normal equations are rank-deficient; use a positive penalty")]
    SingularSystem,
    #[error("cross-validation selector has no candidates")]
    EmptyCandidates,
    #[error("need at least {need} samples, got {got}")]
    NotEnoughData { need: usize, got: usize },
    #[error("unknown learner name `{0}` (expected mean|ridge|forest_shallow|forest|cv)")]
    UnknownLearner(String),
}

/// Dense row-major matrix of regression features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for r in &rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: n, cols, data }
    }

    /// Single-column matrix.
    pub fn from_column(col: &[f64]) -> Self {
        Self { rows: col.len(), cols: 1, data: col.to_vec() }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// New matrix with `col` prepended as the first column.
    pub fn with_prepended_column(&self, col: &[f64]) -> Matrix {
        assert_eq!(col.len(), self.rows);
        let mut out = Matrix::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            out.set(i, 0, col[i]);
            for j in 0..self.cols {
                out.set(i, j + 1, self.get(i, j));
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.data[r * self.cols..(r + 1) * self.cols].copy_from_slice(self.row(i));
        }
        out
    }
}

/// A fitted regression model. Classifier-style use (targets in {0, 1}) goes
/// through [`Learner::predict_proba`], which clamps predictions to [0, 1].
pub trait Learner: Send + Sync {
    fn predict_row(&self, x: &[f64]) -> f64;

    fn predict(&self, xs: &Matrix) -> Vec<f64> {
        (0..xs.n_rows()).map(|i| self.predict_row(xs.row(i))).collect()
    }

    fn predict_proba_row(&self, x: &[f64]) -> f64 {
        self.predict_row(x).clamp(0.0, 1.0)
    }

    fn predict_proba(&self, xs: &Matrix) -> Vec<f64> {
        (0..xs.n_rows()).map(|i| self.predict_proba_row(xs.row(i))).collect()
    }
}

/// A learner backed by a fixed function; used to inject known (oracle)
/// nuisance functions into the estimators.
pub struct FnLearner<F: Fn(&[f64]) -> f64 + Send + Sync>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Learner for FnLearner<F> {
    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Constant predictor: the training mean (class proportion for 0/1 targets).
#[derive(Debug, Clone)]
pub struct MeanModel {
    pub value: f64,
}

impl Learner for MeanModel {
    fn predict_row(&self, _x: &[f64]) -> f64 {
        self.value
    }
}

pub fn fit_mean(targets: &[f64]) -> Result<MeanModel, LearnError> {
    if targets.is_empty() {
        return Err(LearnError::EmptyData);
    }
    Ok(MeanModel { value: targets.iter().sum::<f64>() / targets.len() as f64 })
}

/// Learner configurations selectable by name: `mean`, `ridge`,
/// `forest_shallow` (depth 2), `forest` (unrestricted) and `cv` (5-fold
/// cross-validated choice among mean and the two forests).
#[derive(Debug, Clone)]
pub enum LearnerKind {
    Mean,
    Ridge { penalty: f64 },
    Forest(ForestParams),
    Cv(CvSelector),
}

impl LearnerKind {
    pub fn parse(name: &str) -> Result<Self, LearnError> {
        match name {
            "mean" => Ok(LearnerKind::Mean),
            "ridge" => Ok(LearnerKind::Ridge { penalty: 1e-4 }),
            "forest_shallow" => Ok(LearnerKind::Forest(ForestParams::shallow())),
            "forest" => Ok(LearnerKind::Forest(ForestParams::default())),
            "cv" => Ok(LearnerKind::Cv(CvSelector::standard_menu())),
            other => Err(LearnError::UnknownLearner(other.to_string())),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<Box<dyn Learner>, LearnError> {
        if x.n_rows() != y.len() {
            return Err(LearnError::LengthMismatch { rows: x.n_rows(), targets: y.len() });
        }
        match self {
            LearnerKind::Mean => Ok(Box::new(fit_mean(y)?)),
            LearnerKind::Ridge { penalty } => Ok(Box::new(fit_ridge(x, y, *penalty)?)),
            LearnerKind::Forest(params) => Ok(Box::new(fit_forest(x, y, params, seed)?)),
            LearnerKind::Cv(selector) => Ok(fit_cv_select(x, y, selector, seed)?.model),
        }
    }
}

/// splitmix64-style mixing used to derive independent sub-seeds by counter,
/// so per-tree / per-fold / per-rep streams do not depend on scheduling.
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded shuffle of 0..n.
pub(crate) fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Fold id per sample for k roughly equal folds, by seeded shuffle.
pub(crate) fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let order = shuffled_indices(n, seed);
    let mut assign = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % k;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_learner_basics() {
        let m = fit_mean(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.predict_row(&[42.0]), 2.0);
        let m = fit_mean(&[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.predict_proba_row(&[0.0]), 0.75);
        // constant targets have zero training error
        let m = fit_mean(&[5.0; 8]).unwrap();
        assert_eq!(m.predict_row(&[]), 5.0);
        assert!(fit_mean(&[]).is_err());
    }

    #[test]
    fn fold_assignment_is_balanced() {
        let assign = fold_assignment(10, 3, 7);
        let mut counts = [0usize; 3];
        for &f in &assign {
            counts[f] += 1;
        }
        counts.sort_unstable();
        assert_eq!(counts, [3, 3, 4]);
        // deterministic
        assert_eq!(assign, fold_assignment(10, 3, 7));
        assert_ne!(assign, fold_assignment(10, 3, 8));
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, 0));
    }
}
