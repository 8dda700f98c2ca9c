//! Conditional score estimation under a location-scale model.
//!
//! Assuming L = m(W) + v(W)^{1/2} zeta with zeta independent of W, the
//! conditional score of L given W reduces to a univariate problem on
//! standardized residuals: rho(l, w) = rho_1((l - m(w)) / v(w)^{1/2}) /
//! v(w)^{1/2}. The nuisances m and v are fit on one half of the data, the
//! univariate score on the standardized residuals of the other half.

use crate::learn::{derive_seed, shuffled_indices, LearnError, Learner, LearnerKind, Matrix};
use crate::stats;
use thiserror::Error;

/// Variance predictions are floored here before standardization.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// KDE denominator floor, as a fraction of the in-sample density maximum.
const DENSITY_FLOOR_FRAC: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("score estimation needs at least {need} samples, got {got}")]
    NotEnoughData { need: usize, got: usize },
    #[error(
        "more than half of the variance predictions hit the floor; the location-scale model looks inappropriate"
    )]
    DegenerateVariance,
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Univariate score estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnivariateMethod {
    /// Kernel density derivative ratio with Silverman bandwidth (default).
    GaussianKernel,
    /// Penalized B-spline fit of the score-matching objective.
    PenalizedSpline,
}

impl UnivariateMethod {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "gaussian_kernel" => Some(Self::GaussianKernel),
            "penalized_spline" => Some(Self::PenalizedSpline),
            _ => None,
        }
    }
}

/// A fitted univariate score estimate rho_1: R -> R.
#[derive(Debug, Clone)]
pub enum UnivariateScore {
    Kde { points: Vec<f64>, bandwidth: f64, density_floor: f64 },
    Spline(SplineScore),
}

impl UnivariateScore {
    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            UnivariateScore::Kde { points, bandwidth, density_floor } => {
                let (p, dp) = kde_value_and_derivative(points, *bandwidth, x);
                dp / p.max(*density_floor)
            }
            UnivariateScore::Spline(s) => s.evaluate(x),
        }
    }
}

fn kde_value_and_derivative(points: &[f64], h: f64, x: f64) -> (f64, f64) {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * points.len() as f64 * h);
    let mut p = 0.0;
    let mut dp = 0.0;
    for &xi in points {
        let u = (x - xi) / h;
        let k = (-0.5 * u * u).exp();
        p += k;
        dp -= u * k / h;
    }
    (p * norm, dp * norm)
}

fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sd = stats::variance(xs).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let scale = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * scale * n.powf(-0.2)).max(1e-6)
}

/// Fits a univariate score from residual samples.
pub fn fit_univariate_score(
    residuals: &[f64],
    method: UnivariateMethod,
) -> Result<UnivariateScore, ScoreError> {
    if residuals.len() < 20 {
        return Err(ScoreError::NotEnoughData { need: 20, got: residuals.len() });
    }
    match method {
        UnivariateMethod::GaussianKernel => {
            let bandwidth = silverman_bandwidth(residuals);
            let max_density = residuals
                .iter()
                .map(|&x| kde_value_and_derivative(residuals, bandwidth, x).0)
                .fold(0.0f64, f64::max);
            Ok(UnivariateScore::Kde {
                points: residuals.to_vec(),
                bandwidth,
                density_floor: DENSITY_FLOOR_FRAC * max_density,
            })
        }
        UnivariateMethod::PenalizedSpline => Ok(UnivariateScore::Spline(SplineScore::fit(residuals))),
    }
}

/// Penalized B-spline score estimate: minimizes the score-matching objective
/// sum_i rho(x_i)^2 + 2 rho'(x_i) plus a second-difference penalty on the
/// spline coefficients. The objective is minimized in population by the true
/// score (integration by parts), so it also serves as the cross-validation
/// criterion for the penalty strength.
#[derive(Debug, Clone)]
pub struct SplineScore {
    knot_lo: f64,
    knot_step: f64,
    n_basis: usize,
    coefficients: Vec<f64>,
    x_lo: f64,
    x_hi: f64,
}

const SPLINE_BASIS: usize = 35;
/// Penalty grid, as multiples of the training size.
const LAMBDA_GRID: [f64; 11] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

impl SplineScore {
    fn fit(xs: &[f64]) -> Self {
        // knots span the central quantile range; the score is extended as a
        // constant beyond it, which keeps the tails bounded
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
        let x_lo = q(0.01);
        let x_hi = q(0.99);
        let span = (x_hi - x_lo).max(1e-6);
        let n_basis = SPLINE_BASIS;
        let n_interior = n_basis - 3;
        let knot_step = span / (n_interior - 1) as f64;
        let knot_lo = x_lo - 3.0 * knot_step;

        // choose the penalty by 5-fold cross-validation of the objective,
        // then take the largest penalty within one standard error of the
        // minimum (under-smoothed scores wiggle in the tails where the CV
        // loss barely sees them)
        let folds = crate::learn::fold_assignment(xs.len(), 5, 0x5e0);
        let mut cv_mean = Vec::with_capacity(LAMBDA_GRID.len());
        let mut cv_se = Vec::with_capacity(LAMBDA_GRID.len());
        for &lam in &LAMBDA_GRID {
            let mut fold_losses = [0.0f64; 5];
            for fold in 0..5 {
                let train: Vec<f64> = xs
                    .iter()
                    .zip(&folds)
                    .filter(|(_, &f)| f != fold)
                    .map(|(&x, _)| x)
                    .collect();
                let fit = Self::fit_with(&train, lam * train.len() as f64, knot_lo, knot_step, n_basis, x_lo, x_hi);
                let mut loss = 0.0;
                let mut count = 0usize;
                for (&x, &f) in xs.iter().zip(&folds) {
                    if f == fold {
                        let r = fit.evaluate(x);
                        loss += r * r + 2.0 * fit.derivative(x);
                        count += 1;
                    }
                }
                fold_losses[fold] = loss / count.max(1) as f64;
            }
            let mean = fold_losses.iter().sum::<f64>() / 5.0;
            let var = fold_losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / 5.0;
            cv_mean.push(mean);
            cv_se.push((var / 5.0).sqrt());
        }
        let mut best_idx = 0;
        for (i, &m) in cv_mean.iter().enumerate() {
            if m < cv_mean[best_idx] {
                best_idx = i;
            }
        }
        let threshold = cv_mean[best_idx] + 0.5 * cv_se[best_idx];
        let mut chosen = best_idx;
        for i in (best_idx + 1)..LAMBDA_GRID.len() {
            if cv_mean[i] <= threshold {
                chosen = i;
            }
        }
        Self::fit_with(xs, LAMBDA_GRID[chosen] * xs.len() as f64, knot_lo, knot_step, n_basis, x_lo, x_hi)
    }

    fn fit_with(
        xs: &[f64],
        lambda: f64,
        knot_lo: f64,
        knot_step: f64,
        n_basis: usize,
        x_lo: f64,
        x_hi: f64,
    ) -> Self {
        let p = n_basis;
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut b = vec![0.0; p];
        let mut db = vec![0.0; p];
        for &x in xs {
            let x = x.clamp(x_lo, x_hi);
            for k in 0..p {
                let center = knot_lo + (k as f64 + 2.0) * knot_step;
                let t = (x - center) / knot_step;
                b[k] = cubic_bspline(t);
                db[k] = cubic_bspline_derivative(t) / knot_step;
            }
            for j in 0..p {
                rhs[j] -= db[j];
                for k in j..p {
                    gram[j * p + k] += b[j] * b[k];
                }
            }
        }
        // second-derivative penalty (null space: the linear scores, so
        // Gaussian data is never biased by it); the step^3 factor makes the
        // strength independent of the knot spacing
        let lambda = lambda / (knot_step * knot_step * knot_step);
        for j in 0..p.saturating_sub(2) {
            let idx = [j, j + 1, j + 2];
            let coef = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for b2 in a..3 {
                    gram[idx[a] * p + idx[b2]] += lambda * coef[a] * coef[b2];
                }
            }
        }
        for j in 0..p {
            gram[j * p + j] += 1e-8 * xs.len().max(1) as f64;
            for k in 0..j {
                gram[j * p + k] = gram[k * p + j];
            }
        }
        let coefficients = stats::cholesky_solve(&mut gram, &rhs, p).unwrap_or(vec![0.0; p]);
        Self { knot_lo, knot_step, n_basis, coefficients, x_lo, x_hi }
    }

    fn evaluate(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_lo, self.x_hi);
        let mut acc = 0.0;
        for k in 0..self.n_basis {
            let center = self.knot_lo + (k as f64 + 2.0) * self.knot_step;
            let t = (x - center) / self.knot_step;
            acc += self.coefficients[k] * cubic_bspline(t);
        }
        acc
    }

    fn derivative(&self, x: f64) -> f64 {
        if x < self.x_lo || x > self.x_hi {
            return 0.0;
        }
        let mut acc = 0.0;
        for k in 0..self.n_basis {
            let center = self.knot_lo + (k as f64 + 2.0) * self.knot_step;
            let t = (x - center) / self.knot_step;
            acc += self.coefficients[k] * cubic_bspline_derivative(t) / self.knot_step;
        }
        acc
    }
}

/// Cubic B-spline on [-2, 2] centered at 0 (unit knot spacing).
fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let u = 2.0 - a;
        u * u * u / 6.0
    } else {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    }
}

fn cubic_bspline_derivative(t: f64) -> f64 {
    let a = t.abs();
    let sign = if t >= 0.0 { 1.0 } else { -1.0 };
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let u = 2.0 - a;
        -sign * u * u / 2.0
    } else {
        sign * (1.5 * a * a - 2.0 * a)
    }
}

/// Fitted conditional score model rho(l, w).
pub struct ScoreModel {
    mean: Box<dyn Learner>,
    variance: Box<dyn Learner>,
    univariate: UnivariateScore,
    /// Fraction of held-out variance predictions that hit the floor.
    pub floored_fraction: f64,
}

impl ScoreModel {
    /// Assembles a model from already-fitted parts (e.g. oracle nuisances).
    pub fn from_parts(
        mean: Box<dyn Learner>,
        variance: Box<dyn Learner>,
        univariate: UnivariateScore,
    ) -> Self {
        Self { mean, variance, univariate, floored_fraction: 0.0 }
    }

    pub fn evaluate(&self, l: f64, w: &[f64]) -> f64 {
        let m = self.mean.predict_row(w);
        let v = self.variance.predict_row(w).max(VARIANCE_FLOOR);
        let sd = v.sqrt();
        self.univariate.evaluate((l - m) / sd) / sd
    }
}

/// Fits the location-scale score model: nuisances m and v on one half (v on
/// squared residuals), the univariate score on the standardized residuals of
/// the other half.
pub fn fit_location_scale_score(
    l_values: &[f64],
    w: &Matrix,
    mean_kind: &LearnerKind,
    var_kind: &LearnerKind,
    method: UnivariateMethod,
    seed: u64,
) -> Result<ScoreModel, ScoreError> {
    let n = l_values.len();
    if n < 20 {
        return Err(ScoreError::NotEnoughData { need: 20, got: n });
    }
    let order = shuffled_indices(n, derive_seed(seed, 0x5C));
    let half = n.div_ceil(2);
    let idx_nuisance = &order[..half];
    let idx_score = &order[half..];

    let w_nuisance = w.select_rows(idx_nuisance);
    let l_nuisance: Vec<f64> = idx_nuisance.iter().map(|&i| l_values[i]).collect();
    let mean = mean_kind.fit(&w_nuisance, &l_nuisance, derive_seed(seed, 1))?;
    let sq_residuals: Vec<f64> = idx_nuisance
        .iter()
        .zip(&l_nuisance)
        .map(|(&i, &l)| {
            let r = l - mean.predict_row(w.row(i));
            r * r
        })
        .collect();
    let variance = var_kind.fit(&w_nuisance, &sq_residuals, derive_seed(seed, 2))?;

    let mut standardized = Vec::with_capacity(idx_score.len());
    let mut floored = 0usize;
    for &i in idx_score {
        let row = w.row(i);
        let v = variance.predict_row(row);
        if v <= VARIANCE_FLOOR {
            floored += 1;
        }
        let sd = v.max(VARIANCE_FLOOR).sqrt();
        standardized.push((l_values[i] - mean.predict_row(row)) / sd);
    }
    let floored_fraction = floored as f64 / idx_score.len().max(1) as f64;
    if floored_fraction > 0.5 {
        return Err(ScoreError::DegenerateVariance);
    }
    let univariate = fit_univariate_score(&standardized, method)?;
    Ok(ScoreModel { mean, variance, univariate, floored_fraction })
}
