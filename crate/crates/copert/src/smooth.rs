//! Forest-weighted local polynomial smoothing.
//!
//! Turns an arbitrary (possibly non-differentiable) pilot regression into
//! smoothed predictions and partial derivatives in the scalar coordinate l:
//! around each query point a degree-2 polynomial in (l - l_query) is fit by
//! weighted least squares, with weights taken from a random forest's
//! neighbor structure. The constant coefficient is the smoothed value, the
//! linear coefficient the derivative.

use crate::learn::Matrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("weight matrix is {wrows}x{wcols} but expected {rows}x{cols}")]
    ShapeMismatch { wrows: usize, wcols: usize, rows: usize, cols: usize },
    #[error("negative weight at ({0}, {1})")]
    NegativeWeight(usize, usize),
}

/// Smoothed values and l-derivatives at the query points.
#[derive(Debug, Clone)]
pub struct SmoothedFit {
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

const COND_LIMIT: f64 = 1e12;
const RIDGE: f64 = 1e-8;

/// Weighted degree-2 local polynomial fit at each training point.
///
/// `weights` is square with row i holding the weights of all training points
/// for the fit centered at `l_values[i]`. Degenerate designs (e.g. a row
/// putting all mass on a single l-value) fall back to a ridge-stabilized
/// solve rather than failing.
pub fn smooth_local_poly(
    l_values: &[f64],
    fitted_values: &[f64],
    weights: &Matrix,
) -> Result<SmoothedFit, SmoothError> {
    smooth_local_poly_at(l_values, l_values, fitted_values, weights)
}

/// Generalized form evaluating at arbitrary query l-values; `weights` has
/// one row per query and one column per training point.
pub fn smooth_local_poly_at(
    query_l: &[f64],
    train_l: &[f64],
    fitted_values: &[f64],
    weights: &Matrix,
) -> Result<SmoothedFit, SmoothError> {
    let n_query = query_l.len();
    let n_train = train_l.len();
    if weights.n_rows() != n_query || weights.n_cols() != n_train || fitted_values.len() != n_train
    {
        return Err(SmoothError::ShapeMismatch {
            wrows: weights.n_rows(),
            wcols: weights.n_cols(),
            rows: n_query,
            cols: n_train,
        });
    }
    let mut values = Vec::with_capacity(n_query);
    let mut derivatives = Vec::with_capacity(n_query);
    for i in 0..n_query {
        // weighted moments of (l - l_i)^k for k = 0..4 and of g * (l - l_i)^k
        let mut s = [0.0f64; 5];
        let mut t = [0.0f64; 3];
        for k in 0..n_train {
            let w = weights.get(i, k);
            if w == 0.0 {
                continue;
            }
            if w < 0.0 {
                return Err(SmoothError::NegativeWeight(i, k));
            }
            let d = train_l[k] - query_l[i];
            let d2 = d * d;
            s[0] += w;
            s[1] += w * d;
            s[2] += w * d2;
            s[3] += w * d2 * d;
            s[4] += w * d2 * d2;
            let g = fitted_values[k];
            t[0] += w * g;
            t[1] += w * g * d;
            t[2] += w * g * d2;
        }
        let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
        let beta = solve_3x3_with_fallback(&m, &t);
        values.push(beta[0]);
        derivatives.push(beta[1]);
    }
    Ok(SmoothedFit { values, derivatives })
}

/// Solves the 3x3 normal equations; adds a ridge on the non-intercept
/// diagonal when the system is ill-conditioned so the output stays finite.
fn solve_3x3_with_fallback(m: &[[f64; 3]; 3], t: &[f64; 3]) -> [f64; 3] {
    if condition_number(m) <= COND_LIMIT {
        if let Some(beta) = solve_3x3(m, t) {
            if beta.iter().all(|b| b.is_finite()) {
                return beta;
            }
        }
    }
    // intercept unpenalized
    let scale = m[0][0].max(m[2][2]).max(1.0);
    let mut ridged = *m;
    ridged[1][1] += RIDGE * scale;
    ridged[2][2] += RIDGE * scale;
    if let Some(beta) = solve_3x3(&ridged, t) {
        if beta.iter().all(|b| b.is_finite()) {
            return beta;
        }
    }
    // all l-values identical: weighted mean, zero derivative
    if m[0][0] > 0.0 {
        return [t[0] / m[0][0], 0.0, 0.0];
    }
    [0.0, 0.0, 0.0]
}

fn solve_3x3(m: &[[f64; 3]; 3], t: &[f64; 3]) -> Option<[f64; 3]> {
    // Gaussian elimination with partial pivoting
    let mut a = [
        [m[0][0], m[0][1], m[0][2], t[0]],
        [m[1][0], m[1][1], m[1][2], t[1]],
        [m[2][0], m[2][1], m[2][2], t[2]],
    ];
    for col in 0..3 {
        let mut piv = col;
        for r in (col + 1)..3 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in (col + 1)..3 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut beta = [0.0; 3];
    for r in (0..3).rev() {
        let mut v = a[r][3];
        for c in (r + 1)..3 {
            v -= a[r][c] * beta[c];
        }
        beta[r] = v / a[r][r];
    }
    Some(beta)
}

/// Condition number (ratio of extreme eigenvalues) of a symmetric 3x3
/// matrix, via the analytic eigenvalue formula.
fn condition_number(m: &[[f64; 3]; 3]) -> f64 {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        // diagonal matrix
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if d[0] <= 0.0 {
            return f64::INFINITY;
        }
        return d[2] / d[0];
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            b[r][c] = (m[r][c] - if r == c { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let eig_max = q + 2.0 * p * phi.cos();
    let eig_min = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    if eig_min <= 0.0 {
        return f64::INFINITY;
    }
    eig_max / eig_min
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_weights(n: usize) -> Matrix {
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                w.set(i, k, 1.0 / n as f64);
            }
        }
        w
    }

    fn random_positive_weights(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
            let sum: f64 = raw.iter().sum();
            for k in 0..n {
                w.set(i, k, raw[k] / sum);
            }
        }
        w
    }

    #[test]
    fn reproduces_degree_two_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let l: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let (a, b, c) = (0.3, -1.2, 0.8);
        let g: Vec<f64> = l.iter().map(|&x| a + b * x + c * x * x).collect();
        let w = random_positive_weights(n, 2);
        let fit = smooth_local_poly(&l, &g, &w).unwrap();
        for i in 0..n {
            assert!((fit.values[i] - g[i]).abs() < 1e-8, "value at {i}");
            let truth = b + 2.0 * c * l[i];
            assert!((fit.derivatives[i] - truth).abs() < 1e-8, "derivative at {i}");
        }
    }

    #[test]
    fn constant_values_have_zero_derivative() {
        let l: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let g = vec![7.0; 30];
        let fit = smooth_local_poly(&l, &g, &uniform_weights(30)).unwrap();
        for i in 0..30 {
            assert!((fit.values[i] - 7.0).abs() < 1e-10);
            assert!(fit.derivatives[i].abs() < 1e-10);
        }
    }

    #[test]
    fn linear_data_with_uniform_weights() {
        let l: Vec<f64> = (0..50).map(|i| i as f64 * 0.07).collect();
        let g: Vec<f64> = l.iter().map(|&x| 2.0 * x).collect();
        let fit = smooth_local_poly(&l, &g, &uniform_weights(50)).unwrap();
        for i in 0..50 {
            assert!((fit.derivatives[i] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let l: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let w = random_positive_weights(n, 4);
        let base = smooth_local_poly(&l, &g, &w).unwrap();
        let (alpha, beta) = (2.5, -1.0);
        let g2: Vec<f64> = g.iter().map(|&v| alpha * v + beta).collect();
        let scaled = smooth_local_poly(&l, &g2, &w).unwrap();
        for i in 0..n {
            assert!((scaled.values[i] - (alpha * base.values[i] + beta)).abs() < 1e-9);
            assert!((scaled.derivatives[i] - alpha * base.derivatives[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_rows_stay_finite() {
        // all weight mass on points sharing one l-value
        let l = vec![1.0, 1.0, 1.0, 2.0];
        let g = vec![3.0, 3.5, 2.5, 9.0];
        let mut w = Matrix::zeros(4, 4);
        for i in 0..4 {
            for k in 0..3 {
                w.set(i, k, 1.0 / 3.0);
            }
        }
        let fit = smooth_local_poly(&l, &g, &w).unwrap();
        for i in 0..4 {
            assert!(fit.values[i].is_finite());
            assert!(fit.derivatives[i].is_finite());
        }
        // the weighted mean of the three mass-carrying points
        assert!((fit.values[0] - 3.0).abs() < 1e-6);
    }
}
