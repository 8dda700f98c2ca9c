//! Ridge-penalized linear regression with an unpenalized intercept, solved
//! through the normal equations on centered data.

use super::{LearnError, Learner, Matrix};

#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl Learner for RidgeModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Minimizes ||y - b0 - X b||^2 + penalty ||b||^2.
pub fn fit_ridge(x: &Matrix, y: &[f64], penalty: f64) -> Result<RidgeModel, LearnError> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 {
        return Err(LearnError::EmptyData);
    }
    if n != y.len() {
        return Err(LearnError::LengthMismatch { rows: n, targets: y.len() });
    }
    let y_mean: f64 = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(RidgeModel { intercept: y_mean, coefficients: vec![] });
    }
    let mut x_mean = vec![0.0; p];
    for i in 0..n {
        for (j, m) in x_mean.iter_mut().enumerate() {
            *m += x.get(i, j);
        }
    }
    for m in x_mean.iter_mut() {
        *m /= n as f64;
    }

    // gram matrix of centered features plus the ridge
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let row = x.row(i);
        let yc = y[i] - y_mean;
        for j in 0..p {
            let xj = row[j] - x_mean[j];
            rhs[j] += xj * yc;
            for k in j..p {
                gram[j * p + k] += xj * (row[k] - x_mean[k]);
            }
        }
    }
    for j in 0..p {
        gram[j * p + j] += penalty;
        for k in 0..j {
            gram[j * p + k] = gram[k * p + j];
        }
    }

    let coefficients =
        crate::stats::cholesky_solve(&mut gram, &rhs, p).ok_or(LearnError::SingularSystem)?;
    let intercept =
        y_mean - x_mean.iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>();
    Ok(RidgeModel { intercept, coefficients })
}
