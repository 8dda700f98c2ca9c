//! Partially linear (partialling-out) estimation with cross-fitting.
//!
//! Assuming E[Y | L, W] = theta L + h(W), theta is estimated from the
//! cross-fitted residuals of Y on W and of L on W:
//! theta = sum (Y - g(W))(L - m(W)) / sum (L - m(W))^2, fold by fold.

use super::{build_folds, gather_samples, EffectEstimate, EstimateError, EstimatorConfig, FitRegression, ReparametrizedSample};
use crate::learn::derive_seed;

const J_FLOOR: f64 = 1e-10;

/// Partially linear effect estimate (binary or directional L alike).
pub fn estimate_theta_plm(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    estimate_theta_plm_with(samples, config, config.outcome(), config.l_mean())
}

/// As [`estimate_theta_plm`] but with explicit nuisance recipes, so oracle
/// regressions can be injected.
pub fn estimate_theta_plm_with(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
    outcome: &dyn FitRegression,
    l_mean: &dyn FitRegression,
) -> Result<EffectEstimate, EstimateError> {
    let n = samples.len();
    let crossfit = config.crossfit;
    let k_folds = if crossfit { config.n_folds } else { 1 };
    if n < 2 * k_folds.max(1) {
        return Err(EstimateError::InsufficientData { need: 2 * k_folds.max(1), got: n });
    }
    let (y, l, w) = gather_samples(samples);
    let folds = build_folds(n, config, crossfit);

    // per-fold residual products; second pass computes the variance pieces
    let mut j_parts = Vec::with_capacity(folds.len());
    let mut kappa_parts = Vec::with_capacity(folds.len());
    let mut residuals: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = if crossfit {
            let mut in_fold = vec![false; n];
            for &i in fold {
                in_fold[i] = true;
            }
            (0..n).filter(|&i| !in_fold[i]).collect()
        } else {
            (0..n).collect()
        };
        let w_train = w.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
        let g_hat = outcome.fit(&w_train, &y_train, derive_seed(config.seed, 100 + k as u64))?;
        let m_hat = l_mean.fit(&w_train, &l_train, derive_seed(config.seed, 200 + k as u64))?;

        let mut y_resid = Vec::with_capacity(fold.len());
        let mut l_resid = Vec::with_capacity(fold.len());
        let mut j_k = 0.0;
        let mut kappa_k = 0.0;
        for &i in fold {
            let row = w.row(i);
            let yr = y[i] - g_hat.predict_row(row);
            let lr = l[i] - m_hat.predict_row(row);
            j_k += lr * lr;
            kappa_k += yr * lr;
            y_resid.push(yr);
            l_resid.push(lr);
        }
        j_parts.push(j_k / fold.len() as f64);
        kappa_parts.push(kappa_k / fold.len() as f64);
        residuals.push((y_resid, l_resid));
    }

    let k_count = folds.len() as f64;
    let j_hat: f64 = j_parts.iter().sum::<f64>() / k_count;
    if j_hat < J_FLOOR {
        return Err(EstimateError::DegenerateJ(j_hat));
    }
    let kappa_hat: f64 = kappa_parts.iter().sum::<f64>() / k_count;
    let theta_hat = kappa_hat / j_hat;

    let mut nu_sum = 0.0;
    for (fold, (y_resid, l_resid)) in folds.iter().zip(&residuals) {
        let mut nu_k = 0.0;
        for (yr, lr) in y_resid.iter().zip(l_resid) {
            let s = yr * lr - theta_hat * lr * lr;
            nu_k += s * s;
        }
        nu_sum += nu_k / fold.len() as f64;
    }
    let sigma2 = (nu_sum / k_count) / (j_hat * j_hat);
    Ok(EffectEstimate::from_asymptotics(theta_hat, sigma2, n, "plm", config.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::FrozenRegression;
    use crate::learn::LearnerKind;
    use std::sync::Arc;

    #[test]
    fn frozen_zero_nuisances_reduce_to_ls_on_l() {
        // with g = m = 0, theta is sum(Y L) / sum(L^2); on exact data Y = 2L
        // that is 2 with zero variance
        let samples: Vec<ReparametrizedSample> = (0..20)
            .map(|i| {
                let l = (i as f64 - 10.0) / 5.0;
                ReparametrizedSample::new(2.0 * l, l, vec![0.5])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 0);
        config.n_folds = 2;
        let zero = FrozenRegression(Arc::new(|_: &[f64]| 0.0));
        let est = estimate_theta_plm_with(&samples, &config, &zero, &zero).unwrap();
        assert!((est.estimate - 2.0).abs() < 1e-12);
        assert!(est.variance < 1e-20);
    }

    #[test]
    fn degenerate_j_is_reported() {
        // L is an exact function of W and the L-regression is that function
        let samples: Vec<ReparametrizedSample> = (0..20)
            .map(|i| {
                let w = i as f64 / 20.0;
                ReparametrizedSample::new(w, 3.0 * w, vec![w])
            })
            .collect();
        let config = EstimatorConfig::new(LearnerKind::Mean, 0);
        let exact_m = FrozenRegression(Arc::new(|w: &[f64]| 3.0 * w[0]));
        let zero = FrozenRegression(Arc::new(|_: &[f64]| 0.0));
        let err = estimate_theta_plm_with(&samples, &config, &zero, &exact_m).unwrap_err();
        assert!(matches!(err, EstimateError::DegenerateJ(_)));
    }

    #[test]
    fn fold_relabeling_is_bit_identical() {
        use rand::{RngExt, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<ReparametrizedSample> = (0..60)
            .map(|_| {
                let w: f64 = rng.random();
                let l: f64 = w + rng.random::<f64>();
                ReparametrizedSample::new(l + w, l, vec![w])
            })
            .collect();
        let assign: Vec<usize> = (0..60).map(|i| (i * 7 + 3) % 3).collect();
        let relabeled: Vec<usize> = assign.iter().map(|&f| (f + 1) % 3).collect();
        let mut config = EstimatorConfig::new(LearnerKind::Ridge { penalty: 1e-6 }, 9);
        config.n_folds = 3;
        config.fold_override = Some(assign);
        let a = estimate_theta_plm(&samples, &config).unwrap();
        config.fold_override = Some(relabeled);
        let b = estimate_theta_plm(&samples, &config).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
    }
}
