//! One-step nonparametric estimators and their naive plug-in versions.
//!
//! The directional estimator averages the estimated partial derivative of
//! E[Y | L, W] in L and corrects it with a conditional-score term; the binary
//! estimator is the augmented inverse-propensity-weighted contrast scaled by
//! the fraction of unperturbed points. Both cross-fit their nuisances.

use super::{
    build_folds, gather_samples, EffectEstimate, EstimateError, EstimatorConfig, FitRegression,
    ReparametrizedSample,
};
use crate::learn::{derive_seed, shuffled_indices, LearnerKind, Matrix};
use crate::score::UnivariateMethod;
use crate::smooth::smooth_local_poly_at;
use crate::stats;
use std::sync::Arc;

/// Propensities are clipped into this range before entering denominators.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// A fitted, differentiable regression of Y on (L, W): evaluable values and
/// partial derivatives in l at arbitrary query points.
pub trait DiffRegression {
    fn values_and_derivatives(
        &self,
        query_l: &[f64],
        query_w: &Matrix,
    ) -> Result<(Vec<f64>, Vec<f64>), EstimateError>;
}

/// A recipe for fitting a [`DiffRegression`].
pub trait DiffRegressionFactory: Sync {
    fn fit(
        &self,
        l: &[f64],
        w: &Matrix,
        y: &[f64],
        seed: u64,
    ) -> Result<Box<dyn DiffRegression>, EstimateError>;
}

/// The default differentiable regression: an arbitrary pilot fit smoothed by
/// forest-weighted local polynomials, which supplies the derivatives.
pub struct SmoothedForestFactory {
    pub pilot: LearnerKind,
    pub forest: crate::learn::ForestParams,
    /// Grow the weight-forest leaves with the sample size (n/10, floor 20).
    /// The leaf size acts as the smoothing bandwidth: leaves that are too
    /// narrow in l degenerate the local polynomial and attenuate the
    /// derivative.
    pub adaptive_leaf: bool,
}

impl SmoothedForestFactory {
    pub fn new(pilot: LearnerKind) -> Self {
        Self { pilot, forest: crate::learn::ForestParams::default(), adaptive_leaf: true }
    }
}

struct SmoothedForestRegression {
    smoother: crate::learn::ForestModel,
    train_l: Vec<f64>,
    train_fitted: Vec<f64>,
}

impl DiffRegressionFactory for SmoothedForestFactory {
    fn fit(
        &self,
        l: &[f64],
        w: &Matrix,
        y: &[f64],
        seed: u64,
    ) -> Result<Box<dyn DiffRegression>, EstimateError> {
        let features = w.with_prepended_column(l);
        let pilot = self.pilot.fit(&features, y, derive_seed(seed, 1))?;
        let fitted = pilot.predict(&features);
        let mut params = self.forest.clone();
        if self.adaptive_leaf {
            params.min_leaf = (l.len() / 10).max(20);
            params.min_split = 2 * params.min_leaf;
        }
        let smoother =
            crate::learn::fit_forest(&features, &fitted, &params, derive_seed(seed, 2))?;
        Ok(Box::new(SmoothedForestRegression {
            smoother,
            train_l: l.to_vec(),
            train_fitted: fitted,
        }))
    }
}

impl DiffRegression for SmoothedForestRegression {
    fn values_and_derivatives(
        &self,
        query_l: &[f64],
        query_w: &Matrix,
    ) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
        let features = query_w.with_prepended_column(query_l);
        let weights = crate::learn::forest_weights(&self.smoother, &features);
        let fit = smooth_local_poly_at(query_l, &self.train_l, &self.train_fitted, &weights)?;
        Ok((fit.values, fit.derivatives))
    }
}

/// A fixed differentiable regression (oracle injection for tests).
#[derive(Clone)]
pub struct FrozenDiffRegression {
    pub value: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub derivative: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
}

impl DiffRegressionFactory for FrozenDiffRegression {
    fn fit(
        &self,
        _l: &[f64],
        _w: &Matrix,
        _y: &[f64],
        _seed: u64,
    ) -> Result<Box<dyn DiffRegression>, EstimateError> {
        Ok(Box::new(self.clone()))
    }
}

impl DiffRegression for FrozenDiffRegression {
    fn values_and_derivatives(
        &self,
        query_l: &[f64],
        query_w: &Matrix,
    ) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
        let values =
            query_l.iter().enumerate().map(|(i, &l)| (self.value)(l, query_w.row(i))).collect();
        let derivs = query_l
            .iter()
            .enumerate()
            .map(|(i, &l)| (self.derivative)(l, query_w.row(i)))
            .collect();
        Ok((values, derivs))
    }
}

/// A fitted conditional score, evaluable at (l, w).
pub trait ScoreEvaluator {
    fn evaluate(&self, l: f64, w: &[f64]) -> f64;
}

impl ScoreEvaluator for crate::score::ScoreModel {
    fn evaluate(&self, l: f64, w: &[f64]) -> f64 {
        crate::score::ScoreModel::evaluate(self, l, w)
    }
}

/// The two-stage score recipe of the cross-fit estimator: nuisance
/// regressions are fit on the fold complement, the univariate part on an
/// inner half of the evaluation fold.
pub trait ScoreFactory: Sync {
    fn fit_nuisances(
        &self,
        l: &[f64],
        w: &Matrix,
        seed: u64,
    ) -> Result<Box<dyn ScoreNuisances>, EstimateError>;
}

pub trait ScoreNuisances {
    fn fit_univariate(
        &self,
        l: &[f64],
        w: &Matrix,
        seed: u64,
    ) -> Result<Box<dyn ScoreEvaluator>, EstimateError>;
}

/// The default: location-scale modelling. The conditional mean and variance
/// of L given W come from the nuisance stage; standardized residuals of the
/// univariate stage feed the one-dimensional score estimate.
pub struct LocationScaleScoreFactory {
    pub mean: LearnerKind,
    pub variance: LearnerKind,
    pub method: UnivariateMethod,
}

struct LocationScaleNuisances {
    mean: Arc<dyn crate::learn::Learner>,
    variance: Arc<dyn crate::learn::Learner>,
    method: UnivariateMethod,
}

struct LocationScaleEvaluator {
    mean: Arc<dyn crate::learn::Learner>,
    variance: Arc<dyn crate::learn::Learner>,
    univariate: crate::score::UnivariateScore,
}

impl ScoreFactory for LocationScaleScoreFactory {
    fn fit_nuisances(
        &self,
        l: &[f64],
        w: &Matrix,
        seed: u64,
    ) -> Result<Box<dyn ScoreNuisances>, EstimateError> {
        let mean = self.mean.fit(w, l, derive_seed(seed, 1))?;
        let sq_residuals: Vec<f64> = (0..l.len())
            .map(|i| {
                let r = l[i] - mean.predict_row(w.row(i));
                r * r
            })
            .collect();
        let variance = self.variance.fit(w, &sq_residuals, derive_seed(seed, 2))?;
        Ok(Box::new(LocationScaleNuisances {
            mean: Arc::from(mean),
            variance: Arc::from(variance),
            method: self.method,
        }))
    }
}

impl ScoreNuisances for LocationScaleNuisances {
    fn fit_univariate(
        &self,
        l: &[f64],
        w: &Matrix,
        _seed: u64,
    ) -> Result<Box<dyn ScoreEvaluator>, EstimateError> {
        let mut standardized = Vec::with_capacity(l.len());
        let mut floored = 0usize;
        for i in 0..l.len() {
            let row = w.row(i);
            let v = self.variance.predict_row(row);
            if v <= crate::score::VARIANCE_FLOOR {
                floored += 1;
            }
            let sd = v.max(crate::score::VARIANCE_FLOOR).sqrt();
            standardized.push((l[i] - self.mean.predict_row(row)) / sd);
        }
        if floored * 2 > l.len() {
            return Err(crate::score::ScoreError::DegenerateVariance.into());
        }
        let univariate = crate::score::fit_univariate_score(&standardized, self.method)?;
        Ok(Box::new(LocationScaleEvaluator {
            mean: self.mean.clone(),
            variance: self.variance.clone(),
            univariate,
        }))
    }
}

impl ScoreEvaluator for LocationScaleEvaluator {
    fn evaluate(&self, l: f64, w: &[f64]) -> f64 {
        let m = self.mean.predict_row(w);
        let v = self.variance.predict_row(w).max(crate::score::VARIANCE_FLOOR);
        let sd = v.sqrt();
        self.univariate.evaluate((l - m) / sd) / sd
    }
}

/// A fixed conditional score (oracle injection for tests).
#[derive(Clone)]
pub struct FrozenScoreFactory(pub Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>);

struct FrozenScore(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>);

impl ScoreEvaluator for FrozenScore {
    fn evaluate(&self, l: f64, w: &[f64]) -> f64 {
        (self.0)(l, w)
    }
}

impl ScoreFactory for FrozenScoreFactory {
    fn fit_nuisances(
        &self,
        _l: &[f64],
        _w: &Matrix,
        _seed: u64,
    ) -> Result<Box<dyn ScoreNuisances>, EstimateError> {
        Ok(Box::new(self.clone()))
    }
}

impl ScoreNuisances for FrozenScoreFactory {
    fn fit_univariate(
        &self,
        _l: &[f64],
        _w: &Matrix,
        _seed: u64,
    ) -> Result<Box<dyn ScoreEvaluator>, EstimateError> {
        Ok(Box::new(FrozenScore(self.0.clone())))
    }
}

/// One-step nonparametric estimate of the directional effect, with the
/// default forest-smoothed regression and location-scale score.
pub fn estimate_tau_np(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    let diff = SmoothedForestFactory::new(config.outcome().clone());
    let score = LocationScaleScoreFactory {
        mean: config.l_mean().clone(),
        variance: config.l_variance().clone(),
        method: config.score_method,
    };
    estimate_tau_np_with(samples, config, &diff, &score)
}

/// One-step nonparametric directional estimate with explicit nuisance
/// recipes. Cross-fitting uses K folds for the regression and an inner half
/// split of each fold for the score, whose own location-scale fit re-splits
/// its input.
pub fn estimate_tau_np_with(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
    diff_factory: &dyn DiffRegressionFactory,
    score_factory: &dyn ScoreFactory,
) -> Result<EffectEstimate, EstimateError> {
    let n = samples.len();
    let crossfit = config.crossfit;
    let need = if crossfit { 4 * config.n_folds } else { 4 };
    if n < need {
        return Err(EstimateError::InsufficientData { need, got: n });
    }
    let (y, l, w) = gather_samples(samples);
    let folds = build_folds(n, config, crossfit);

    let mut cell_tau = Vec::new();
    let mut cell_nu = Vec::new();
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
        let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let w_train = w.select_rows(&train);
        let diff = diff_factory.fit(
            &l_train,
            &w_train,
            &y_train,
            derive_seed(config.seed, 300 + k as u64),
        )?;
        let nuisances = score_factory.fit_nuisances(
            &l_train,
            &w_train,
            derive_seed(config.seed, 600 + k as u64),
        )?;

        let l_fold: Vec<f64> = fold.iter().map(|&i| l[i]).collect();
        let w_fold = w.select_rows(fold);
        let (values, derivs) = diff.values_and_derivatives(&l_fold, &w_fold)?;

        if crossfit {
            // inner half split: the univariate score for one half is fit on
            // the other half's standardized residuals
            let order = shuffled_indices(fold.len(), derive_seed(config.seed, 0xAB00 + k as u64));
            let half = fold.len().div_ceil(2);
            let halves = [&order[..half], &order[half..]];
            for r in 0..2 {
                let fit_half = halves[1 - r];
                let eval_half = halves[r];
                let l_fit: Vec<f64> = fit_half.iter().map(|&p| l_fold[p]).collect();
                let w_fit = w_fold.select_rows(fit_half);
                let score = nuisances.fit_univariate(
                    &l_fit,
                    &w_fit,
                    derive_seed(config.seed, 0x5300 + (2 * k + r) as u64),
                )?;
                let mut tau = 0.0;
                let mut nu = 0.0;
                for &p in eval_half {
                    let rho = score.evaluate(l_fold[p], w_fold.row(p));
                    let s = derivs[p] - rho * (y[fold[p]] - values[p]);
                    tau += s;
                    nu += s * s;
                }
                let m = eval_half.len() as f64;
                cell_tau.push(tau / m);
                cell_nu.push(nu / m);
            }
        } else {
            let score =
                nuisances.fit_univariate(&l_fold, &w_fold, derive_seed(config.seed, 0x5300))?;
            let mut tau = 0.0;
            let mut nu = 0.0;
            for (p, &i) in fold.iter().enumerate() {
                let rho = score.evaluate(l_fold[p], w_fold.row(p));
                let s = derivs[p] - rho * (y[i] - values[p]);
                tau += s;
                nu += s * s;
            }
            let m = fold.len() as f64;
            cell_tau.push(tau / m);
            cell_nu.push(nu / m);
        }
    }

    let tau_hat = stats::mean(&cell_tau);
    let sigma2 = stats::mean(&cell_nu) - tau_hat * tau_hat;
    Ok(EffectEstimate::from_asymptotics(tau_hat, sigma2, n, "npm", config.alpha))
}

/// Naive plug-in estimate of the directional effect: the average estimated
/// derivative with its empirical-moment variance, no score correction.
pub fn estimate_plugin_directional(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    let diff = SmoothedForestFactory::new(config.outcome().clone());
    estimate_plugin_directional_with(samples, config, &diff)
}

pub fn estimate_plugin_directional_with(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
    diff_factory: &dyn DiffRegressionFactory,
) -> Result<EffectEstimate, EstimateError> {
    let n = samples.len();
    let crossfit = config.crossfit;
    let need = if crossfit { 2 * config.n_folds } else { 2 };
    if n < need {
        return Err(EstimateError::InsufficientData { need, got: n });
    }
    let (y, l, w) = gather_samples(samples);
    let _ = y;
    let folds = build_folds(n, config, crossfit);
    let mut derivs_all = Vec::with_capacity(n);
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
        let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
        let y_train: Vec<f64> = train.iter().map(|&i| samples[i].y).collect();
        let w_train = w.select_rows(&train);
        let diff = diff_factory.fit(
            &l_train,
            &w_train,
            &y_train,
            derive_seed(config.seed, 300 + k as u64),
        )?;
        let l_fold: Vec<f64> = fold.iter().map(|&i| l[i]).collect();
        let w_fold = w.select_rows(fold);
        let (_, derivs) = diff.values_and_derivatives(&l_fold, &w_fold)?;
        derivs_all.extend(derivs);
    }
    let tau = stats::mean(&derivs_all);
    let sigma2 = stats::mean(&derivs_all.iter().map(|d| d * d).collect::<Vec<_>>()) - tau * tau;
    Ok(EffectEstimate::from_asymptotics(tau, sigma2, n, "plugin", config.alpha))
}

fn validate_binary_l(l: &[f64]) -> Result<(), EstimateError> {
    for &v in l {
        if v != 0.0 && v != 1.0 {
            return Err(EstimateError::NonBinaryL(v));
        }
    }
    let ones = l.iter().filter(|&&v| v == 1.0).count();
    if ones == l.len() {
        return Err(EstimateError::NoUntreated);
    }
    if ones == 0 {
        return Err(EstimateError::NoTreated);
    }
    Ok(())
}

/// One-step (AIPW) estimate of the binary effect with cross-fitting.
pub fn estimate_lambda_np(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    estimate_lambda_np_with(samples, config, config.outcome(), config.propensity())
}

pub fn estimate_lambda_np_with(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
    outcome: &dyn FitRegression,
    propensity: &dyn FitRegression,
) -> Result<EffectEstimate, EstimateError> {
    let n = samples.len();
    let crossfit = config.crossfit;
    let need = if crossfit { 2 * config.n_folds } else { 2 };
    if n < need {
        return Err(EstimateError::InsufficientData { need, got: n });
    }
    let (y, l, w) = gather_samples(samples);
    validate_binary_l(&l)?;
    let p_hat = l.iter().map(|v| 1.0 - v).sum::<f64>() / n as f64;
    let folds = build_folds(n, config, crossfit);

    let mut kappa_parts = Vec::with_capacity(folds.len());
    let mut nu_parts = Vec::with_capacity(folds.len());
    let mut clipped = 0usize;
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
        let features_train = {
            let w_train = w.select_rows(&train);
            let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
            w_train.with_prepended_column(&l_train)
        };
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let f_hat = outcome.fit(&features_train, &y_train, derive_seed(config.seed, 400 + k as u64))?;
        let w_train = w.select_rows(&train);
        let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
        let pi_hat = propensity.fit(&w_train, &l_train, derive_seed(config.seed, 500 + k as u64))?;

        let mut kappa = 0.0;
        let mut nu = 0.0;
        for &i in fold {
            let row = w.row(i);
            let mut at_one = vec![1.0];
            at_one.extend_from_slice(row);
            let mut at_l = vec![l[i]];
            at_l.extend_from_slice(row);
            let f1 = f_hat.predict_row(&at_one);
            let fl = f_hat.predict_row(&at_l);
            let mut p = pi_hat.predict_proba_row(row);
            if p < PROPENSITY_CLIP.0 || p > PROPENSITY_CLIP.1 {
                clipped += 1;
                p = p.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
            }
            let s = f1 - y[i] + (y[i] - fl) / p * l[i];
            kappa += s;
            nu += s * s;
        }
        let m = fold.len() as f64;
        kappa_parts.push(kappa / m);
        nu_parts.push(nu / m);
    }
    let kappa_hat = stats::mean(&kappa_parts);
    let lambda_hat = kappa_hat / p_hat;
    let sigma2 = (stats::mean(&nu_parts) - kappa_hat * kappa_hat) / (p_hat * p_hat)
        - kappa_hat * kappa_hat * (1.0 - p_hat) / (p_hat * p_hat * p_hat);
    let mut est = EffectEstimate::from_asymptotics(lambda_hat, sigma2, n, "npm", config.alpha);
    if clipped > 0 {
        est.notes.push(format!("{clipped} propensity predictions clipped to [0.01, 0.99]"));
    }
    Ok(est)
}

/// Naive plug-in estimate of the binary effect: the inverse-propensity term
/// is dropped and the variance comes from the empirical moments of the
/// remaining summand.
pub fn estimate_plugin_binary(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    estimate_plugin_binary_with(samples, config, config.outcome())
}

pub fn estimate_plugin_binary_with(
    samples: &[ReparametrizedSample],
    config: &EstimatorConfig,
    outcome: &dyn FitRegression,
) -> Result<EffectEstimate, EstimateError> {
    let n = samples.len();
    let crossfit = config.crossfit;
    let need = if crossfit { 2 * config.n_folds } else { 2 };
    if n < need {
        return Err(EstimateError::InsufficientData { need, got: n });
    }
    let (y, l, w) = gather_samples(samples);
    validate_binary_l(&l)?;
    let p_hat = l.iter().map(|v| 1.0 - v).sum::<f64>() / n as f64;
    let folds = build_folds(n, config, crossfit);
    let mut summands = Vec::with_capacity(n);
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
        let features_train = {
            let w_train = w.select_rows(&train);
            let l_train: Vec<f64> = train.iter().map(|&i| l[i]).collect();
            w_train.with_prepended_column(&l_train)
        };
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let f_hat = outcome.fit(&features_train, &y_train, derive_seed(config.seed, 400 + k as u64))?;
        for &i in fold {
            let mut at_one = vec![1.0];
            at_one.extend_from_slice(w.row(i));
            summands.push(f_hat.predict_row(&at_one) - y[i]);
        }
    }
    let kappa = stats::mean(&summands);
    let lambda = kappa / p_hat;
    let second_moment = stats::mean(&summands.iter().map(|s| s * s).collect::<Vec<_>>());
    let sigma2 = (second_moment - kappa * kappa) / (p_hat * p_hat)
        - kappa * kappa * (1.0 - p_hat) / (p_hat * p_hat * p_hat);
    Ok(EffectEstimate::from_asymptotics(lambda, sigma2, n, "plugin", config.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::FrozenRegression;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn lambda_hand_instance() {
        // two samples, frozen f(l, w) = l and pi = 1/2: kappa = 1/2, p = 1/2,
        // lambda = 1 with zero variance
        let samples = vec![
            ReparametrizedSample::new(1.0, 1.0, vec![0.3]),
            ReparametrizedSample::new(0.0, 0.0, vec![0.3]),
        ];
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 0);
        config.crossfit = false;
        let f = FrozenRegression(Arc::new(|row: &[f64]| row[0]));
        let pi = FrozenRegression(Arc::new(|_: &[f64]| 0.5));
        let est = estimate_lambda_np_with(&samples, &config, &f, &pi).unwrap();
        assert!((est.estimate - 1.0).abs() < 1e-15);
        assert!(est.variance.abs() < 1e-12);
    }

    #[test]
    fn lambda_matches_direct_transcription() {
        // golden path: with frozen nuisances the module must equal an
        // independent line-by-line evaluation of the estimator
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let samples: Vec<ReparametrizedSample> = (0..n)
            .map(|_| {
                let w: f64 = rng.random();
                let l = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                let y = l + w + normal(&mut rng);
                ReparametrizedSample::new(y, l, vec![w])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 7);
        config.n_folds = 2;
        let f = FrozenRegression(Arc::new(|row: &[f64]| row[0] + 0.8 * row[1]));
        let pi = FrozenRegression(Arc::new(|w: &[f64]| 0.4 + 0.2 * w[0]));
        let est = estimate_lambda_np_with(&samples, &config, &f, &pi).unwrap();

        // transcription (frozen nuisances make the folds irrelevant)
        let p_hat = samples.iter().map(|s| 1.0 - s.l).sum::<f64>() / n as f64;
        let folds = crate::estimate::build_folds(n, &config, true);
        let mut kappas = Vec::new();
        let mut nus = Vec::new();
        for fold in &folds {
            let mut kappa = 0.0;
            let mut nu = 0.0;
            for &i in fold {
                let s = &samples[i];
                let f1 = 1.0 + 0.8 * s.w[0];
                let fl = s.l + 0.8 * s.w[0];
                let p = (0.4 + 0.2 * s.w[0]).clamp(0.01, 0.99);
                let v = f1 - s.y + (s.y - fl) / p * s.l;
                kappa += v;
                nu += v * v;
            }
            kappas.push(kappa / fold.len() as f64);
            nus.push(nu / fold.len() as f64);
        }
        let kappa_hat = kappas.iter().sum::<f64>() / kappas.len() as f64;
        let nu_hat = nus.iter().sum::<f64>() / nus.len() as f64;
        let lambda = kappa_hat / p_hat;
        let sigma2 = (nu_hat - kappa_hat * kappa_hat) / (p_hat * p_hat)
            - kappa_hat * kappa_hat * (1.0 - p_hat) / (p_hat * p_hat * p_hat);
        assert!((est.estimate - lambda).abs() < 1e-12);
        assert!((est.variance - sigma2.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn lambda_exact_nuisances_noiseless_collapse() {
        // Y an exact function of (L, W) and exact nuisances: the correction
        // vanishes and lambda equals (mean f(1, W) - mean Y) / p
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 60;
        let samples: Vec<ReparametrizedSample> = (0..n)
            .map(|_| {
                let w: f64 = rng.random();
                let l = if rng.random::<f64>() < 0.6 { 1.0 } else { 0.0 };
                let y = 2.0 * l + w;
                ReparametrizedSample::new(y, l, vec![w])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 1);
        config.n_folds = 2;
        let f = FrozenRegression(Arc::new(|row: &[f64]| 2.0 * row[0] + row[1]));
        let pi = FrozenRegression(Arc::new(|_: &[f64]| 0.6));
        let est = estimate_lambda_np_with(&samples, &config, &f, &pi).unwrap();
        let p_hat = samples.iter().map(|s| 1.0 - s.l).sum::<f64>() / n as f64;
        let expect = samples.iter().map(|s| 2.0 + s.w[0] - s.y).sum::<f64>() / n as f64 / p_hat;
        assert!((est.estimate - expect).abs() < 1e-12);
        // plug-in coincides with the one-step here
        let plugin = estimate_plugin_binary_with(&samples, &config, &f).unwrap();
        assert!((plugin.estimate - est.estimate).abs() < 1e-12);
    }

    #[test]
    fn lambda_rejects_degenerate_treatment() {
        let all_ones: Vec<ReparametrizedSample> =
            (0..10).map(|i| ReparametrizedSample::new(i as f64, 1.0, vec![0.0])).collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 0);
        config.crossfit = false;
        assert!(matches!(
            estimate_lambda_np(&all_ones, &config),
            Err(EstimateError::NoUntreated)
        ));
        let all_zeros: Vec<ReparametrizedSample> =
            (0..10).map(|i| ReparametrizedSample::new(i as f64, 0.0, vec![0.0])).collect();
        assert!(matches!(estimate_lambda_np(&all_zeros, &config), Err(EstimateError::NoTreated)));
        let bad: Vec<ReparametrizedSample> =
            (0..10).map(|i| ReparametrizedSample::new(i as f64, 0.5, vec![0.0])).collect();
        assert!(matches!(estimate_lambda_np(&bad, &config), Err(EstimateError::NonBinaryL(_))));
    }

    #[test]
    fn tau_oracle_injection_recovers_truth() {
        // f(l, w) = 2l exactly with derivative 2, rho the true Gaussian
        // score of L | W: tau should be 2 up to Monte Carlo error
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let samples: Vec<ReparametrizedSample> = (0..n)
            .map(|_| {
                let w: f64 = rng.random();
                let l = w + normal(&mut rng);
                let y = 2.0 * l + normal(&mut rng);
                ReparametrizedSample::new(y, l, vec![w])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 2);
        config.n_folds = 2;
        let diff = FrozenDiffRegression {
            value: Arc::new(|l, _| 2.0 * l),
            derivative: Arc::new(|_, _| 2.0),
        };
        let score = FrozenScoreFactory(Arc::new(|l: f64, w: &[f64]| -(l - w[0])));
        let est = estimate_tau_np_with(&samples, &config, &diff, &score).unwrap();
        assert!(
            (est.estimate - 2.0).abs() < 3.0 * est.std_error,
            "tau {} se {}",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn tau_zero_noise_collapses_to_plugin() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200;
        let samples: Vec<ReparametrizedSample> = (0..n)
            .map(|_| {
                let w: f64 = rng.random();
                let l = w + normal(&mut rng);
                // exact functional relationship, no noise
                let y = 2.0 * l + w;
                ReparametrizedSample::new(y, l, vec![w])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 3);
        config.n_folds = 2;
        let diff = FrozenDiffRegression {
            value: Arc::new(|l, w| 2.0 * l + w[0]),
            derivative: Arc::new(|_, _| 2.0),
        };
        let score = FrozenScoreFactory(Arc::new(|l: f64, w: &[f64]| -(l - w[0])));
        let est = estimate_tau_np_with(&samples, &config, &diff, &score).unwrap();
        assert!((est.estimate - 2.0).abs() < 1e-12);
        assert!(est.variance.abs() < 1e-12);
    }

    #[test]
    fn plugin_constant_regression_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<ReparametrizedSample> = (0..50)
            .map(|_| {
                ReparametrizedSample::new(rng.random(), rng.random(), vec![rng.random()])
            })
            .collect();
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 0);
        config.n_folds = 2;
        let diff = FrozenDiffRegression {
            value: Arc::new(|_, _| 1.5),
            derivative: Arc::new(|_, _| 0.0),
        };
        let est = estimate_plugin_directional_with(&samples, &config, &diff).unwrap();
        assert_eq!(est.estimate, 0.0);
    }
}
