//! Effect estimators: plug-in, one-step nonparametric and partially linear,
//! with cross-fitting, zero-speed re-weighting and asymptotic confidence
//! intervals.
//!
//! All estimators consume reparametrized samples (Y, L, W). The driver in
//! [`driver`] produces those from raw compositional data and an effect spec,
//! filters zero-speed points, and re-scales the result.

mod driver;
mod npm;
mod plm;

pub use driver::{estimate_effect, estimate_samples, CompositionData};
pub use npm::{
    estimate_lambda_np, estimate_lambda_np_with, estimate_plugin_binary,
    estimate_plugin_directional, estimate_tau_np, estimate_tau_np_with, DiffRegression,
    DiffRegressionFactory, FrozenDiffRegression, FrozenScoreFactory, LocationScaleScoreFactory,
    ScoreEvaluator, ScoreFactory, ScoreNuisances, SmoothedForestFactory,
};
pub use plm::{estimate_theta_plm, estimate_theta_plm_with};

use crate::learn::{LearnError, Learner, LearnerKind, Matrix};
use crate::perturb::PerturbError;
use crate::score::{ScoreError, UnivariateMethod};
use crate::simplex::SimplexError;
use crate::smooth::SmoothError;
use crate::stats;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("need at least {need} samples for this estimator, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("all samples are already at the perturbation endpoint (P(L=0) = 0); the effect is undefined")]
    NoUntreated,
    #[error("no samples at the perturbation endpoint (L = 1 never occurs); the conditional mean at the endpoint cannot be fit")]
    NoTreated,
    #[error("binary-effect estimator received a non-binary L value {0}")]
    NonBinaryL(f64),
    #[error("denominator J = E[(L - m(W))^2] is degenerate ({0}); L is fully explained by W")]
    DegenerateJ(f64),
    #[error("regressor is constant; the marginal slope is undefined")]
    ConstantRegressor,
    #[error("all samples have zero perturbation speed; nothing to estimate from")]
    AllZeroSpeed,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

/// One observation after reparametrization.
#[derive(Debug, Clone)]
pub struct ReparametrizedSample {
    pub y: f64,
    pub l: f64,
    pub w: Vec<f64>,
    /// Marks points with vanishing perturbation speed; they carry no
    /// derivative information and are excluded from directional fits.
    pub zero_speed: bool,
}

impl ReparametrizedSample {
    pub fn new(y: f64, l: f64, w: Vec<f64>) -> Self {
        Self { y, l, w, zero_speed: false }
    }
}

/// The estimator menu exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Npm,
    NpmNoCrossfit,
    Plm,
    PlmNoCrossfit,
    Plugin,
    PluginNoCrossfit,
    OlsMarginal,
}

impl Method {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "npm" => Some(Self::Npm),
            "npm_no_crossfit" => Some(Self::NpmNoCrossfit),
            "plm" => Some(Self::Plm),
            "plm_no_crossfit" => Some(Self::PlmNoCrossfit),
            "plugin" => Some(Self::Plugin),
            "plugin_no_crossfit" => Some(Self::PluginNoCrossfit),
            "ols_marginal" => Some(Self::OlsMarginal),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Npm => "npm",
            Self::NpmNoCrossfit => "npm_no_crossfit",
            Self::Plm => "plm",
            Self::PlmNoCrossfit => "plm_no_crossfit",
            Self::Plugin => "plugin",
            Self::PluginNoCrossfit => "plugin_no_crossfit",
            Self::OlsMarginal => "ols_marginal",
        }
    }

    pub fn crossfit(&self) -> bool {
        !matches!(self, Self::NpmNoCrossfit | Self::PlmNoCrossfit | Self::PluginNoCrossfit)
    }
}

/// Estimator configuration. `learner` backs every nuisance regression unless
/// a per-role override is set.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub n_folds: usize,
    pub crossfit: bool,
    pub learner: LearnerKind,
    pub outcome_learner: Option<LearnerKind>,
    pub propensity_learner: Option<LearnerKind>,
    pub l_mean_learner: Option<LearnerKind>,
    pub l_variance_learner: Option<LearnerKind>,
    pub score_method: UnivariateMethod,
    pub seed: u64,
    pub alpha: f64,
    /// Explicit fold membership (one id per sample), overriding the seeded
    /// shuffle. Fold labels are canonicalized internally, so relabelings of
    /// the same partition produce bit-identical estimates.
    pub fold_override: Option<Vec<usize>>,
}

impl EstimatorConfig {
    pub fn new(learner: LearnerKind, seed: u64) -> Self {
        Self {
            n_folds: 2,
            crossfit: true,
            learner,
            outcome_learner: None,
            propensity_learner: None,
            l_mean_learner: None,
            l_variance_learner: None,
            score_method: UnivariateMethod::PenalizedSpline,
            seed,
            alpha: 0.05,
            fold_override: None,
        }
    }

    pub(crate) fn outcome(&self) -> &LearnerKind {
        self.outcome_learner.as_ref().unwrap_or(&self.learner)
    }

    pub(crate) fn propensity(&self) -> &LearnerKind {
        self.propensity_learner.as_ref().unwrap_or(&self.learner)
    }

    pub(crate) fn l_mean(&self) -> &LearnerKind {
        self.l_mean_learner.as_ref().unwrap_or(&self.learner)
    }

    pub(crate) fn l_variance(&self) -> &LearnerKind {
        self.l_variance_learner.as_ref().unwrap_or(&self.learner)
    }
}

/// Point estimate with asymptotic variance (per-sqrt(n) scale), confidence
/// interval and two-sided normal p-value.
#[derive(Debug, Clone)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub method: String,
    pub alpha: f64,
    pub n_used: usize,
    pub n_zero_speed: usize,
    pub notes: Vec<String>,
}

impl EffectEstimate {
    /// Assembles the estimate from its asymptotic variance; `n_scale` is the
    /// sample count entering the sqrt(n) normalization of the interval.
    pub fn from_asymptotics(
        estimate: f64,
        variance: f64,
        n_scale: usize,
        method: &str,
        alpha: f64,
    ) -> Self {
        let mut notes = Vec::new();
        let variance = if variance < 0.0 {
            notes.push(format!("variance estimate {variance:.3e} floored at 0"));
            0.0
        } else {
            variance
        };
        let (ci_low, ci_high) = confidence_interval(estimate, variance, n_scale, alpha);
        let std_error = (variance / n_scale as f64).sqrt();
        Self {
            estimate,
            variance,
            std_error,
            ci_low,
            ci_high,
            p_value: p_value(estimate, variance, n_scale),
            method: method.to_string(),
            alpha,
            n_used: n_scale,
            n_zero_speed: 0,
            notes,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// Two-sided normal confidence interval: estimate +- z_{1-alpha/2} sqrt(variance/n).
pub fn confidence_interval(estimate: f64, variance: f64, n: usize, alpha: f64) -> (f64, f64) {
    let se = (variance.max(0.0) / n as f64).sqrt();
    let z = stats::normal_quantile(1.0 - alpha / 2.0);
    (estimate - z * se, estimate + z * se)
}

/// Two-sided normal p-value; a zero variance gives p in {0, 1}.
pub fn p_value(estimate: f64, variance: f64, n: usize) -> f64 {
    let se = (variance.max(0.0) / n as f64).sqrt();
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (1.0 - stats::normal_cdf((estimate / se).abs()))
}

/// Re-weights an estimate computed on the non-zero-speed subsample back to
/// the full sample: estimate *= p_hat, variance becomes
/// p_hat sigma^2 + estimate^2 p_hat (1 - p_hat), intervals over n_total.
pub fn with_zero_speed_correction(
    inner: EffectEstimate,
    p_hat: f64,
    n_total: usize,
    n_zero_speed: usize,
) -> EffectEstimate {
    assert!((0.0..=1.0).contains(&p_hat), "p_hat must be a fraction");
    let estimate = inner.estimate * p_hat;
    let variance = p_hat * inner.variance + inner.estimate * inner.estimate * p_hat * (1.0 - p_hat);
    let mut out =
        EffectEstimate::from_asymptotics(estimate, variance, n_total, &inner.method, inner.alpha);
    out.n_used = inner.n_used;
    out.n_zero_speed = n_zero_speed;
    let mut notes = inner.notes;
    notes.append(&mut out.notes);
    out.notes = notes;
    out
}

/// OLS slope of y on a single regressor with heteroskedasticity-robust
/// (sandwich) standard errors; the marginal baseline of the naive analyses.
pub fn estimate_marginal_ols(
    y: &[f64],
    l: &[f64],
    alpha: f64,
) -> Result<EffectEstimate, EstimateError> {
    let n = y.len();
    if n < 3 {
        return Err(EstimateError::InsufficientData { need: 3, got: n });
    }
    assert_eq!(y.len(), l.len());
    let l_mean = stats::mean(l);
    let y_mean = stats::mean(y);
    let sxx: f64 = l.iter().map(|v| (v - l_mean) * (v - l_mean)).sum();
    if sxx <= 1e-12 * n as f64 {
        return Err(EstimateError::ConstantRegressor);
    }
    let sxy: f64 = l.iter().zip(y).map(|(a, b)| (a - l_mean) * (b - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * l_mean;
    // HC0 sandwich variance of the slope
    let meat: f64 = l
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let resid = b - intercept - slope * a;
            (a - l_mean) * (a - l_mean) * resid * resid
        })
        .sum();
    let var_slope = meat / (sxx * sxx);
    // express on the per-sqrt(n) asymptotic scale
    let variance = var_slope * n as f64;
    Ok(EffectEstimate::from_asymptotics(slope, variance, n, "ols_marginal", alpha))
}

/// A recipe for fitting a plain regression; implemented by [`LearnerKind`]
/// and by frozen (oracle) functions in tests.
pub trait FitRegression: Sync {
    fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<Box<dyn Learner>, LearnError>;
}

impl FitRegression for LearnerKind {
    fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<Box<dyn Learner>, LearnError> {
        LearnerKind::fit(self, x, y, seed)
    }
}

/// A regression "fit" that ignores the data and returns a fixed function.
#[derive(Clone)]
pub struct FrozenRegression(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

struct ArcLearner(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl Learner for ArcLearner {
    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl FitRegression for FrozenRegression {
    fn fit(&self, _x: &Matrix, _y: &[f64], _seed: u64) -> Result<Box<dyn Learner>, LearnError> {
        Ok(Box::new(ArcLearner(self.0.clone())))
    }
}

/// Fold membership lists with canonical labels: folds are ordered by their
/// smallest member index, which makes estimates invariant to relabelings of
/// the same partition.
pub(crate) fn build_folds(n: usize, config: &EstimatorConfig, crossfit: bool) -> Vec<Vec<usize>> {
    if !crossfit {
        return vec![(0..n).collect()];
    }
    let assign = match &config.fold_override {
        Some(a) => {
            assert_eq!(a.len(), n, "fold override length mismatch");
            a.clone()
        }
        None => crate::learn::fold_assignment(
            n,
            config.n_folds,
            crate::learn::derive_seed(config.seed, 0xF0),
        ),
    };
    let max_label = assign.iter().copied().max().unwrap_or(0);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for (i, &f) in assign.iter().enumerate() {
        folds[f].push(i);
    }
    folds.retain(|f| !f.is_empty());
    folds.sort_by_key(|f| f[0]);
    folds
}

pub(crate) fn gather_samples(samples: &[ReparametrizedSample]) -> (Vec<f64>, Vec<f64>, Matrix) {
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let l: Vec<f64> = samples.iter().map(|s| s.l).collect();
    let w = Matrix::from_rows(samples.iter().map(|s| s.w.clone()).collect());
    (y, l, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_interval_known_values() {
        // se = 0.5 at alpha 0.05: 1 +- 1.96 * 0.5
        let (lo, hi) = confidence_interval(1.0, 0.25 * 4.0, 4, 0.05);
        assert!((lo - 0.02).abs() < 1e-3, "{lo}");
        assert!((hi - 1.98).abs() < 1e-3, "{hi}");
        assert_eq!(p_value(0.0, 1.0, 10), 1.0);
        // estimate two standard errors out
        let p = p_value(2.0, 1.0, 1);
        assert!((p - 0.0455).abs() < 1e-3, "{p}");
        // degenerate variance
        assert_eq!(p_value(1.0, 0.0, 5), 0.0);
    }

    #[test]
    fn zero_speed_correction_formulas() {
        let inner = EffectEstimate::from_asymptotics(2.0, 4.0, 50, "plm", 0.05);
        let out = with_zero_speed_correction(inner.clone(), 1.0, 50, 0);
        assert_eq!(out.estimate, 2.0);
        assert_eq!(out.variance, 4.0);

        let out = with_zero_speed_correction(inner.clone(), 0.5, 100, 50);
        assert_eq!(out.estimate, 1.0);
        assert!((out.variance - 3.0).abs() < 1e-12, "{}", out.variance);
        assert_eq!(out.n_zero_speed, 50);

        let out = with_zero_speed_correction(inner, 0.0, 100, 100);
        assert_eq!(out.estimate, 0.0);
        assert_eq!(out.variance, 0.0);
    }

    #[test]
    fn marginal_ols_exact_line() {
        let l: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = l.iter().map(|v| 3.0 * v).collect();
        let est = estimate_marginal_ols(&y, &l, 0.05).unwrap();
        assert!((est.estimate - 3.0).abs() < 1e-12);
        assert!(est.std_error < 1e-10);
        assert!(matches!(
            estimate_marginal_ols(&y, &vec![1.0; 10], 0.05),
            Err(EstimateError::ConstantRegressor)
        ));
    }

    #[test]
    fn marginal_ols_null_coverage() {
        use rand::{RngExt, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut covered = 0;
        for rep in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(rep);
            let n = 200;
            let l: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = 1.0 - rng.random::<f64>();
                    let u2: f64 = rng.random::<f64>();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let est = estimate_marginal_ols(&y, &l, 0.05).unwrap();
            if est.estimate.abs() < 3.0 * est.std_error {
                covered += 1;
            }
        }
        assert!(covered >= 90, "null |slope| < 3 se in only {covered}/100 reps");
    }

    #[test]
    fn folds_are_canonicalized() {
        let mut config = EstimatorConfig::new(LearnerKind::Mean, 0);
        config.fold_override = Some(vec![1, 0, 1, 0, 1, 0]);
        let a = build_folds(6, &config, true);
        config.fold_override = Some(vec![0, 1, 0, 1, 0, 1]);
        let b = build_folds(6, &config, true);
        assert_eq!(a, b);
    }
}
