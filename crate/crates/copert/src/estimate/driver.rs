//! From raw compositional data to an effect estimate: reparametrize, filter
//! zero-speed points, run the requested estimator, and re-weight the result
//! back to the full sample.

use super::{
    estimate_lambda_np, estimate_marginal_ols, estimate_plugin_binary,
    estimate_plugin_directional, estimate_tau_np, estimate_theta_plm, with_zero_speed_correction,
    EffectEstimate, EstimateError, EstimatorConfig, Method, ReparametrizedSample,
};
use crate::learn::Matrix;
use crate::perturb::{is_zero_speed, phi_l, reparametrize, EffectSpec, PerturbError, Reparam};
use crate::simplex::{Composition, SimplexError};

/// Response, compositions, and optional extra adjustment covariates that are
/// appended to W before the nuisance regressions.
pub struct CompositionData<'a> {
    pub y: &'a [f64],
    pub z: &'a [Composition],
    pub extra: Option<&'a Matrix>,
}

impl CompositionData<'_> {
    fn validate(&self) -> Result<(), EstimateError> {
        let n = self.y.len();
        if n == 0 {
            return Err(EstimateError::InsufficientData { need: 1, got: 0 });
        }
        if self.z.len() != n {
            return Err(EstimateError::Simplex(SimplexError::DimensionMismatch {
                left: n,
                right: self.z.len(),
            }));
        }
        if let Some(extra) = self.extra {
            if extra.n_rows() != n {
                return Err(EstimateError::Simplex(SimplexError::DimensionMismatch {
                    left: n,
                    right: extra.n_rows(),
                }));
            }
        }
        let dim = self.z[0].dim();
        if self.z.iter().any(|z| z.dim() != dim) {
            return Err(EstimateError::Simplex(SimplexError::DimensionMismatch {
                left: dim,
                right: 0,
            }));
        }
        Ok(())
    }
}

/// Runs a method directly on already-reparametrized samples (as the
/// simulation harness does); `binary` selects between the binary-effect and
/// directional-effect estimators.
pub fn estimate_samples(
    samples: &[ReparametrizedSample],
    binary: bool,
    method: Method,
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    let mut config = config.clone();
    config.crossfit = method.crossfit();
    let mut est = match (binary, method) {
        (true, Method::Npm | Method::NpmNoCrossfit) => estimate_lambda_np(samples, &config)?,
        (true, Method::Plugin | Method::PluginNoCrossfit) => {
            estimate_plugin_binary(samples, &config)?
        }
        (false, Method::Npm | Method::NpmNoCrossfit) => estimate_tau_np(samples, &config)?,
        (false, Method::Plugin | Method::PluginNoCrossfit) => {
            estimate_plugin_directional(samples, &config)?
        }
        (_, Method::Plm | Method::PlmNoCrossfit) => estimate_theta_plm(samples, &config)?,
        (_, Method::OlsMarginal) => {
            let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
            let l: Vec<f64> = samples.iter().map(|s| s.l).collect();
            estimate_marginal_ols(&y, &l, config.alpha)?
        }
    };
    est.method = method.label().to_string();
    Ok(est)
}

/// Estimates the requested effect on compositional data with the given
/// method. Directional estimates on data containing zero-speed points are
/// computed on the non-zero-speed subsample and re-weighted.
pub fn estimate_effect(
    data: &CompositionData,
    spec: &EffectSpec,
    method: Method,
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    data.validate()?;
    spec.check_dim(data.z[0].dim())?;
    let mut config = config.clone();
    config.crossfit = method.crossfit();

    let mut est = if spec.is_binary() {
        estimate_binary(data, spec, method, &config)?
    } else {
        estimate_directional(data, spec, method, &config)?
    };
    est.method = method.label().to_string();
    est.alpha = config.alpha;
    Ok(est)
}

fn with_extra(mut w: Vec<f64>, extra: Option<&Matrix>, i: usize) -> Vec<f64> {
    if let Some(x) = extra {
        w.extend_from_slice(x.row(i));
    }
    w
}

fn estimate_binary(
    data: &CompositionData,
    spec: &EffectSpec,
    method: Method,
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    let n = data.y.len();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        match reparametrize(spec, &data.z[i])? {
            Reparam::Binary(r) => {
                let w = with_extra(r.w.as_slice().to_vec(), data.extra, i);
                samples.push(ReparametrizedSample::new(
                    data.y[i],
                    if r.l { 1.0 } else { 0.0 },
                    w,
                ));
            }
            Reparam::Directional(_) => unreachable!("binary spec"),
        }
    }
    match method {
        Method::Npm | Method::NpmNoCrossfit => estimate_lambda_np(&samples, config),
        Method::Plm | Method::PlmNoCrossfit => estimate_theta_plm(&samples, config),
        Method::Plugin | Method::PluginNoCrossfit => estimate_plugin_binary(&samples, config),
        Method::OlsMarginal => {
            let l: Vec<f64> = samples.iter().map(|s| s.l).collect();
            estimate_marginal_ols(data.y, &l, config.alpha)
        }
    }
}

fn estimate_directional(
    data: &CompositionData,
    spec: &EffectSpec,
    method: Method,
    config: &EstimatorConfig,
) -> Result<EffectEstimate, EstimateError> {
    let n = data.y.len();

    if method == Method::OlsMarginal {
        // the marginal baseline regresses Y on the raw statistic; rows where
        // the statistic is undefined (e.g. the log odds of a zero) drop out
        let mut y = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        let mut excluded = 0usize;
        for i in 0..n {
            match phi_l(spec, &data.z[i]) {
                Ok(v) => {
                    y.push(data.y[i]);
                    l.push(v);
                }
                Err(PerturbError::LogOfZero(_)) => excluded += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let mut est = estimate_marginal_ols(&y, &l, config.alpha)?;
        est.n_zero_speed = excluded;
        if excluded > 0 {
            est.notes.push(format!("{excluded} rows with undefined L excluded"));
        }
        return Ok(est);
    }

    let mut samples = Vec::new();
    let mut n_zero = 0usize;
    for i in 0..n {
        if is_zero_speed(spec, &data.z[i])? {
            n_zero += 1;
            continue;
        }
        match reparametrize(spec, &data.z[i])? {
            Reparam::Directional(r) => {
                let w = with_extra(r.features(spec.endpoint_is_constant()), data.extra, i);
                samples.push(ReparametrizedSample::new(data.y[i], r.l, w));
            }
            Reparam::Binary(_) => unreachable!("directional spec"),
        }
    }
    if samples.is_empty() {
        // everything is filtered: the effect contribution is exactly zero
        let mut est =
            EffectEstimate::from_asymptotics(0.0, 0.0, n, method.label(), config.alpha);
        est.n_used = 0;
        est.n_zero_speed = n_zero;
        return Ok(est);
    }

    let inner = match method {
        Method::Npm | Method::NpmNoCrossfit => estimate_tau_np(&samples, config)?,
        Method::Plm | Method::PlmNoCrossfit => estimate_theta_plm(&samples, config)?,
        Method::Plugin | Method::PluginNoCrossfit => {
            estimate_plugin_directional(&samples, config)?
        }
        Method::OlsMarginal => unreachable!(),
    };
    if n_zero == 0 {
        return Ok(inner);
    }
    let p_hat = samples.len() as f64 / n as f64;
    let mut out = with_zero_speed_correction(inner, p_hat, n, n_zero);
    out.n_used = samples.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::LearnerKind;
    use crate::perturb::EffectSpec;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Mixed data: a fraction of rows has the first coordinate knocked out.
    fn mixed_zero_data(n: usize, seed: u64) -> (Vec<f64>, Vec<Composition>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let zero = rng.random::<f64>() < 0.3;
            let a = if zero { 0.0 } else { 0.2 + 0.5 * rng.random::<f64>() };
            let b = (1.0 - a) * rng.random::<f64>();
            let z = Composition::new(vec![a, b, 1.0 - a - b]).unwrap();
            ys.push(z[0] + 0.5 * z[1] + 0.1 * normal(&mut rng));
            zs.push(z);
        }
        (ys, zs)
    }

    #[test]
    fn zero_speed_rows_are_filtered_and_rescaled() {
        let (y, z) = mixed_zero_data(300, 1);
        let n_zero_truth = z.iter().filter(|z| z[0] == 0.0).count();
        let data = CompositionData { y: &y, z: &z, extra: None };
        let spec = EffectSpec::CfiMult { j: 0 };
        let mut config = EstimatorConfig::new(LearnerKind::Ridge { penalty: 1e-4 }, 3);
        config.n_folds = 2;
        let est = estimate_effect(&data, &spec, Method::Plm, &config).unwrap();
        assert_eq!(est.n_zero_speed, n_zero_truth);
        assert_eq!(est.n_used, 300 - n_zero_truth);

        // the corrected estimate is the subsample estimate times p-hat
        let subset: Vec<usize> = (0..300).filter(|&i| z[i][0] > 0.0).collect();
        let y_sub: Vec<f64> = subset.iter().map(|&i| y[i]).collect();
        let z_sub: Vec<Composition> = subset.iter().map(|&i| z[i].clone()).collect();
        let sub_data = CompositionData { y: &y_sub, z: &z_sub, extra: None };
        let inner = estimate_effect(&sub_data, &spec, Method::Plm, &config).unwrap();
        let p_hat = subset.len() as f64 / 300.0;
        assert!((est.estimate - inner.estimate * p_hat).abs() < 1e-12);
    }

    #[test]
    fn binary_effect_runs_end_to_end() {
        let (y, z) = mixed_zero_data(200, 2);
        let data = CompositionData { y: &y, z: &z, extra: None };
        let spec = EffectSpec::Cke { j: 0 };
        let mut config = EstimatorConfig::new(LearnerKind::Ridge { penalty: 1e-3 }, 5);
        config.n_folds = 2;
        for method in [Method::Npm, Method::Plm, Method::Plugin, Method::OlsMarginal] {
            let est = estimate_effect(&data, &spec, method, &config).unwrap();
            assert!(est.estimate.is_finite(), "{method:?}");
            assert_eq!(est.method, method.label());
        }
    }

    #[test]
    fn marginal_ols_excludes_undefined_l() {
        let (y, z) = mixed_zero_data(150, 4);
        let n_zero_truth = z.iter().filter(|z| z[0] == 0.0).count();
        let data = CompositionData { y: &y, z: &z, extra: None };
        let est = estimate_effect(
            &data,
            &EffectSpec::CfiMult { j: 0 },
            Method::OlsMarginal,
            &EstimatorConfig::new(LearnerKind::Mean, 0),
        )
        .unwrap();
        assert_eq!(est.n_zero_speed, n_zero_truth);
    }

    #[test]
    fn extra_covariates_change_the_fit() {
        let (y, z) = mixed_zero_data(200, 6);
        let extra_col: Vec<f64> = y.iter().map(|v| v * 0.5).collect();
        let extra = Matrix::from_column(&extra_col);
        let spec = EffectSpec::CdiGini;
        let mut config = EstimatorConfig::new(LearnerKind::Ridge { penalty: 1e-4 }, 7);
        config.n_folds = 2;
        let plain = estimate_effect(
            &CompositionData { y: &y, z: &z, extra: None },
            &spec,
            Method::Plm,
            &config,
        )
        .unwrap();
        let adjusted = estimate_effect(
            &CompositionData { y: &y, z: &z, extra: Some(&extra) },
            &spec,
            Method::Plm,
            &config,
        )
        .unwrap();
        assert!((plain.estimate - adjusted.estimate).abs() > 1e-8);
    }
}
