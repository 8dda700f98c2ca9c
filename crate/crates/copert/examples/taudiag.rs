// decompose the one-step correction on cont_plm
use copert::estimate::{
    estimate_tau_np_with, EstimatorConfig, FrozenScoreFactory, LocationScaleScoreFactory,
    SmoothedForestFactory,
};
use copert::learn::LearnerKind;
use copert::score::UnivariateMethod;
use copert::sim::{generate, SimData, SimSetting, SimSettingKind};
use std::sync::Arc;

fn main() {
    let mut sums = [0.0f64; 4];
    let reps = 10;
    for rep in 0..reps {
        let setting = SimSetting::new(SimSettingKind::ContPlm, 1000, 3, 3000 + rep);
        let generated = generate(&setting);
        let SimData::Reparametrized { samples, .. } = &generated.data else { panic!() };
        let mut config = EstimatorConfig::new(LearnerKind::parse("cv").unwrap(), 40 + rep);
        config.n_folds = 2;
        let diff = SmoothedForestFactory::new(config.learner.clone());
        // oracle score: L = B(W1) + xi, xi ~ N(0,1), median of W1 is 0.5 at d=3
        let oracle = FrozenScoreFactory(Arc::new(|l: f64, w: &[f64]| {
            let b = if w[0] > 0.5 { 1.0 } else { 0.0 };
            -(l - b)
        }));
        let spline = LocationScaleScoreFactory {
            mean: config.learner.clone(),
            variance: config.learner.clone(),
            method: UnivariateMethod::PenalizedSpline,
        };
        let kde = LocationScaleScoreFactory {
            mean: config.learner.clone(),
            variance: config.learner.clone(),
            method: UnivariateMethod::GaussianKernel,
        };
        let est_oracle = estimate_tau_np_with(samples, &config, &diff, &oracle).unwrap();
        let est_spline = estimate_tau_np_with(samples, &config, &diff, &spline).unwrap();
        let est_kde = estimate_tau_np_with(samples, &config, &diff, &kde).unwrap();
        let plugin = copert::estimate::estimate_plugin_directional(samples, &config).unwrap();
        sums[0] += plugin.estimate / reps as f64;
        sums[1] += est_oracle.estimate / reps as f64;
        sums[2] += est_spline.estimate / reps as f64;
        sums[3] += est_kde.estimate / reps as f64;
    }
    println!("plugin mean {:.3}; npm oracle-score {:.3}; npm spline {:.3}; npm kde {:.3}", sums[0], sums[1], sums[2], sums[3]);
}
