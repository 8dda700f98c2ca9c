// oracle-score NPM mean across smoothing configurations
use copert::estimate::{estimate_tau_np_with, EstimatorConfig, FrozenScoreFactory, SmoothedForestFactory};
use copert::learn::{FeatureSubsampling, ForestParams, LearnerKind};
use copert::sim::{generate, SimData, SimSetting, SimSettingKind};
use std::sync::Arc;

fn main() {
    for (name, min_leaf, mtry) in [
        ("leaf n/10 sqrt", 0usize, FeatureSubsampling::Sqrt),
        ("leaf 25 sqrt", 25, FeatureSubsampling::Sqrt),
        ("leaf 35 sqrt", 35, FeatureSubsampling::Sqrt),
        ("leaf 80 sqrt", 80, FeatureSubsampling::Sqrt),
        ("leaf 50 all", 50, FeatureSubsampling::All),
    ] {
        let mut mean = 0.0;
        let reps = 10;
        for rep in 0..reps {
            let setting = SimSetting::new(SimSettingKind::ContPlm, 1000, 3, 3000 + rep);
            let generated = generate(&setting);
            let SimData::Reparametrized { samples, .. } = &generated.data else { panic!() };
            let mut config = EstimatorConfig::new(LearnerKind::parse("cv").unwrap(), 40 + rep);
            config.n_folds = 2;
            let mut diff = SmoothedForestFactory::new(config.learner.clone());
            if min_leaf > 0 {
                diff.adaptive_leaf = false;
                diff.forest = ForestParams { min_leaf, min_split: 2 * min_leaf, mtry, ..Default::default() };
            }
            let oracle = FrozenScoreFactory(Arc::new(|l: f64, w: &[f64]| {
                let b = if w[0] > 0.5 { 1.0 } else { 0.0 };
                -(l - b)
            }));
            let est = estimate_tau_np_with(samples, &config, &diff, &oracle).unwrap();
            mean += est.estimate / reps as f64;
        }
        println!("{name}: oracle-score npm mean {mean:.3}");
    }
}
