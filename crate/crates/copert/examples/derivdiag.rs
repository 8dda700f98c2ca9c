// derivative quality of the smoothed regression on the cont_plm setting
use copert::estimate::{DiffRegressionFactory, SmoothedForestFactory};
use copert::learn::{FeatureSubsampling, ForestParams, LearnerKind, Matrix};
use copert::sim::{generate, SimData, SimSetting, SimSettingKind};

fn main() {
    let setting = SimSetting::new(SimSettingKind::ContPlm, 1000, 3, 5);
    let generated = generate(&setting);
    let SimData::Reparametrized { samples, .. } = &generated.data else { panic!() };
    let (train, test) = samples.split_at(500);
    let l_train: Vec<f64> = train.iter().map(|s| s.l).collect();
    let y_train: Vec<f64> = train.iter().map(|s| s.y).collect();
    let w_train = Matrix::from_rows(train.iter().map(|s| s.w.clone()).collect());
    let l_test: Vec<f64> = test.iter().map(|s| s.l).collect();
    let w_test = Matrix::from_rows(test.iter().map(|s| s.w.clone()).collect());

    for (mtry, min_leaf) in [
        (FeatureSubsampling::All, 5usize),
        (FeatureSubsampling::Sqrt, 5),
        (FeatureSubsampling::All, 25),
        (FeatureSubsampling::All, 50),
        (FeatureSubsampling::Sqrt, 25),
        (FeatureSubsampling::Sqrt, 50),
        (FeatureSubsampling::All, 100),
    ] {
        let mut factory = SmoothedForestFactory::new(LearnerKind::parse("cv").unwrap());
        factory.forest = ForestParams { mtry, min_leaf, min_split: 2 * min_leaf, ..Default::default() };
        let fit = factory.fit(&l_train, &w_train, &y_train, 7).unwrap();
        let (_, derivs) = fit.values_and_derivatives(&l_test, &w_test).unwrap();
        let mean = derivs.iter().sum::<f64>() / derivs.len() as f64;
        let sd = (derivs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / derivs.len() as f64).sqrt();
        println!("mtry {mtry:?} min_leaf {min_leaf}: mean deriv {mean:.3} (sd {sd:.3}), truth 1.0");
    }
}
