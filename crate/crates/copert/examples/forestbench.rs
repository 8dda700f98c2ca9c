use copert::learn::{fit_cv_select, fit_forest, CvSelector, ForestParams, Learner, Matrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (n, p) in [(800usize, 15usize), (1000, 15), (3600, 5), (900, 3)] {
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() + rng.random::<f64>()).collect();
        let x = Matrix::from_rows(rows);
        let t = Instant::now();
        let m = fit_forest(&x, &y, &ForestParams::default(), 1).unwrap();
        let fit_time = t.elapsed();
        let t = Instant::now();
        let _ = m.predict(&x);
        let pred_time = t.elapsed();
        let t = Instant::now();
        let _ = fit_cv_select(&x, &y, &CvSelector::standard_menu(), 1).unwrap();
        let cv_time = t.elapsed();
        println!("n={n} p={p}: forest fit {fit_time:?}, predict {pred_time:?}, cv-select {cv_time:?}");
    }
}
