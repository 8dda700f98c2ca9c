use copert::score::{fit_univariate_score, UnivariateMethod};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn main() {
    let mut gauss_fail = 0;
    let mut lap_fail = 0;
    let mut gauss_worst: f64 = 0.0;
    let mut lap_worst: f64 = 0.0;
    for seed in 40..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..5000).map(|_| normal(&mut rng)).collect();
        let s = fit_univariate_score(&xs, UnivariateMethod::PenalizedSpline).unwrap();
        let mut worst: f64 = 0.0;
        let mut g = -2.0;
        while g <= 2.0 {
            worst = worst.max((s.evaluate(g) + g).abs());
            g += 0.25;
        }
        gauss_worst = gauss_worst.max(worst);
        if worst > 0.2 { gauss_fail += 1; }

        let xs: Vec<f64> = (0..5000).map(|_| laplace(&mut rng)).collect();
        let s = fit_univariate_score(&xs, UnivariateMethod::PenalizedSpline).unwrap();
        let mut worst: f64 = 0.0;
        for &x in &[0.5f64, 0.8, 1.2, 1.6, 2.0] {
            worst = worst.max((s.evaluate(x) + 1.0).abs());
            worst = worst.max((s.evaluate(-x) - 1.0).abs());
        }
        lap_worst = lap_worst.max(worst);
        if worst > 0.3 { lap_fail += 1; }
    }
    println!("gauss fails {gauss_fail}/20 worst {gauss_worst:.3}; laplace fails {lap_fail}/20 worst {lap_worst:.3}");
}
