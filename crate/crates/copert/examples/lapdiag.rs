use copert::score::{fit_univariate_score, UnivariateMethod};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn main() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let xs: Vec<f64> = (0..5000).map(|_| laplace(&mut rng)).collect();
        let s = fit_univariate_score(&xs, UnivariateMethod::PenalizedSpline).unwrap();
        let mut msg = String::new();
        let mut worst: f64 = 0.0;
        for &x in &[0.5f64, 0.8, 1.2, 1.6, 2.0] {
            for sign in [1.0, -1.0] {
                let dev = (s.evaluate(sign * x) + sign).abs();
                if dev > worst { worst = dev; msg = format!("x={:.1}", sign * x); }
            }
        }
        println!("seed {seed}: worst {worst:.3} at {msg}");
    }
}
