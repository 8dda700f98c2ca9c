// deviation of the KDE score from -x at |x|<=2, across seeds and bandwidth rules
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn kde(points: &[f64], h: f64, x: f64) -> (f64, f64) {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * points.len() as f64 * h);
    let (mut p, mut dp) = (0.0, 0.0);
    for &xi in points {
        let u = (x - xi) / h;
        let k = (-0.5 * u * u).exp();
        p += k;
        dp -= u * k / h;
    }
    (p * norm, dp * norm)
}

fn main() {
    for exponent in [0.2, 1.0 / 7.0, 1.0 / 9.0] {
        let mut worst_all: f64 = 0.0;
        let mut fails = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..5000).map(|_| normal(&mut rng)).collect();
            let sd = {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
            };
            let h = 0.9 * sd * (xs.len() as f64).powf(-exponent);
            let mut worst: f64 = 0.0;
            let mut g = -2.0;
            while g <= 2.0 {
                let (p, dp) = kde(&xs, h, g);
                let rho = dp / p;
                worst = worst.max((rho + g).abs());
                g += 0.25;
            }
            if worst > 0.2 { fails += 1; }
            worst_all = worst_all.max(worst);
        }
        println!("exp {exponent:.4}: worst dev {worst_all:.3}, fails(>0.2) {fails}/20");
    }
}
