// quick diagnostic: winner distribution + losses on pure noise
use copert::learn::{fit_cv_select, CvSelector, Matrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn main() {
    let mut wins = [0usize; 3];
    let mut loss_sums = [0.0f64; 3];
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let fit = fit_cv_select(&Matrix::from_rows(rows), &y, &CvSelector::standard_menu(), trial).unwrap();
        wins[fit.selected] += 1;
        for c in 0..3 { loss_sums[c] += fit.cv_losses[c] / 50.0; }
    }
    println!("wins mean/shallow/deep: {wins:?}");
    println!("avg losses: {loss_sums:?}");
}
