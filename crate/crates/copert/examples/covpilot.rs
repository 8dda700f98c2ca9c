use copert::estimate::Method;
use copert::sim::{run_coverage, SimSetting, SimSettingKind};
use std::time::Instant;

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(20);
    let d: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(3);
    let which = std::env::args().nth(3).unwrap_or_else(|| "all".to_string());
    let kinds: Vec<SimSettingKind> = match which.as_str() {
        "plm" => vec![SimSettingKind::BinaryPlm, SimSettingKind::ContPlm],
        "np" => vec![SimSettingKind::BinaryNp, SimSettingKind::ContNp],
        "toys" => vec![SimSettingKind::MicrobeToy, SimSettingKind::DiversityToy],
        _ => vec![
            SimSettingKind::BinaryPlm,
            SimSettingKind::ContPlm,
            SimSettingKind::BinaryNp,
            SimSettingKind::ContNp,
        ],
    };
    for kind in kinds {
        let setting = SimSetting::new(kind, 1000, d, 0);
        let methods: Vec<Method> = if kind.is_toy() {
            vec![Method::Plm, Method::OlsMarginal]
        } else {
            vec![Method::Plm, Method::Npm, Method::Plugin]
        };
        let t = Instant::now();
        let report = run_coverage(&[setting], &methods, reps, 1000);
        for row in &report.rows {
            println!(
                "{} d={} {}: coverage {:.2} mean {:.3} width {:.3} failures {} ({:?} total)",
                row.setting, row.d, row.estimator, row.coverage, row.mean_estimate,
                row.mean_ci_width, row.failures, t.elapsed()
            );
        }
    }
}
