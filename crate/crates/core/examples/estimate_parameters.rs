//! Fit the five parameters of the S-S model by Differential Evolution and
//! compare the identifiable ratios with the truth.

use pbm::bench::{generate_synthetic, generator_solver, GroundTruth, InputSignal, NoiseSpec, RATIO_NAMES};
use pbm::estimate::{estimate, DEConfig};
use pbm::simulate::{Denominator, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = GroundTruth::default();
    let data = generate_synthetic(&gt, &InputSignal::steps(500, 0), &NoiseSpec::new(0.01, 1), &generator_solver())?;
    let de = DEConfig { budget_per_param: 3000, seed: 7, ..DEConfig::default() };
    let fit = estimate(
        &GroundTruth::model(),
        &data,
        &["h1".into(), "h2".into()],
        &de,
        &SolverConfig::default(),
        Denominator::AsPrinted,
    )?;
    println!("training RRMSE {:.4} after {} evaluations", fit.error, fit.evals);
    for (name, v) in fit.names.iter().zip(&fit.params) {
        println!("  {name:8} {v:10.5}");
    }
    let p = &fit.params;
    let found = [p[1] / p[0], p[4] / p[0], p[3] / p[2], p[1] / p[2]];
    for ((name, f), t) in RATIO_NAMES.iter().zip(found).zip(gt.ratios()) {
        println!("  {name:6} fitted {f:.5} truth {t:.5} rel. error {:.2}%", 100.0 * (f / t - 1.0).abs());
    }
    Ok(())
}
