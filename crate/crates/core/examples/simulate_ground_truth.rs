//! Simulate the reference two-tank model over a stepped pump voltage and
//! score a perturbed parameter set against it.

use pbm::bench::{generate_synthetic, generator_solver, GroundTruth, InputSignal, NoiseSpec};
use pbm::simulate::{multi_output_error, simulate, Denominator, Segment, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = GroundTruth::default();
    let data = generate_synthetic(&gt, &InputSignal::steps(1000, 3), &NoiseSpec::new(0.0, 0), &generator_solver())?;
    let model = GroundTruth::model();
    let outputs = ["h1".to_string(), "h2".to_string()];
    let range = data.range(Segment::Validation);

    let exact = simulate(&model, &gt.params(), &data, &SolverConfig::default())?;
    println!(
        "truth:     validation RRMSE {:.2e}  ({} steps, {} rejected)",
        multi_output_error(&exact, &data, &outputs, range.clone(), Denominator::AsPrinted)?.value,
        exact.stats.steps,
        exact.stats.rejected,
    );

    let mut p = gt.params();
    p[3] *= 1.2; // widen the lower outlet by 20%
    let off = simulate(&model, &p, &data, &SolverConfig::default())?;
    println!(
        "perturbed: validation RRMSE {:.4}",
        multi_output_error(&off, &data, &outputs, range, Denominator::AsPrinted)?.value
    );
    for i in (0..data.len()).step_by(200) {
        println!("t={:6.0}  h2 truth {:.4}  perturbed {:.4}", data.t()[i], exact.values[1][i], off.values[1][i]);
    }
    Ok(())
}
