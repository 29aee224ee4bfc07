//! Small versions of the benchmark studies: parameter recovery of the
//! square-root model and exponent recovery with power-law processes.

use pbm::bench::{
    generator_solver, parameter_recovery_experiment, power_exponent_experiment, synthetic_suite, GroundTruth,
    InputSignal, Mode, RATIO_NAMES,
};
use pbm::estimate::DEConfig;
use pbm::search::SearchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = GroundTruth::default();
    let suite = synthetic_suite(&gt, &InputSignal::steps(400, 0), &[0.0, 0.02], 0, &generator_solver())?;
    let cfg = SearchConfig { de: DEConfig { budget_per_param: 1500, ..DEConfig::default() }, ..SearchConfig::default() };

    for row in parameter_recovery_experiment(Mode::Single, &suite, 2, &gt, &cfg)? {
        let medians: Vec<String> =
            (0..4).map(|i| format!("{} {:.3}%", RATIO_NAMES[i], 100.0 * row.median(i))).collect();
        println!("variance {:<5} median ratio errors: {}", row.variance, medians.join(", "));
    }
    for row in power_exponent_experiment(&suite, 2, &cfg)? {
        let (pv, sv) = row.valve_mean_std();
        let (po, so) = row.outflow_mean_std();
        println!("variance {:<5} valve P {pv:.4} ± {sv:.1e}, outflow P {po:.4} ± {so:.1e}", row.variance);
    }
    Ok(())
}
