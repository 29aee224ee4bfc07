//! Generate the six noisy variants of the benchmark data from one input
//! signal and write them as CSV files.

use pbm::bench::{generator_solver, synthetic_suite, GroundTruth, InputSignal, VARIANCES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pbm-synthetic");
    std::fs::create_dir_all(&dir)?;
    let suite = synthetic_suite(&GroundTruth::default(), &InputSignal::default(), &VARIANCES, 42, &generator_solver())?;
    for (v, data) in &suite {
        let path = dir.join(format!("tanks_v{v}.csv"));
        data.save(&path)?;
        let h2 = data.require("h2")?;
        let mean = h2.iter().sum::<f64>() / h2.len() as f64;
        println!("variance {v:<5} {} rows, mean h2 {mean:.4} -> {}", data.len(), path.display());
    }
    Ok(())
}
