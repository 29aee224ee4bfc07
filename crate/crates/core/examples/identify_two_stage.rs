//! Two-stage identification: the upper tank alone first, then the lower
//! tank driven by the measured upper level, with the winning valve form and
//! its fitted constants carried over.

use pbm::assets;
use pbm::bench::{generate_synthetic, generator_solver, GroundTruth, InputSignal, NoiseSpec};
use pbm::dsl::parse_library;
use pbm::estimate::DEConfig;
use pbm::search::{report, run_multi_stage, ReportFormat, SearchConfig, StagePlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data =
        generate_synthetic(&GroundTruth::default(), &InputSignal::steps(500, 0), &NoiseSpec::new(0.0, 0), &generator_solver())?;
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let plan = StagePlan::bundled_two_stage();
    let cfg = SearchConfig { de: DEConfig { budget_per_param: 1000, ..DEConfig::default() }, ..SearchConfig::default() };
    let out = run_multi_stage(&lib, &plan, &data, &cfg)?;
    for stage in &out.stages {
        println!("== {} (winner {}, tie: {})", stage.name, stage.results[0].id, stage.tie);
        print!("{}", report(&stage.results, ReportFormat::Text));
        println!("promoted: {}", serde_json::to_string(&stage.promoted)?);
    }
    println!("== final ranking");
    print!("{}", report(&out.results, ReportFormat::Text));
    Ok(())
}
