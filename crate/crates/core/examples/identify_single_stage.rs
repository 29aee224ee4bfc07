//! Enumerate, fit, validate and rank all nine structures on noisy synthetic
//! data in one stage.

use pbm::assets;
use pbm::bench::{generate_synthetic, generator_solver, GroundTruth, InputSignal, NoiseSpec};
use pbm::dsl::{parse_library, parse_scenario};
use pbm::estimate::DEConfig;
use pbm::search::{report, run_single_stage, ReportFormat, SearchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(
        &GroundTruth::default(),
        &InputSignal::steps(500, 0),
        &NoiseSpec::new(0.02, 4),
        &generator_solver(),
    )?;
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
    let cfg = SearchConfig { de: DEConfig { budget_per_param: 600, ..DEConfig::default() }, ..SearchConfig::default() };
    let results = run_single_stage(&lib, &sc, &data, &["h1".into(), "h2".into()], &cfg)?;
    print!("{}", report(&results, ReportFormat::Text));
    Ok(())
}
