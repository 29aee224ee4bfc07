//! Load a measured-format benchmark file (t, u, h1, h2; 2500 rows) and run
//! single-stage identification on it. A synthetic stand-in is written first
//! when no path is given.

use pbm::assets;
use pbm::bench::{generate_synthetic, generator_solver, ingest_measured, GroundTruth, InputSignal, NoiseSpec};
use pbm::dsl::{parse_library, parse_scenario};
use pbm::estimate::DEConfig;
use pbm::search::{report, run_single_stage, ReportFormat, SearchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = std::env::temp_dir().join("pbm-measured-standin.csv");
            generate_synthetic(&GroundTruth::default(), &InputSignal::default(), &NoiseSpec::new(0.01, 5), &generator_solver())?
                .save(&p)?;
            p
        }
    };
    let data = ingest_measured(&path)?;
    println!("{}: {} rows, split {:?}", path.display(), data.len(), data.split());
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
    let cfg = SearchConfig { de: DEConfig { budget_per_param: 200, ..DEConfig::default() }, ..SearchConfig::default() };
    let results = run_single_stage(&lib, &sc, &data, &["h1".into(), "h2".into()], &cfg)?;
    print!("{}", report(&results, ReportFormat::Text));
    Ok(())
}
