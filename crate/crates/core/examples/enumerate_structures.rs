//! Enumerate the candidate structures of the water-tank task, first with
//! the square-root/linear/exponential library (9 structures), then with the
//! power-law extension (16), and print the equations of one of them.

use pbm::assets;
use pbm::bench::GroundTruth;
use pbm::dsl::{parse_library, parse_scenario};
use pbm::modelspace::{compile, enumerate, format_model, instantiate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (label, text) in [("base", assets::WATERTANKS_PBL), ("power", assets::WATERTANKS_POWER_PBL)] {
        let lib = parse_library(text)?;
        let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
        let all = enumerate(&instantiate(&lib, &sc)?);
        let ids: Vec<&str> = all.iter().map(|s| s.id.as_str()).collect();
        println!("{label} library: {} structures: {}", all.len(), ids.join(" "));
    }

    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
    let ss = enumerate(&instantiate(&lib, &sc)?).into_iter().find(|s| s.id == "S-S").expect("S-S is enumerated");
    let model = compile(&ss, &sc)?;
    println!();
    print!("{}", format_model(&ss, &model, &GroundTruth::default().params()));
    Ok(())
}
