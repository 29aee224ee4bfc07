//! Parse the bundled water-tank library and scenario, list what they
//! declare, and show how a malformed file is reported.

use pbm::assets;
use pbm::dsl::{parse_library, parse_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    println!("entity templates:");
    for name in lib.entities.keys() {
        println!("  {name}");
    }
    println!("process hierarchies:");
    for root in lib.roots() {
        if root.children.is_empty() {
            println!("  {} (no alternatives)", root.name);
        } else {
            println!("  {} -> {}", root.name, root.children.join(", "));
        }
    }

    let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
    println!("scenario: {} entities, {} processes", sc.entities.len(), sc.processes.len());

    let broken = assets::WATERTANKS_PBL.replacen("template", "tmplate", 1);
    match parse_library(&broken) {
        Ok(_) => println!("unexpectedly parsed"),
        Err(e) => println!("malformed library rejected: {e}"),
    }
    Ok(())
}
