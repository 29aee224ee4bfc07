//! The water-tank library, scenarios and two-stage plan shipped with the
//! crate. The same files live under `assets/` for use from the command line.

pub const WATERTANKS_PBL: &str = include_str!("../assets/watertanks.pbl");
pub const WATERTANKS_POWER_PBL: &str = include_str!("../assets/watertanks_power.pbl");
pub const SINGLE_STAGE_PBS: &str = include_str!("../assets/single_stage.pbs");
pub const STAGE1_PBS: &str = include_str!("../assets/stage1.pbs");
pub const STAGE2_PBS: &str = include_str!("../assets/stage2.pbs");
pub const TWO_STAGE_PLAN: &str = include_str!("../assets/two_stage.plan.json");

/// Looks a bundled file up by its file name.
pub fn bundled(name: &str) -> Option<&'static str> {
    Some(match name {
        "watertanks.pbl" => WATERTANKS_PBL,
        "watertanks_power.pbl" => WATERTANKS_POWER_PBL,
        "single_stage.pbs" => SINGLE_STAGE_PBS,
        "stage1.pbs" => STAGE1_PBS,
        "stage2.pbs" => STAGE2_PBS,
        "two_stage.plan.json" => TWO_STAGE_PLAN,
        _ => return None,
    })
}
