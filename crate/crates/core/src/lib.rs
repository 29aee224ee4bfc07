pub mod assets;
pub mod bench;
pub mod cli;
pub mod dsl;
pub mod estimate;
pub mod modelspace;
pub mod search;
pub mod simulate;
