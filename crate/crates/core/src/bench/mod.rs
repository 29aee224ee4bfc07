//! Water-tank benchmark harness: ground truth, synthetic data with
//! multiplicative noise, the recovery experiments and measured-data
//! ingestion.

mod experiments;

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use experiments::{
    parameter_recovery_experiment, power_exponent_experiment, structure_recovery_experiment, Mode, ParamRecovery,
    PowerRecovery, RatioErrors, StructureRecovery, RATIO_NAMES,
};

use crate::assets;
use crate::dsl::{parse_library, parse_scenario, DslError};
use crate::modelspace::{compile, enumerate, instantiate, CompiledModel, ModelError};
use crate::search::SearchError;
use crate::simulate::{simulate, DataError, Dataset, SimError, SolverConfig, Split};

/// The noise variances studied on synthetic data.
pub const VARIANCES: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];

/// Rows of the measured benchmark file.
pub const MEASURED_ROWS: usize = 2500;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("invalid input signal: {0}")]
    Input(String),
    #[error("noise variance must be finite and non-negative, got {0}")]
    Variance(f64),
    #[error("ground-truth simulation failed at sample {0}")]
    GroundTruthFailed(usize),
    #[error("structure `{0}` is not in the model space")]
    NoStructure(String),
}

/// The reference two-tank system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub a1: f64,
    pub big_a1: f64,
    pub a2: f64,
    pub big_a2: f64,
    pub k: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth { a1: 0.65, big_a1: 20.0, a2: 0.7, big_a2: 12.0, k: 5.0 }
    }
}

impl GroundTruth {
    pub const ID: &'static str = "S-S";
    pub const G: f64 = 4.429;
    pub const H1_0: f64 = 0.38086;
    pub const H2_0: f64 = 0.20508;

    /// Parameters in the compiled order `[tank1.A, tank1.a, tank2.A, tank2.a, pump.k]`.
    pub fn params(&self) -> [f64; 5] {
        [self.big_a1, self.a1, self.big_a2, self.a2, self.k]
    }

    /// The four identifiable ratios a1/A1, k/A1, a2/A2, a1/A2.
    pub fn ratios(&self) -> [f64; 4] {
        [self.a1 / self.big_a1, self.k / self.big_a1, self.a2 / self.big_a2, self.a1 / self.big_a2]
    }

    /// The S-S model compiled from the bundled library and scenario.
    pub fn model() -> CompiledModel {
        let lib = parse_library(assets::WATERTANKS_PBL).expect("bundled library parses");
        let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib).expect("bundled scenario parses");
        let s = enumerate(&instantiate(&lib, &sc).expect("bundled scenario instantiates"))
            .into_iter()
            .find(|s| s.id == Self::ID)
            .expect("S-S is enumerated");
        compile(&s, &sc).expect("S-S compiles")
    }
}

/// Pump voltage driving the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    /// A CSV with a `t` column and the named voltage column.
    File { path: PathBuf, column: String },
    /// Piecewise-constant levels drawn uniformly from `[lo, hi]`, each held
    /// for a uniform number of samples in `[dwell_lo, dwell_hi]`.
    Steps { lo: f64, hi: f64, dwell_lo: usize, dwell_hi: usize, n: usize, dt: f64, seed: u64 },
}

impl Default for InputSignal {
    fn default() -> Self {
        InputSignal::Steps { lo: 0.2, hi: 1.2, dwell_lo: 20, dwell_hi: 80, n: MEASURED_ROWS, dt: 4.0, seed: 0 }
    }
}

impl InputSignal {
    pub fn steps(n: usize, seed: u64) -> InputSignal {
        match InputSignal::default() {
            InputSignal::Steps { lo, hi, dwell_lo, dwell_hi, dt, .. } => {
                InputSignal::Steps { lo, hi, dwell_lo, dwell_hi, n, dt, seed }
            }
            InputSignal::File { .. } => unreachable!(),
        }
    }

    /// Time grid and voltage samples.
    pub fn generate(&self) -> Result<(Vec<f64>, Vec<f64>), BenchError> {
        match self {
            InputSignal::File { path, column } => {
                let d = Dataset::load(path)?;
                let u = d.require(column)?.to_vec();
                Ok((d.t().to_vec(), u))
            }
            &InputSignal::Steps { lo, hi, dwell_lo, dwell_hi, n, dt, seed } => {
                let valid = lo.is_finite()
                    && hi.is_finite()
                    && 0.0 <= lo
                    && lo < hi
                    && 1 <= dwell_lo
                    && dwell_lo <= dwell_hi
                    && n >= 2
                    && dt.is_finite()
                    && dt > 0.0;
                if !valid {
                    return Err(BenchError::Input(format!("{self:?}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut u = Vec::with_capacity(n + dwell_hi);
                while u.len() < n {
                    let level = rng.random_range(lo..=hi);
                    let dwell = rng.random_range(dwell_lo..=dwell_hi);
                    u.extend(std::iter::repeat_n(level, dwell));
                }
                u.truncate(n);
                Ok(((0..n).map(|i| i as f64 * dt).collect(), u))
            }
        }
    }
}

/// Multiplicative Gaussian output noise `y (1 + N(0, variance))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    /// Master seed; each (variance, output) pair draws from its own stream.
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { variance, seed }
    }

    /// Seed of the stream for one output, independent of which other
    /// variances or outputs are generated.
    pub fn sub_seed(&self, output: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.variance.to_bits().to_le_bytes());
        h.update(output.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Applies the noise to one output series.
    pub fn apply(&self, output: &str, y: &[f64]) -> Result<Vec<f64>, BenchError> {
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(BenchError::Variance(self.variance));
        }
        if self.variance == 0.0 {
            return Ok(y.to_vec());
        }
        let normal = Normal::new(0.0, self.variance.sqrt()).expect("finite positive sd");
        let mut rng = ChaCha8Rng::seed_from_u64(self.sub_seed(output));
        Ok(y.iter().map(|v| v * (1.0 + normal.sample(&mut rng))).collect())
    }
}

/// Split used for benchmark-shaped data: 1000/500/1000 for 2500 samples,
/// the same proportions otherwise.
pub fn benchmark_split(n: usize) -> Split {
    if n == MEASURED_ROWS {
        Split::from_sizes(1000, 500)
    } else {
        Split::proportional(n)
    }
}

/// Simulates the ground truth over the input and corrupts `h1` and `h2`.
/// The input column stays clean.
pub fn generate_synthetic(
    gt: &GroundTruth,
    input: &InputSignal,
    noise: &NoiseSpec,
    solver: &SolverConfig,
) -> Result<Dataset, BenchError> {
    let (t, u) = input.generate()?;
    let n = t.len();
    let mut data = Dataset::new(t, IndexMap::from([("u".to_string(), u)]))?.with_split(benchmark_split(n))?;
    let traj = simulate(&GroundTruth::model(), &gt.params(), &data, solver)?;
    if let Some(f) = traj.failure {
        return Err(BenchError::GroundTruthFailed(f.index));
    }
    for (k, col) in ["h1", "h2"].into_iter().enumerate() {
        data.set_column(col, noise.apply(col, &traj.values[k])?)?;
    }
    Ok(data)
}

/// Tolerances used to generate reference data, tight enough that
/// integration error is far below any fitting error.
pub fn generator_solver() -> SolverConfig {
    SolverConfig { abs_tol: 1e-12, rel_tol: 1e-10, ..SolverConfig::default() }
}

/// One dataset per variance, all sharing the same input signal and clean
/// trajectory.
pub fn synthetic_suite(
    gt: &GroundTruth,
    input: &InputSignal,
    variances: &[f64],
    seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<(f64, Dataset)>, BenchError> {
    let clean = generate_synthetic(gt, input, &NoiseSpec::new(0.0, seed), solver)?;
    variances
        .iter()
        .map(|&v| {
            let noise = NoiseSpec::new(v, seed);
            let mut d = clean.clone();
            for col in ["h1", "h2"] {
                let y = noise.apply(col, clean.require(col)?)?;
                d.set_column(col, y)?;
            }
            Ok((v, d))
        })
        .collect()
}

/// Reads a measured benchmark file: columns `t, u, h1, h2`, exactly 2500
/// rows on a uniform grid, split 1000/500/1000.
pub fn ingest_measured(path: impl AsRef<Path>) -> Result<Dataset, BenchError> {
    let data = Dataset::load(path)?;
    if data.len() != MEASURED_ROWS {
        return Err(DataError::RowCount { expected: MEASURED_ROWS, got: data.len() }.into());
    }
    for c in ["u", "h1", "h2"] {
        data.require(c)?;
    }
    Ok(data.with_split(Split::from_sizes(1000, 500))?)
}
