use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::manifest::{FileDigest, RunManifest, MANIFEST_FILE};
use super::*;
use crate::bench::{
    generate_synthetic, generator_solver, parameter_recovery_experiment, power_exponent_experiment,
    structure_recovery_experiment, synthetic_suite, GroundTruth, InputSignal, NoiseSpec, RATIO_NAMES,
};
use crate::dsl::{library_json, parse_library, parse_scenario, scenario_json, Library, Scenario};
use crate::estimate::mean_std;
use crate::modelspace::{compile, enumerate, format_model, instantiate};
use crate::search::{
    report, run_multi_stage, run_single_stage, write_series, RankedResult, ReportFormat, StagePlan,
};
use crate::simulate::{rrmse, simulate, Dataset, Segment, Split};

pub(super) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate(a) => validate(&a),
        Command::Replay(a) => replay(&a),
        other => {
            let jobs = match &other {
                Command::Identify(a) => a.jobs,
                Command::Experiment(a) => a.jobs,
                _ => None,
            };
            let dir = in_pool(jobs, || execute(&other))??;
            println!("run directory: {}", dir.display());
            Ok(())
        }
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs a run-directory subcommand on the current thread pool and returns
/// the run directory.
pub fn execute(command: &Command) -> Result<PathBuf, CliError> {
    match command {
        Command::Identify(a) => identify(a),
        Command::Gendata(a) => gendata(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Validate(_) | Command::Replay(_) => {
            Err(CliError::Config("this subcommand does not produce a run directory".into()))
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn out(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))
}

fn load_library(path: &Path) -> Result<Library, CliError> {
    let text = read(path)?;
    parse_library(&text).map_err(|error| CliError::Dsl { path: path.display().to_string(), error })
}

fn load_scenario(path: &Path, lib: &Library) -> Result<Scenario, CliError> {
    let text = read(path)?;
    parse_scenario(&text, lib).map_err(|error| CliError::Dsl { path: path.display().to_string(), error })
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    std::fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    Ok(Dataset::load(path)?)
}

/// Creates a fresh run directory. An existing non-empty directory is
/// refused so that no run overwrites another.
fn run_dir(out: &Option<PathBuf>, subcommand: &str) -> Result<PathBuf, CliError> {
    let dir = match out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            root.join(format!("{subcommand}-{stamp}-{}", std::process::id()))
        }
    };
    if dir.exists() && std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?.next().is_some() {
        return Err(CliError::Config(format!("run directory `{}` is not empty", dir.display())));
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    std::path::absolute(&dir).map_err(|e| CliError::io(&dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<std::fs::File, CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let lib = load_library(&a.library)?;
    let sc = a.scenario.as_ref().map(|p| load_scenario(p, &lib)).transpose()?;
    let structures = match &sc {
        Some(sc) => {
            let all = enumerate(&instantiate(&lib, sc)?);
            for s in &all {
                compile(s, sc)?;
            }
            Some(all.len())
        }
        None => None,
    };
    if a.dump_ast {
        let mut doc = json!({ "library": library_json(&lib) });
        if let Some(sc) = &sc {
            doc["scenario"] = scenario_json(sc);
        }
        out(&(serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"));
    } else {
        let mut line = format!("ok: {} entity templates, {} process hierarchies", lib.entities.len(), lib.roots().count());
        if let Some(n) = structures {
            line += &format!(", {n} candidate structures");
        }
        out(&(line + "\n"));
    }
    Ok(())
}

fn parse_split(text: &str, n: usize) -> Result<Split, CliError> {
    let sizes: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("--split `{text}`: expected three sizes like 1000,500,1000")))?;
    match sizes.as_slice() {
        [tr, va, te] if tr + va + te == n && *tr > 0 && *va > 0 && *te > 0 => Ok(Split::from_sizes(*tr, *va)),
        _ => Err(CliError::Config(format!("--split `{text}` does not partition {n} samples"))),
    }
}

fn identify(a: &IdentifyArgs) -> Result<PathBuf, CliError> {
    let lib = load_library(&a.library)?;
    let mut data = load_data(&a.data)?;
    let split = match &a.split {
        Some(s) => parse_split(s, data.len())?,
        None => crate::bench::benchmark_split(data.len()),
    };
    data = data.with_split(split)?;
    let cfg = a.fit.search_config();
    cfg.de.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.solver.validate()?;

    let mut resolved = a.clone();
    resolved.library = absolute(&a.library)?;
    resolved.data = absolute(&a.data)?;
    let mut inputs = vec![FileDigest::of("library", &resolved.library)?, FileDigest::of("data", &resolved.data)?];
    enum Job {
        Single(Scenario),
        Multi(StagePlan),
    }
    let job = match a.mode {
        Mode::Single => {
            let path = a.scenario.as_ref().ok_or_else(|| CliError::Config("--scenario is required".into()))?;
            let sc = load_scenario(path, &lib)?;
            for o in &a.outputs {
                data.require(o)?;
            }
            resolved.scenario = Some(absolute(path)?);
            resolved.plan = None;
            inputs.push(FileDigest::of("scenario", resolved.scenario.as_ref().expect("set above"))?);
            Job::Single(sc)
        }
        Mode::Multi => {
            let plan = match &a.plan {
                Some(p) => {
                    resolved.plan = Some(absolute(p)?);
                    inputs.push(FileDigest::of("plan", resolved.plan.as_ref().expect("set above"))?);
                    StagePlan::load(p)?
                }
                None => StagePlan::bundled_two_stage(),
            };
            plan.validate(&lib)?;
            for o in plan.stages.iter().flat_map(|s| &s.outputs) {
                data.require(o)?;
            }
            resolved.scenario = None;
            Job::Multi(plan)
        }
    };
    resolved.out = None;
    let dir = run_dir(&a.out, "identify")?;
    resolved.out = Some(dir.clone());
    let config = json!({ "search": cfg, "split": split, "samples": data.len() });
    RunManifest::new(Command::Identify(resolved), inputs, config).write(&dir)?;

    match job {
        Job::Single(sc) => {
            let results = run_single_stage(&lib, &sc, &data, &a.outputs, &cfg)?;
            write_stage(&dir, &results, &data, &cfg.solver)?;
        }
        Job::Multi(plan) => {
            let out = run_multi_stage(&lib, &plan, &data, &cfg)?;
            let mut promoted = serde_json::Map::new();
            for (k, stage) in out.stages.iter().enumerate() {
                let stage_data = if k + 1 == out.stages.len() { &out.data } else { &data };
                write_stage(&dir.join(&stage.name), &stage.results, stage_data, &cfg.solver)?;
                promoted.insert(
                    stage.name.clone(),
                    json!({ "winner": stage.results[0].id, "tie": stage.tie, "promoted": stage.promoted }),
                );
            }
            write_file(&dir.join("stages.json"), serde_json::to_string_pretty(&promoted).expect("json") + "\n")?;
            write_tables(&dir, &out.results)?;
        }
    }
    Ok(dir)
}

fn write_tables(dir: &Path, results: &[RankedResult]) -> Result<(), CliError> {
    write_file(&dir.join("results.txt"), report(results, ReportFormat::Text))?;
    write_file(&dir.join("results.json"), report(results, ReportFormat::Json) + "\n")?;
    write_file(&dir.join("results.csv"), report(results, ReportFormat::Csv))
}

/// Ranked tables, per-model traces and equations, and the rank-1 series.
fn write_stage(
    dir: &Path,
    results: &[RankedResult],
    data: &Dataset,
    solver: &crate::simulate::SolverConfig,
) -> Result<(), CliError> {
    write_tables(dir, results)?;
    for r in results {
        let mut w = csv::Writer::from_writer(create(&dir.join("traces").join(format!("{}.csv", r.id)))?);
        w.write_record(["generation", "best_error", "mean_error"]).map_err(DataError::from)?;
        for p in &r.trace {
            w.write_record([p.generation.to_string(), p.best_error.to_string(), p.mean_error.to_string()])
                .map_err(DataError::from)?;
        }
        w.flush().map_err(DataError::Io)?;
        write_file(&dir.join("models").join(format!("{}.txt", r.id)), format_model(&r.structure, &r.model, &r.params))?;
    }
    let mut f = create(&dir.join("series_rank1.csv"))?;
    write_series(&results[0], data, solver, &mut f)?;
    f.flush().map_err(|e| CliError::io(dir, e))
}

fn gendata(a: &GendataArgs) -> Result<PathBuf, CliError> {
    if !(a.variance.is_finite() && a.variance >= 0.0) {
        return Err(CliError::Config(format!("--variance {} must be finite and non-negative", a.variance)));
    }
    let mut resolved = a.clone();
    let mut inputs = Vec::new();
    let input = match &a.input {
        Some(p) => {
            let p = absolute(p)?;
            inputs.push(FileDigest::of("input", &p)?);
            resolved.input = Some(p.clone());
            InputSignal::File { path: p, column: a.input_column.clone() }
        }
        None => match InputSignal::default() {
            InputSignal::Steps { lo, hi, dwell_lo, dwell_hi, .. } => {
                InputSignal::Steps { lo, hi, dwell_lo, dwell_hi, n: a.n, dt: a.dt, seed: a.input_seed }
            }
            InputSignal::File { .. } => unreachable!(),
        },
    };
    input.generate()?;
    let dir = run_dir(&a.out, "gendata")?;
    resolved.out = Some(dir.clone());
    let gt = GroundTruth::default();
    let noise = NoiseSpec::new(a.variance, a.seed);
    let solver = generator_solver();
    let config = json!({ "ground_truth": gt, "input": input, "noise": noise, "solver": solver });
    RunManifest::new(Command::Gendata(resolved), inputs, config).write(&dir)?;
    let data = generate_synthetic(&gt, &input, &noise, &solver)?;
    data.save(dir.join("data.csv"))?;
    Ok(dir)
}

fn ground_truth_params() -> BTreeMap<&'static str, f64> {
    let gt = GroundTruth::default();
    BTreeMap::from([
        ("tank1.A", gt.big_a1),
        ("tank1.a", gt.a1),
        ("tank2.A", gt.big_a2),
        ("tank2.a", gt.a2),
        ("pump.k", gt.k),
    ])
}

fn simulate_cmd(a: &SimulateArgs) -> Result<PathBuf, CliError> {
    let lib = load_library(&a.library)?;
    let sc = load_scenario(&a.scenario, &lib)?;
    let data = load_data(&a.data)?;
    let structure = enumerate(&instantiate(&lib, &sc)?)
        .into_iter()
        .find(|s| s.id == a.model)
        .ok_or_else(|| CliError::Invalid(format!("no structure `{}` in the scenario", a.model)))?;
    let model = compile(&structure, &sc)?;
    let mut given: BTreeMap<String, f64> = BTreeMap::new();
    if a.ground_truth {
        given.extend(ground_truth_params().into_iter().map(|(k, v)| (k.to_string(), v)));
    }
    for kv in &a.params {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--params `{kv}`: expected name=value")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("--params `{kv}`: bad number")))?;
        given.insert(k.trim().to_string(), v);
    }
    let params = model
        .params
        .iter()
        .map(|p| given.get(&p.name).copied().ok_or_else(|| CliError::Config(format!("missing value for `{}`", p.name))))
        .collect::<Result<Vec<f64>, _>>()?;
    let solver = crate::simulate::SolverConfig { abs_tol: a.abs_tol, rel_tol: a.rel_tol, hold: a.hold, ..Default::default() };
    solver.validate()?;

    let mut resolved = a.clone();
    resolved.library = absolute(&a.library)?;
    resolved.scenario = absolute(&a.scenario)?;
    resolved.data = absolute(&a.data)?;
    let inputs = vec![
        FileDigest::of("library", &resolved.library)?,
        FileDigest::of("scenario", &resolved.scenario)?,
        FileDigest::of("data", &resolved.data)?,
    ];
    let dir = run_dir(&a.out, "simulate")?;
    resolved.out = Some(dir.clone());
    RunManifest::new(Command::Simulate(resolved), inputs, json!({ "solver": solver })).write(&dir)?;

    let traj = simulate(&model, &params, &data, &solver)?;
    traj.write_csv(create(&dir.join("trajectory.csv"))?)?;
    write_file(&dir.join("model.txt"), format_model(&structure, &model, &params))?;
    if let Some(f) = traj.failure {
        println!("simulation failed at sample {} ({:?})", f.index, f.reason);
    }
    for (k, state) in model.states.iter().enumerate() {
        let Some(measured) = data.column(&state.column) else { continue };
        let score = |r: std::ops::Range<usize>| rrmse(measured, &traj.values[k], r, a.denominator).value;
        println!(
            "{}: RRMSE full {:.6e}, train {:.6e}, validation {:.6e}, test {:.6e}",
            state.column,
            score(0..data.len()),
            score(data.range(Segment::Train)),
            score(data.range(Segment::Validation)),
            score(data.range(Segment::Test)),
        );
    }
    Ok(dir)
}

fn experiment(a: &ExperimentArgs) -> Result<PathBuf, CliError> {
    if a.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CliError::Config("variances must be finite and non-negative".into()));
    }
    if a.reps == 0 {
        return Err(CliError::Config("--reps must be positive".into()));
    }
    let cfg = a.fit.search_config();
    cfg.de.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.solver.validate()?;
    let gt = GroundTruth::default();
    let input = InputSignal::steps(a.n, a.data_seed);
    input.generate()?;

    let dir = run_dir(&a.out, "experiment")?;
    let mut resolved = a.clone();
    resolved.out = Some(dir.clone());
    let config = json!({ "search": cfg, "input": input, "ground_truth": gt, "generator_solver": generator_solver() });
    RunManifest::new(Command::Experiment(resolved), Vec::new(), config).write(&dir)?;

    let suite = synthetic_suite(&gt, &input, &a.variances, a.data_seed, &generator_solver())?;
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| CliError::io(&data_dir, e))?;
    for (v, d) in &suite {
        d.save(data_dir.join(format!("v{v}.csv")))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    match a.kind {
        ExperimentKind::StructureRecovery => {
            let rows = structure_recovery_experiment(a.mode, &suite, &cfg)?;
            w.write_record(["variance", "rank1", "truth_rank", "gap", "rank1_validation", "rank1_test"])
                .map_err(DataError::from)?;
            let mut details = Vec::new();
            for r in &rows {
                w.write_record([
                    r.variance.to_string(),
                    r.results[0].id.clone(),
                    r.truth_rank.map(|k| k.to_string()).unwrap_or_default(),
                    r.gap.to_string(),
                    r.results[0].validation_error.to_string(),
                    r.results[0].test_error.to_string(),
                ])
                .map_err(DataError::from)?;
                let table: serde_json::Value =
                    serde_json::from_str(&report(&r.results, ReportFormat::Json)).expect("report is json");
                let stage1 = r.stage1.as_ref().map(|s| {
                    serde_json::from_str::<serde_json::Value>(&report(s, ReportFormat::Json)).expect("report is json")
                });
                details.push(json!({ "variance": r.variance, "results": table["results"], "stage1": stage1.map(|s| s["results"].clone()) }));
            }
            write_file(&dir.join("details.json"), serde_json::to_string_pretty(&details).expect("json") + "\n")?;
        }
        ExperimentKind::ParameterRecovery => {
            let rows = parameter_recovery_experiment(a.mode, &suite, a.reps, &gt, &cfg)?;
            let mut header = vec!["variance".to_string(), "reps".to_string()];
            header.extend(RATIO_NAMES.iter().map(|n| n.to_string()));
            w.write_record(&header).map_err(DataError::from)?;
            let mut per_rep = csv::Writer::from_writer(Vec::new());
            let mut rep_header = vec!["variance".to_string(), "seed".to_string()];
            rep_header.extend(RATIO_NAMES.iter().map(|n| format!("ratio {n}")));
            rep_header.extend(RATIO_NAMES.iter().map(|n| format!("error {n}")));
            per_rep.write_record(&rep_header).map_err(DataError::from)?;
            for r in &rows {
                let mut row = vec![r.variance.to_string(), r.reps.len().to_string()];
                row.extend((0..4).map(|i| r.median(i).to_string()));
                w.write_record(&row).map_err(DataError::from)?;
                for rep in &r.reps {
                    let mut row = vec![r.variance.to_string(), rep.seed.to_string()];
                    row.extend(rep.ratios.iter().map(|x| x.to_string()));
                    row.extend(rep.rel_errors.iter().map(|x| x.to_string()));
                    per_rep.write_record(&row).map_err(DataError::from)?;
                }
            }
            write_file(&dir.join("reps.csv"), per_rep.into_inner().expect("in-memory"))?;
        }
        ExperimentKind::PowerExponent => {
            let rows = power_exponent_experiment(&suite, a.reps, &cfg)?;
            w.write_record(["variance", "reps", "p_valve_mean", "p_valve_std", "p_outflow_mean", "p_outflow_std"])
                .map_err(DataError::from)?;
            for r in &rows {
                let (vm, vs) = mean_std(&r.p_valve);
                let (om, os) = mean_std(&r.p_outflow);
                w.write_record([
                    r.variance.to_string(),
                    r.p_valve.len().to_string(),
                    vm.to_string(),
                    vs.to_string(),
                    om.to_string(),
                    os.to_string(),
                ])
                .map_err(DataError::from)?;
            }
        }
    }
    write_file(&dir.join("summary.csv"), w.into_inner().expect("in-memory"))?;
    Ok(dir)
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let manifest = RunManifest::read(&a.run)?;
    for input in &manifest.inputs {
        input.check()?;
    }
    let out = match &a.out {
        Some(o) => o.clone(),
        None => {
            let mut name = a.run.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push("-replay");
            a.run.with_file_name(name)
        }
    };
    let mut command = manifest.command.clone();
    match &mut command {
        Command::Identify(c) => {
            c.out = Some(out);
            c.jobs = a.jobs;
        }
        Command::Experiment(c) => {
            c.out = Some(out);
            c.jobs = a.jobs;
        }
        Command::Gendata(c) => c.out = Some(out),
        Command::Simulate(c) => c.out = Some(out),
        Command::Validate(_) | Command::Replay(_) => {
            return Err(CliError::Config("manifest records a subcommand that cannot be replayed".into()))
        }
    }
    let dir = in_pool(a.jobs, || execute(&command))??;
    let diffs = compare_dirs(&a.run, &dir)?;
    if diffs.is_empty() {
        println!("replay identical: {}", dir.display());
        Ok(())
    } else {
        Err(CliError::ReplayMismatch(diffs))
    }
}

/// Relative paths of files that differ between two run directories,
/// ignoring the manifests.
pub(super) fn compare_dirs(a: &Path, b: &Path) -> Result<Vec<String>, CliError> {
    let fa = list_files(a)?;
    let fb = list_files(b)?;
    let mut diffs = Vec::new();
    for (rel, pa) in &fa {
        match fb.get(rel) {
            Some(pb) => {
                let x = std::fs::read(pa).map_err(|e| CliError::io(pa, e))?;
                let y = std::fs::read(pb).map_err(|e| CliError::io(pb, e))?;
                if x != y {
                    diffs.push(rel.clone());
                }
            }
            None => diffs.push(rel.clone()),
        }
    }
    diffs.extend(fb.keys().filter(|k| !fa.contains_key(*k)).cloned());
    Ok(diffs)
}

fn list_files(root: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = entry.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel != MANIFEST_FILE {
                    out.insert(rel, p);
                }
            }
        }
    }
    Ok(out)
}
