use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::assets::*;
use crate::dsl::{parse_library, parse_scenario};
use crate::modelspace::{compile, enumerate, instantiate};
use crate::simulate::simulate;

const GT: [f64; 5] = [20.0, 0.65, 12.0, 0.7, 5.0];

fn model(id: &str) -> CompiledModel {
    let lib = parse_library(WATERTANKS_PBL).unwrap();
    let sc = parse_scenario(SINGLE_STAGE_PBS, &lib).unwrap();
    let s = enumerate(&instantiate(&lib, &sc).unwrap()).into_iter().find(|s| s.id == id).unwrap();
    compile(&s, &sc).unwrap()
}

/// Noise-free two-tank data from the ground-truth parameters.
fn clean_data(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut u = Vec::new();
    while u.len() < n {
        let level = rng.random_range(0.2..1.2);
        u.extend(std::iter::repeat_n(level, rng.random_range(20..80)));
    }
    u.truncate(n);
    let t: Vec<f64> = (0..n).map(|i| 4.0 * i as f64).collect();
    let mut data = Dataset::new(t, IndexMap::from([("u".to_string(), u)])).unwrap();
    let tight = SolverConfig { abs_tol: 1e-12, rel_tol: 1e-10, ..SolverConfig::default() };
    let traj = simulate(&model("S-S"), &GT, &data, &tight).unwrap();
    data.set_column("h1", traj.values[0].clone()).unwrap();
    data.set_column("h2", traj.values[1].clone()).unwrap();
    data
}

fn outs() -> Vec<String> {
    vec!["h1".into(), "h2".into()]
}

fn quick(budget: usize, seed: u64) -> DEConfig {
    DEConfig { budget_per_param: budget, seed, ..DEConfig::default() }
}

#[test]
fn quadratic_minimum() {
    let m = minimize(&[(0.0, 10.0)], &DEConfig::default(), |p| (p[0] - 3.0).powi(2)).unwrap();
    assert!((m.x[0] - 3.0).abs() < 1e-6, "{}", m.x[0]);
    assert!(m.evals >= 50_000 - 60 && m.evals <= 50_000 + 60);
    assert_eq!(m.value, m.trace.last().unwrap().best_error);
}

#[test]
fn budget_accounting() {
    for (d, budget) in [(1, 100), (3, 250), (5, 61)] {
        let bounds = vec![(-1.0, 1.0); d];
        let m = minimize(&bounds, &quick(budget, 1), |p| p.iter().map(|x| x * x).sum()).unwrap();
        let total = d * budget;
        assert!(m.evals + 60 >= total && m.evals <= total + 60, "{} vs {total}", m.evals);
    }
}

#[test]
fn config_validation() {
    let bad = [
        DEConfig { pop_size: 3, ..DEConfig::default() },
        DEConfig { cr: 0.0, ..DEConfig::default() },
        DEConfig { cr: 1.5, ..DEConfig::default() },
        DEConfig { f: 0.0, ..DEConfig::default() },
        DEConfig { budget_per_param: 10, ..DEConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(minimize(&[(0.0, 1.0)], &cfg, |_| 0.0), Err(EstimateError::BadConfig(_))));
    }
    assert!(matches!(
        minimize(&[(0.0, 1.0), (2.0, 2.0)], &DEConfig::default(), |_| 0.0),
        Err(EstimateError::InfeasibleBounds { index: 1, .. })
    ));
    assert_eq!(DEConfig::default().scaled(0.1).budget_per_param, 5000);
    assert_eq!(DEConfig::default().scaled(1e-6).budget_per_param, 60);
}

#[test]
fn nan_counts_as_worst() {
    let m = minimize(&[(-1.0, 1.0)], &quick(200, 4), |p| if p[0] < 0.0 { f64::NAN } else { p[0] }).unwrap();
    assert!(m.value.is_finite() && m.x[0] >= 0.0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let data = clean_data(300);
    let m = model("S-L");
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate(&m, &data, &outs(), &quick(200, 9), &SolverConfig::default(), Denominator::AsPrinted))
            .unwrap()
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(a.trace, b.trace);
    assert!(a.params.iter().zip(&a.bounds).all(|(p, (lo, hi))| lo <= p && p <= hi));
}

#[test]
fn ground_truth_objective_is_near_zero() {
    let data = clean_data(1000);
    let e = objective(&model("S-S"), &GT, &data, &outs(), &SolverConfig::default(), Denominator::AsPrinted).unwrap();
    assert!(e < 1e-3, "{e}");
}

#[test]
fn failing_parameters_score_infinity() {
    let data = clean_data(200);
    let mut m = model("S-S");
    m.states[0].initial = -0.1;
    let e = objective(&m, &GT, &data, &outs(), &SolverConfig::default(), Denominator::AsPrinted).unwrap();
    assert_eq!(e, f64::INFINITY);
    let m = model("E-E");
    let lo: Vec<f64> = m.params.iter().map(|p| p.lo).collect();
    let e = objective(&m, &lo, &data, &outs(), &SolverConfig::default(), Denominator::AsPrinted).unwrap();
    assert!(e.is_finite() || e == f64::INFINITY);
}

#[test]
fn unknown_output_is_rejected() {
    let data = clean_data(50);
    let r = objective(&model("S-S"), &GT, &data, &["u".to_string()], &SolverConfig::default(), Denominator::AsPrinted);
    assert!(matches!(r, Err(EstimateError::Sim(SimError::UnknownOutput(_)))));
}

#[test]
fn fixed_model_is_evaluated_once() {
    let lib = parse_library(WATERTANKS_PBL).unwrap();
    let text = SINGLE_STAGE_PBS
        .replace("A = null,\n            a = null;\n}\n\nentity tank2", "A = 20, a = 0.65;\n}\n\nentity tank2")
        .replace("A = null,\n            a = null;", "A = 12, a = 0.7;")
        .replace("k = null", "k = 5");
    let sc = parse_scenario(&text, &lib).unwrap();
    let s = enumerate(&instantiate(&lib, &sc).unwrap()).into_iter().find(|s| s.id == "S-S").unwrap();
    let m = compile(&s, &sc).unwrap();
    assert_eq!(m.n_params(), 0);
    let data = clean_data(300);
    let fit = estimate(&m, &data, &outs(), &DEConfig::default(), &SolverConfig::default(), Denominator::AsPrinted)
        .unwrap();
    assert!(fit.params.is_empty());
    assert_eq!(fit.evals, 1);
    let direct = objective(&m, &[], &data, &outs(), &SolverConfig::default(), Denominator::AsPrinted).unwrap();
    assert_eq!(fit.error, direct);
}

#[test]
fn repeats_use_consecutive_seeds() {
    let data = clean_data(200);
    let m = model("L-L");
    let cfg = quick(100, 40);
    let solver = SolverConfig::default();
    let reps = repeat_estimate(&m, &data, &outs(), &cfg, &solver, Denominator::AsPrinted, 3).unwrap();
    assert_eq!(reps.iter().map(|r| r.seed).collect::<Vec<_>>(), [40, 41, 42]);
    let single = estimate(&m, &data, &outs(), &cfg, &solver, Denominator::AsPrinted).unwrap();
    assert_eq!(reps[0], single);
    let again = estimate(&m, &data, &outs(), &cfg, &solver, Denominator::AsPrinted).unwrap();
    assert_eq!(single, again);
}

#[test]
fn noise_free_ratios_are_recovered() {
    let data = clean_data(1000);
    let m = model("S-S");
    let fit = estimate(&m, &data, &outs(), &quick(4000, 1), &SolverConfig::default(), Denominator::AsPrinted).unwrap();
    let p = |n: &str| fit.param(n).unwrap();
    let ratios = [
        (p("tank1.a") / p("tank1.A"), 0.65 / 20.0),
        (p("pump.k") / p("tank1.A"), 5.0 / 20.0),
        (p("tank2.a") / p("tank2.A"), 0.7 / 12.0),
        (p("tank1.a") / p("tank2.A"), 0.65 / 12.0),
    ];
    for (got, want) in ratios {
        assert!(((got - want) / want).abs() < 0.01, "{got} vs {want} (error {})", fit.error);
    }
}

#[test]
fn exports() {
    let data = clean_data(100);
    let fit = estimate(&model("S-S"), &data, &outs(), &quick(60, 2), &SolverConfig::default(), Denominator::AsPrinted)
        .unwrap();
    let j = fit.to_json();
    assert_eq!(j["params"].as_object().unwrap().keys().next().unwrap(), "tank1.A");
    assert_eq!(j["bounds"]["pump.k"][1], 30.0);
    assert_eq!(j["evals"], fit.evals);
    let mut buf = Vec::new();
    fit.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("generation,best_error,mean_error\n0,"));
    assert_eq!(text.lines().count(), fit.trace.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn trace_is_non_increasing(seed in any::<u64>()) {
        let m = minimize(&[(0.0, 10.0)], &quick(600, seed), |p| (p[0] - 3.0).powi(2)).unwrap();
        for w in m.trace.windows(2) {
            prop_assert!(w[1].best_error <= w[0].best_error);
        }
        prop_assert_eq!(m.value, m.trace.last().unwrap().best_error);
    }
}
