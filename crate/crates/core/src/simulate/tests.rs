use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::assets::*;
use crate::dsl::{parse_library, parse_scenario};
use crate::modelspace::{compile, enumerate, instantiate, CompiledModel};

const GT: [f64; 5] = [20.0, 0.65, 12.0, 0.7, 5.0];

fn model(id: &str) -> CompiledModel {
    let lib = parse_library(WATERTANKS_PBL).unwrap();
    let sc = parse_scenario(SINGLE_STAGE_PBS, &lib).unwrap();
    let s = enumerate(&instantiate(&lib, &sc).unwrap()).into_iter().find(|s| s.id == id).unwrap();
    compile(&s, &sc).unwrap()
}

fn steps_input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let level = rng.random_range(0.2..1.2);
        let dwell = rng.random_range(20..80);
        out.extend(std::iter::repeat_n(level, dwell));
    }
    out.truncate(n);
    out
}

fn grid(n: usize, dt: f64, cols: &[(&str, Vec<f64>)]) -> Dataset {
    let t = (0..n).map(|i| i as f64 * dt).collect();
    let columns: IndexMap<String, Vec<f64>> = cols.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    Dataset::new(t, columns).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn origin_is_an_equilibrium() {
    let m = model("S-S");
    let data = grid(50, 4.0, &[("u", vec![0.0; 50])]);
    let mut m0 = m.clone();
    for s in &mut m0.states {
        s.initial = 0.0;
    }
    let traj = simulate(&m0, &GT, &data, &SolverConfig::default()).unwrap();
    assert!(!traj.failed());
    assert!(traj.values.iter().flatten().all(|&v| v == 0.0));
}

fn linear_tank() -> CompiledModel {
    let lib = parse_library(WATERTANKS_PBL).unwrap();
    let sc = parse_scenario(
        "entity t : Tank { vars: h {role: endogenous; initial: 1; column: h;}; consts: A = 10, a = 1; }
         process o(t) : Outflow.Linear { consts: G = 4.429; }",
        &lib,
    )
    .unwrap();
    compile(&enumerate(&instantiate(&lib, &sc).unwrap())[0], &sc).unwrap()
}

#[test]
fn linear_outflow_matches_exponential() {
    let m = linear_tank();
    let data = grid(100, 0.1, &[]);
    let cfg = SolverConfig { abs_tol: 1e-14, rel_tol: 1e-10, ..SolverConfig::default() };
    let traj = simulate(&m, &[], &data, &cfg).unwrap();
    let worst = data
        .t()
        .iter()
        .zip(&traj.values[0])
        .map(|(t, h)| rel(*h, (-0.4429 * t).exp()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

/// Fixed-step classical RK4 on the hand-written two-tank equations.
fn rk4_oracle(u: &[f64], dt: f64, substeps: usize) -> Vec<[f64; 2]> {
    let (a1, a1c, a2, a2c, k, g) = (20.0, 0.65, 12.0, 0.7, 5.0, 4.429);
    let f = |h: [f64; 2], v: f64| {
        let q12 = g * h[0].sqrt() * a1c;
        [k * v / a1 - q12 / a1, q12 / a2 - g * h[1].sqrt() * a2c / a2]
    };
    let mut h = [0.38086, 0.20508];
    let mut out = vec![h];
    let s = dt / substeps as f64;
    for &v in &u[..u.len() - 1] {
        for _ in 0..substeps {
            let k1 = f(h, v);
            let k2 = f([h[0] + s / 2.0 * k1[0], h[1] + s / 2.0 * k1[1]], v);
            let k3 = f([h[0] + s / 2.0 * k2[0], h[1] + s / 2.0 * k2[1]], v);
            let k4 = f([h[0] + s * k3[0], h[1] + s * k3[1]], v);
            for j in 0..2 {
                h[j] += s / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        out.push(h);
    }
    out
}

#[test]
fn square_root_model_matches_fine_step_oracle() {
    let n = 400;
    let u = steps_input(n, 11);
    let data = grid(n, 4.0, &[("u", u.clone())]);
    let oracle = rk4_oracle(&u, 4.0, 100);
    let worst = |cfg: SolverConfig| {
        let traj = simulate(&model("S-S"), &GT, &data, &cfg).unwrap();
        assert!(!traj.failed());
        let mut w: f64 = 0.0;
        for (i, o) in oracle.iter().enumerate() {
            for j in 0..2 {
                w = w.max(rel(traj.values[j][i], o[j]));
            }
        }
        w
    };
    // global error sits near half the relative tolerance
    let default = worst(SolverConfig::default());
    assert!(default < 1e-4, "{default:e}");
    let tight = worst(SolverConfig { rel_tol: 1e-5, ..SolverConfig::default() });
    assert!(tight < 1e-5, "{tight:e}");
}

#[test]
fn negative_level_fails_in_band() {
    let mut m = model("S-S");
    m.states[0].initial = -1.0;
    let data = grid(10, 4.0, &[("u", vec![0.5; 10])]);
    let traj = simulate(&m, &GT, &data, &SolverConfig::default()).unwrap();
    assert_eq!(traj.failure, Some(Failure { index: 1, reason: FailureReason::NonFiniteDerivative }));
    assert_eq!(traj.defined(), 1);
    let s = rrmse(&[1.0; 10], &traj.values[0], 0..10, Denominator::AsPrinted);
    assert_eq!(s, Score::infinite(ScoreFlag::SimulationFailed));
}

#[test]
fn step_budget_exhaustion_fails() {
    let data = grid(10, 4.0, &[("u", vec![0.5; 10])]);
    let cfg = SolverConfig { max_steps: 1, rel_tol: 1e-12, abs_tol: 1e-16, ..SolverConfig::default() };
    let traj = simulate(&model("S-S"), &GT, &data, &cfg).unwrap();
    assert_eq!(traj.failure.map(|f| f.reason), Some(FailureReason::TooManySteps));
    assert!(traj.values.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn missing_input_column_is_an_error() {
    let data = grid(10, 4.0, &[("v", vec![0.5; 10])]);
    assert!(matches!(
        simulate(&model("S-S"), &GT, &data, &SolverConfig::default()),
        Err(SimError::MissingColumn(c)) if c == "u"
    ));
}

#[test]
fn run_until_stops_early() {
    let u = steps_input(100, 2);
    let data = grid(100, 4.0, &[("u", u)]);
    let m = model("S-S");
    let sim = Simulator::new(&m, &data).unwrap();
    let cfg = SolverConfig::default();
    let part = sim.run_until(&GT, &cfg, 40);
    let full = sim.run(&GT, &cfg);
    assert_eq!(part.defined(), 40);
    assert!(!part.failed());
    assert_eq!(&full.values[1][..40], &part.values[1][..]);
}

#[test]
fn linear_hold_differs_from_zero_order_hold() {
    let u = steps_input(200, 5);
    let data = grid(200, 4.0, &[("u", u)]);
    let m = model("S-S");
    let zoh = simulate(&m, &GT, &data, &SolverConfig::default()).unwrap();
    let lin = simulate(&m, &GT, &data, &SolverConfig { hold: InputHold::Linear, ..Default::default() }).unwrap();
    assert!(!lin.failed());
    assert_ne!(zoh.values, lin.values);
    // constant input: both holds coincide up to tolerance
    let data = grid(50, 4.0, &[("u", vec![0.7; 50])]);
    let a = simulate(&m, &GT, &data, &SolverConfig::default()).unwrap();
    let b = simulate(&m, &GT, &data, &SolverConfig { hold: InputHold::Linear, ..Default::default() }).unwrap();
    for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
        assert!(rel(*x, *y) < 1e-12);
    }
}

#[test]
fn rrmse_hand_cases() {
    let p = Denominator::AsPrinted;
    assert_eq!(rrmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0..3, p), Score::ZERO);
    assert_eq!(rrmse(&[0.0, 4.0], &[1.0, 3.0], 0..2, p).value, 1.0);
    assert_eq!(rrmse(&[1.0, 2.0, 3.0], &[2.0; 3], 0..3, p), Score::infinite(ScoreFlag::ZeroDenominator));
    // conventional: (1 + 1) / (4 + 4)
    assert_eq!(rrmse(&[0.0, 4.0], &[1.0, 3.0], 0..2, Denominator::Conventional).value, 0.5);
    // ranges select a window
    assert_eq!(rrmse(&[9.0, 0.0, 4.0], &[-9.0, 1.0, 3.0], 1..3, p).value, 1.0);
}

#[test]
fn multi_output_sums() {
    let data = grid(2, 1.0, &[("h1", vec![0.0, 4.0]), ("h2", vec![0.0, 4.0])]);
    let traj = Trajectory {
        t: vec![0.0, 1.0],
        states: vec!["a.h".into(), "b.h".into()],
        columns: vec!["h1".into(), "h2".into()],
        values: vec![vec![1.0, 3.0], vec![1.0, 3.0]],
        failure: None,
        stats: Default::default(),
    };
    let outs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let p = Denominator::AsPrinted;
    assert_eq!(multi_output_error(&traj, &data, &outs(&["h1", "h2"]), 0..2, p).unwrap().value, 2.0);
    assert_eq!(
        multi_output_error(&traj, &data, &outs(&["h2"]), 0..2, p).unwrap(),
        rrmse(&[0.0, 4.0], &[1.0, 3.0], 0..2, p)
    );
    let exact = Trajectory { values: vec![vec![0.0, 4.0], vec![0.0, 4.0]], ..traj.clone() };
    assert_eq!(multi_output_error(&exact, &data, &outs(&["h1", "h2"]), 0..2, p).unwrap(), Score::ZERO);
    assert!(matches!(
        multi_output_error(&traj, &data, &outs(&["h3"]), 0..2, p),
        Err(SimError::Data(DataError::MissingColumn(_)))
    ));
}

#[test]
fn dataset_validation() {
    let t = vec![0.0, 1.0, 2.5];
    assert!(matches!(Dataset::new(t, IndexMap::new()), Err(DataError::NonUniform { row: 2 })));
    let cols = IndexMap::from([("h2".to_string(), vec![1.0, f64::NAN, 2.0])]);
    assert!(matches!(
        Dataset::new(vec![0.0, 1.0, 2.0], cols),
        Err(DataError::NonFinite { row: 1, ref column }) if column == "h2"
    ));
    let d = grid(10, 1.0, &[]);
    assert_eq!(d.split(), Split { train_end: 4, val_end: 6 });
    assert!(d.clone().with_split(Split { train_end: 0, val_end: 5 }).is_err());
    assert!(d.clone().with_split(Split { train_end: 5, val_end: 5 }).is_err());
    assert!(d.clone().with_split(Split { train_end: 5, val_end: 11 }).is_err());
    let d = d.with_split(Split::from_sizes(5, 3)).unwrap();
    assert_eq!(d.range(Segment::Validation), 5..8);
    assert_eq!(d.range(Segment::Test), 8..10);
    assert_eq!(grid(2500, 4.0, &[]).split(), Split { train_end: 1000, val_end: 1500 });
}

#[test]
fn csv_round_trip() {
    let d = grid(30, 4.0, &[("u", steps_input(30, 1)), ("h1", (0..30).map(|i| 0.1 * i as f64 + 1e-17).collect())]);
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = Dataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, d);
    let bad = "time,u\n0,1\n1,2\n";
    assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(DataError::NoTimeColumn(_))));
    let bad = "t,u\n0,1\n1,x\n";
    assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(DataError::Parse { row: 1, .. })));
}

#[test]
fn tighter_tolerances_stay_within_coarse_bound() {
    let u = steps_input(300, 9);
    let data = grid(300, 4.0, &[("u", u)]);
    let m = model("S-S");
    let coarse = SolverConfig::default();
    let fine = SolverConfig { abs_tol: 1e-9, rel_tol: 1e-5, ..coarse };
    let a = simulate(&m, &GT, &data, &coarse).unwrap();
    let b = simulate(&m, &GT, &data, &fine).unwrap();
    for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
        assert!((x - y).abs() <= coarse.rel_tol * y.abs() + coarse.abs_tol, "{x} vs {y}");
    }
}

#[test]
fn finer_grid_agrees_after_subsampling() {
    let u = steps_input(150, 4);
    let coarse = grid(150, 4.0, &[("u", u.clone())]);
    let u2: Vec<f64> = u.iter().flat_map(|&v| [v, v]).take(299).collect();
    let fine = grid(299, 2.0, &[("u", u2)]);
    let m = model("S-S");
    let cfg = SolverConfig::default();
    let a = simulate(&m, &GT, &coarse, &cfg).unwrap();
    let b = simulate(&m, &GT, &fine, &cfg).unwrap();
    for j in 0..2 {
        for i in 0..150 {
            let (x, y) = (a.values[j][i], b.values[j][2 * i]);
            assert!((x - y).abs() <= cfg.rel_tol * y.abs() + cfg.abs_tol, "{i}: {x} vs {y}");
        }
    }
}

proptest! {
    #[test]
    fn rrmse_scale_covariant(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..40),
        c in 0.01..100.0f64,
    ) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let n = y.len();
        for d in [Denominator::AsPrinted, Denominator::Conventional] {
            let a = rrmse(&y, &yhat, 0..n, d);
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let yhs: Vec<f64> = yhat.iter().map(|v| v * c).collect();
            let b = rrmse(&ys, &yhs, 0..n, d);
            prop_assert!(a.value >= 0.0);
            if a.is_finite() && b.is_finite() {
                prop_assert!((a.value - b.value).abs() <= 1e-9 * (1.0 + a.value));
            }
        }
    }

    #[test]
    fn rrmse_zero_iff_equal(y in prop::collection::vec(-5.0..5.0f64, 2..30), k in 0usize..30, bump in 0.1..1.0f64) {
        let n = y.len();
        let s = rrmse(&y, &y, 0..n, Denominator::AsPrinted);
        prop_assume!(s.is_finite());
        prop_assert_eq!(s.value, 0.0);
        let mut z = y.clone();
        z[k % n] += bump;
        let s = rrmse(&y, &z, 0..n, Denominator::AsPrinted);
        prop_assert!(s.value > 0.0);
    }
}


#[test]
fn stiff_drain_switches_method_and_stays_accurate() {
    // dh/dt = k·u/A − G·(a/A)·h with G·a/A = 1000 s⁻¹ on a 4 s grid
    let lib = parse_library(WATERTANKS_PBL).unwrap();
    let sc = parse_scenario(
        "entity t : Tank { vars: h {role: endogenous; initial: 1; column: h;}; consts: A = 0.01, a = 2.25784; }
         entity p : Pump { vars: v {role: exogenous; column: u;}; consts: k = 1; }
         process i(p, t) : Inflow {}
         process o(t) : Outflow.Linear { consts: G = 4.429; }",
        &lib,
    )
    .unwrap();
    let m = compile(&enumerate(&instantiate(&lib, &sc).unwrap())[0], &sc).unwrap();
    let n = 200;
    let data = grid(n, 4.0, &[("u", vec![0.5; n])]);
    let traj = simulate(&m, &[], &data, &SolverConfig::default()).unwrap();
    assert!(!traj.failed());
    assert_eq!(traj.stats.stiff_from, Some(0));
    assert!(traj.stats.rhs_evals < 20 * n, "{:?}", traj.stats);
    let lambda = 4.429 * 2.25784 / 0.01;
    let heq = 0.5 / 0.01 / lambda;
    for (t, h) in data.t().iter().zip(&traj.values[0]) {
        let exact = heq + (1.0 - heq) * (-lambda * t).exp();
        assert!(rel(*h, exact) < 1e-3, "t={t}: {h} vs {exact}");
    }
}

#[test]
fn ground_truth_runs_never_switch() {
    let u = steps_input(2500, 21);
    let data = grid(2500, 4.0, &[("u", u)]);
    let traj = simulate(&model("S-S"), &GT, &data, &SolverConfig::default()).unwrap();
    assert_eq!(traj.stats.stiff_from, None);
}
