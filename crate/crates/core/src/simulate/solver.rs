use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, SimError};
use crate::modelspace::CompiledModel;

/// How exogenous inputs behave between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InputHold {
    #[default]
    ZeroOrder,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Step attempts allowed per output interval.
    pub max_steps: usize,
    pub hold: InputHold,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { abs_tol: 1e-8, rel_tol: 1e-4, max_steps: 100_000, hold: InputHold::ZeroOrder }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.max_steps >= 1) {
            return Err(SimError::BadSolverConfig(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    NonFiniteDerivative,
    StepTooSmall,
    TooManySteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Failure {
    /// First grid index that could not be reached.
    pub index: usize,
    pub reason: FailureReason,
}

/// Simulated state columns on the dataset grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// State names, e.g. `tank1.h`.
    pub states: Vec<String>,
    /// Dataset column observing each state.
    pub columns: Vec<String>,
    /// One column per state, defined up to the failure index.
    pub values: Vec<Vec<f64>>,
    pub failure: Option<Failure>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Number of grid points with defined values.
    pub fn defined(&self) -> usize {
        self.values.first().map_or(self.t.len(), Vec::len)
    }

    /// Simulated series for a dataset column or a state name.
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        let i = self.columns.iter().position(|c| c == name).or_else(|| self.states.iter().position(|s| s == name))?;
        Some(&self.values[i])
    }

    /// CSV with `t` and one column per observed signal; rows stop at the
    /// failure index.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header)?;
        for i in 0..self.defined() {
            let mut row = vec![self.t[i].to_string()];
            row.extend(self.values.iter().map(|c| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Consecutive stiff-looking steps before the integrator switches method.
const STIFF_STEPS: u32 = 15;

/// A model bound to the input columns of a dataset, ready to integrate
/// repeatedly with different parameter vectors.
///
/// Integration uses Dormand–Prince 5(4). When its stability monitor flags
/// the problem as stiff (fast drains toward an empty tank are the usual
/// cause), the rest of the run continues with an L-stable second-order
/// Rosenbrock method so that such parameter sets cost milliseconds rather
/// than seconds.
pub struct Simulator<'a> {
    model: &'a CompiledModel,
    t: &'a [f64],
    inputs: Vec<&'a [f64]>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a CompiledModel, data: &'a Dataset) -> Result<Simulator<'a>, SimError> {
        let inputs = model
            .inputs
            .iter()
            .map(|i| data.column(&i.column).ok_or_else(|| SimError::MissingColumn(i.column.clone())))
            .collect::<Result<_, _>>()?;
        Ok(Simulator { model, t: data.t(), inputs })
    }

    pub fn model(&self) -> &CompiledModel {
        self.model
    }

    /// Integrates over the full grid.
    pub fn run(&self, params: &[f64], cfg: &SolverConfig) -> Trajectory {
        self.run_until(params, cfg, self.t.len())
    }

    /// Integrates over grid points `0..end` only.
    pub fn run_until(&self, params: &[f64], cfg: &SolverConfig, end: usize) -> Trajectory {
        assert_eq!(params.len(), self.model.n_params(), "parameter length");
        let end = end.min(self.t.len());
        let model = self.model;
        let n = model.states.len();
        let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(end); n];
        let mut w = Work::new(model, params, cfg, self.inputs.len());
        let mut y = model.initial_state();
        let finish = |values: Vec<Vec<f64>>, failure, stats| Trajectory {
            t: self.t[..end].to_vec(),
            states: model.states.iter().map(|s| s.name.clone()).collect(),
            columns: model.states.iter().map(|s| s.column.clone()).collect(),
            values,
            failure,
            stats,
        };
        if end == 0 {
            return finish(values, None, w.stats);
        }
        if y.iter().any(|v| !v.is_finite()) {
            let f = Failure { index: 0, reason: FailureReason::NonFiniteDerivative };
            return finish(values, Some(f), w.stats);
        }
        for (col, v) in values.iter_mut().zip(&y) {
            col.push(*v);
        }

        let mut h = f64::NAN;
        let mut stiff_hits = 0u32;
        let mut calm = 0u32;
        let holds: Vec<InputHold> = model.inputs.iter().map(|v| v.hold.unwrap_or(cfg.hold)).collect();
        let ranges: Vec<(f64, f64)> = model
            .inputs
            .iter()
            .map(|v| v.range.map_or((f64::NEG_INFINITY, f64::INFINITY), |r| (r.lo, r.hi)))
            .collect();
        for i in 0..end - 1 {
            let seg = Interval { i, ta: self.t[i], tb: self.t[i + 1], inputs: &self.inputs, holds: &holds, ranges: &ranges };
            let span = seg.tb - seg.ta;
            let fail = |values, reason, stats| finish(values, Some(Failure { index: i + 1, reason }), stats);

            // Inputs may jump at sample instants, so the first stage is
            // always re-evaluated at the interval start.
            if !w.rhs(&seg, seg.ta, &y, Buf::F0) {
                return fail(values, FailureReason::NonFiniteDerivative, w.stats);
            }
            if h.is_nan() {
                h = w.initial_step(&seg, &y, span);
            }

            let mut tc = seg.ta;
            let mut steps = 0usize;
            while tc < seg.tb {
                if steps >= cfg.max_steps {
                    return fail(values, FailureReason::TooManySteps, w.stats);
                }
                steps += 1;
                let last = tc + h >= seg.tb - 1e-12 * span;
                let hh = if last { seg.tb - tc } else { h };

                let stiff = w.stats.stiff_from.is_some();
                let (err, order) = if stiff { (w.ros_step(&seg, tc, hh, &y), 3.0) } else { (w.dp_step(&seg, tc, hh, &y), 5.0) };

                if err <= 1.0 {
                    w.stats.steps += 1;
                    tc = if last { seg.tb } else { tc + hh };
                    y.copy_from_slice(&w.ynew);
                    // first-same-as-last: the end-point derivative starts the next step
                    w.swap_end_derivative(stiff);
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / order)).min(5.0) };
                    h = if last { h.max(hh * fac) } else { hh * fac };
                    if !stiff {
                        if w.last_h_lambda > 3.25 {
                            calm = 0;
                            stiff_hits += 1;
                            if stiff_hits == STIFF_STEPS {
                                w.stats.stiff_from = Some(i);
                            }
                        } else {
                            calm += 1;
                            if calm == 6 {
                                stiff_hits = 0;
                            }
                        }
                    }
                } else {
                    w.stats.rejected += 1;
                    let fac = if err.is_finite() { (0.9 * err.powf(-1.0 / order)).max(0.2) } else { 0.25 };
                    h = hh * fac;
                }
                if h < 16.0 * f64::EPSILON * tc.abs().max(span) {
                    return fail(values, FailureReason::StepTooSmall, w.stats);
                }
            }
            for (col, v) in values.iter_mut().zip(&y) {
                col.push(*v);
            }
        }
        finish(values, None, w.stats)
    }
}

/// Work counters of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Grid interval at which the stiff method took over.
    pub stiff_from: Option<usize>,
}

struct Interval<'s> {
    i: usize,
    ta: f64,
    tb: f64,
    inputs: &'s [&'s [f64]],
    holds: &'s [InputHold],
    ranges: &'s [(f64, f64)],
}

impl Interval<'_> {
    fn inputs_at(&self, t: f64, u: &mut [f64]) {
        let i = self.i;
        for (j, (slot, col)) in u.iter_mut().zip(self.inputs).enumerate() {
            let v = match self.holds[j] {
                InputHold::ZeroOrder => col[i],
                InputHold::Linear => col[i] + (col[i + 1] - col[i]) * ((t - self.ta) / (self.tb - self.ta)),
            };
            let (lo, hi) = self.ranges[j];
            *slot = v.clamp(lo, hi);
        }
    }
}

#[derive(Clone, Copy)]
enum Buf {
    F0,
    Stage(usize),
    Tmp,
}

/// Scratch buffers shared by both methods.
struct Work<'m> {
    model: &'m CompiledModel,
    params: &'m [f64],
    cfg: &'m SolverConfig,
    n: usize,
    u: Vec<f64>,
    /// Dormand–Prince stages; `k[0]` doubles as `f(t, y)` for both methods.
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    ytmp: Vec<f64>,
    y6: Vec<f64>,
    ynew: Vec<f64>,
    jac: Vec<f64>,
    lu: Vec<f64>,
    piv: Vec<usize>,
    /// Rosenbrock scratch: f0, ft, f1, k1, k2, k3.
    ros: [Vec<f64>; 6],
    last_h_lambda: f64,
    stats: SolverStats,
}

impl<'m> Work<'m> {
    fn new(model: &'m CompiledModel, params: &'m [f64], cfg: &'m SolverConfig, n_inputs: usize) -> Self {
        let n = model.states.len();
        Work {
            model,
            params,
            cfg,
            n,
            u: vec![0.0; n_inputs],
            k: vec![vec![0.0; n]; 7],
            tmp: vec![0.0; n],
            ytmp: vec![0.0; n],
            y6: vec![0.0; n],
            ynew: vec![0.0; n],
            jac: vec![0.0; n * n],
            lu: vec![0.0; n * n],
            piv: vec![0; n],
            ros: std::array::from_fn(|_| vec![0.0; n]),
            last_h_lambda: 0.0,
            stats: SolverStats::default(),
        }
    }

    /// Evaluates the right-hand side into `dst`; false when non-finite.
    fn rhs(&mut self, seg: &Interval, t: f64, y: &[f64], dst: Buf) -> bool {
        seg.inputs_at(t, &mut self.u);
        self.stats.rhs_evals += 1;
        let out = match dst {
            Buf::F0 => &mut self.k[0],
            Buf::Stage(s) => &mut self.k[s],
            Buf::Tmp => &mut self.tmp,
        };
        self.model.eval_rhs_into(y, &self.u, self.params, out);
        out.iter().all(|v| v.is_finite())
    }

    fn err_norm(&self, y: &[f64], e: impl Fn(usize) -> f64) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.n {
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[j].abs().max(self.ynew[j].abs());
            sum += (e(j) / sc).powi(2);
        }
        (sum / self.n.max(1) as f64).sqrt()
    }

    fn swap_end_derivative(&mut self, stiff: bool) {
        if stiff {
            self.k.swap(0, 3);
        } else {
            let (first, rest) = self.k.split_at_mut(6);
            first[0].copy_from_slice(&rest[0]);
        }
    }

    /// One Dormand–Prince attempt from `y` with `k[0] = f(tc, y)`. Returns
    /// the scaled error (`+∞` on a non-finite stage) and leaves the
    /// fifth-order solution in `ynew`.
    fn dp_step(&mut self, seg: &Interval, tc: f64, hh: f64, y: &[f64]) -> f64 {
        let n = self.n;
        for s in 1..7 {
            for j in 0..n {
                let mut acc = y[j];
                for r in 0..s {
                    acc += hh * A[s][r] * self.k[r][j];
                }
                self.ytmp[j] = acc;
            }
            if s == 5 {
                self.y6.copy_from_slice(&self.ytmp);
            }
            let yt = std::mem::take(&mut self.ytmp);
            let ok = self.rhs(seg, tc + C[s] * hh, &yt, Buf::Stage(s));
            self.ytmp = yt;
            if !ok {
                return f64::INFINITY;
            }
        }
        // the last stage point is the fifth-order solution
        self.ynew.copy_from_slice(&self.ytmp);
        let k = &self.k;
        let err = self.err_norm(y, |j| hh * (0..7).map(|r| E[r] * k[r][j]).sum::<f64>());
        // stability monitor: h·|λ| estimated from the last two stages
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            num += (k[6][j] - k[5][j]).powi(2);
            den += (self.ynew[j] - self.y6[j]).powi(2);
        }
        self.last_h_lambda = if den > 0.0 { hh * (num / den).sqrt() } else { 0.0 };
        err
    }

    /// One linearly implicit Rosenbrock attempt (the L-stable 2(3) pair of
    /// Shampine and Reichelt) from `y` with `k[0] = f(tc, y)`. On success
    /// `k[3]` holds `f(tc + hh, ynew)`.
    fn ros_step(&mut self, seg: &Interval, tc: f64, hh: f64, y: &[f64]) -> f64 {
        let [mut f0, mut ft, mut f1, mut k1, mut k2, mut k3] = std::mem::take(&mut self.ros);
        let err = self.ros_attempt(seg, tc, hh, y, [&mut f0, &mut ft, &mut f1, &mut k1, &mut k2, &mut k3]);
        self.ros = [f0, ft, f1, k1, k2, k3];
        err
    }

    fn ros_attempt(&mut self, seg: &Interval, tc: f64, hh: f64, y: &[f64], bufs: [&mut Vec<f64>; 6]) -> f64 {
        let n = self.n;
        let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
        let e32 = 6.0 + std::f64::consts::SQRT_2;
        let [f0, ft, f1, k1, k2, k3] = bufs;

        // forward-difference Jacobian
        f0.copy_from_slice(&self.k[0]);
        for c in 0..n {
            let delta = f64::EPSILON.sqrt() * y[c].abs().max(1e-5);
            self.ytmp.copy_from_slice(y);
            self.ytmp[c] += delta;
            let yt = std::mem::take(&mut self.ytmp);
            let ok = self.rhs(seg, tc, &yt, Buf::Tmp);
            self.ytmp = yt;
            if !ok {
                return f64::INFINITY;
            }
            for r in 0..n {
                self.jac[r * n + c] = (self.tmp[r] - f0[r]) / delta;
            }
        }
        // time derivative, non-zero only for interpolated inputs
        ft.fill(0.0);
        if seg.holds.contains(&InputHold::Linear) {
            let dt = f64::EPSILON.sqrt() * (seg.tb - seg.ta);
            if !self.rhs(seg, tc + dt, y, Buf::Tmp) {
                return f64::INFINITY;
            }
            for j in 0..n {
                ft[j] = (self.tmp[j] - f0[j]) / dt;
            }
        }
        for r in 0..n {
            for c in 0..n {
                self.lu[r * n + c] = f64::from(u8::from(r == c)) - hh * d * self.jac[r * n + c];
            }
        }
        if !lu_factor(&mut self.lu, &mut self.piv, n) {
            return f64::INFINITY;
        }

        for j in 0..n {
            k1[j] = f0[j] + hh * d * ft[j];
        }
        lu_solve(&self.lu, &self.piv, n, k1);
        for j in 0..n {
            self.ytmp[j] = y[j] + 0.5 * hh * k1[j];
        }
        let yt = std::mem::take(&mut self.ytmp);
        let ok = self.rhs(seg, tc + 0.5 * hh, &yt, Buf::Stage(1));
        self.ytmp = yt;
        if !ok {
            return f64::INFINITY;
        }
        f1.copy_from_slice(&self.k[1]);
        for j in 0..n {
            k2[j] = f1[j] - k1[j];
        }
        lu_solve(&self.lu, &self.piv, n, k2);
        for j in 0..n {
            k2[j] += k1[j];
            self.ynew[j] = y[j] + hh * k2[j];
        }
        let yn = std::mem::take(&mut self.ynew);
        let ok = self.rhs(seg, tc + hh, &yn, Buf::Stage(3));
        self.ynew = yn;
        if !ok || self.ynew.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let f2 = &self.k[3];
        for j in 0..n {
            k3[j] = f2[j] - e32 * (k2[j] - f1[j]) - 2.0 * (k1[j] - f0[j]) + hh * d * ft[j];
        }
        lu_solve(&self.lu, &self.piv, n, k3);
        self.err_norm(y, |j| hh / 6.0 * (k1[j] - 2.0 * k2[j] + k3[j]))
    }

    /// Starting step size following the usual two-probe heuristic.
    fn initial_step(&mut self, seg: &Interval, y: &[f64], span: f64) -> f64 {
        let n = self.n;
        if n == 0 {
            return span;
        }
        let sc: Vec<f64> = y.iter().map(|v| self.cfg.abs_tol + self.cfg.rel_tol * v.abs()).collect();
        let norm = |v: &[f64]| (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let f0 = self.k[0].clone();
        let (d0, d1) = (norm(y), norm(&f0));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let probe: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + h0 * b).collect();
        let ok = self.rhs(seg, seg.ta + h0, &probe, Buf::Tmp);
        let diff: Vec<f64> = self.tmp.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let h1 = if !ok || !d2.is_finite() {
            h0
        } else if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }
}

/// In-place LU factorization with partial pivoting of a row-major `n × n`
/// matrix; false when singular.
fn lu_factor(a: &mut [f64], piv: &mut [usize], n: usize) -> bool {
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs())).unwrap_or(k);
        if a[p * n + k] == 0.0 || !a[p * n + k].is_finite() {
            return false;
        }
        piv[k] = p;
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
        }
        for r in k + 1..n {
            let m = a[r * n + k] / a[k * n + k];
            a[r * n + k] = m;
            for c in k + 1..n {
                a[r * n + c] -= m * a[k * n + c];
            }
        }
    }
    true
}

fn lu_solve(a: &[f64], piv: &[usize], n: usize, b: &mut [f64]) {
    for k in 0..n {
        b.swap(k, piv[k]);
    }
    for r in 0..n {
        for c in 0..r {
            b[r] -= a[r * n + c] * b[c];
        }
    }
    for r in (0..n).rev() {
        for c in r + 1..n {
            b[r] -= a[r * n + c] * b[c];
        }
        b[r] /= a[r * n + r];
    }
}

#[cfg(test)]
mod lu_tests {
    use super::*;

    #[test]
    fn solves_pivoting_system() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let mut piv = vec![0; 2];
        assert!(lu_factor(&mut a, &mut piv, 2));
        let mut b = vec![4.0, 3.0];
        lu_solve(&a, &piv, 2, &mut b);
        assert_eq!(b, [1.0, 2.0]);
        assert!(!lu_factor(&mut vec![1.0, 2.0, 2.0, 4.0], &mut piv, 2));
    }
}
