use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EstimateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BoundHandling {
    #[default]
    Clip,
    Reflect,
}

/// Differential Evolution settings (rand/1/bin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DEConfig {
    pub pop_size: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover probability.
    pub cr: f64,
    /// Objective evaluations allowed per free parameter.
    pub budget_per_param: usize,
    pub seed: u64,
    pub bounds: BoundHandling,
}

impl Default for DEConfig {
    fn default() -> Self {
        DEConfig { pop_size: 60, f: 0.9, cr: 0.9, budget_per_param: 50_000, seed: 0, bounds: BoundHandling::Clip }
    }
}

impl DEConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let ok = self.pop_size >= 4
            && self.cr > 0.0
            && self.cr <= 1.0
            && self.f > 0.0
            && self.f.is_finite()
            && self.budget_per_param >= self.pop_size;
        if ok {
            Ok(())
        } else {
            Err(EstimateError::BadConfig(*self))
        }
    }

    /// Scales the per-parameter budget, never below one population.
    pub fn scaled(mut self, scale: f64) -> DEConfig {
        let b = (self.budget_per_param as f64 * scale).round() as usize;
        self.budget_per_param = b.max(self.pop_size);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> DEConfig {
        self.seed = seed;
        self
    }
}

/// Best and mean population error after one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub generation: usize,
    pub best_error: f64,
    /// Mean over individuals with a finite error; NaN when there are none.
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub trace: Vec<TracePoint>,
}

/// Random numbers for one target vector, drawn before any evaluation so the
/// run does not depend on evaluation order.
struct Draw {
    r: [usize; 3],
    jrand: usize,
    u: Vec<f64>,
}

/// Minimizes `f` over the box `bounds`. Non-finite values count as `+∞`.
/// Evaluations within a generation run on the current rayon pool.
pub fn minimize<F>(bounds: &[(f64, f64)], cfg: &DEConfig, f: F) -> Result<Minimum, EstimateError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(EstimateError::InfeasibleBounds { index: i, lo, hi });
        }
    }
    let score = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let d = bounds.len();
    if d == 0 {
        let value = score(&[]);
        let trace = vec![TracePoint { generation: 0, best_error: value, mean_error: finite_mean(&[value]) }];
        return Ok(Minimum { x: Vec::new(), value, evals: 1, trace });
    }

    let np = cfg.pop_size;
    let budget = d * cfg.budget_per_param;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Vec<f64>> =
        (0..np).map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()).collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|x| score(x)).collect();
    let mut evals = np;
    let mut trace = vec![trace_point(0, &fit)];

    let mut generation = 0;
    while evals < budget {
        generation += 1;
        let draws: Vec<Draw> = (0..np)
            .map(|i| {
                let mut r = [0usize; 3];
                for k in 0..3 {
                    r[k] = loop {
                        let c = rng.random_range(0..np);
                        if c != i && !r[..k].contains(&c) {
                            break c;
                        }
                    };
                }
                let jrand = rng.random_range(0..d);
                let u = (0..d).map(|_| rng.random::<f64>()).collect();
                Draw { r, jrand, u }
            })
            .collect();
        let trials: Vec<Vec<f64>> = draws
            .iter()
            .enumerate()
            .map(|(i, dr)| {
                let [a, b, c] = dr.r;
                (0..d)
                    .map(|j| {
                        let (lo, hi) = bounds[j];
                        if dr.u[j] < cfg.cr || j == dr.jrand {
                            let v = pop[a][j] + cfg.f * (pop[b][j] - pop[c][j]);
                            handle_bounds(v, lo, hi, cfg.bounds)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| score(x)).collect();
        evals += np;
        for (i, (x, v)) in trials.into_iter().zip(trial_fit).enumerate() {
            if v <= fit[i] {
                pop[i] = x;
                fit[i] = v;
            }
        }
        trace.push(trace_point(generation, &fit));
    }

    let best = argmin(&fit);
    Ok(Minimum { x: pop.swap_remove(best), value: fit[best], evals, trace })
}

fn handle_bounds(v: f64, lo: f64, hi: f64, mode: BoundHandling) -> f64 {
    match mode {
        BoundHandling::Clip => v.clamp(lo, hi),
        BoundHandling::Reflect => {
            if (lo..=hi).contains(&v) {
                return v;
            }
            // fold onto [lo, hi] with period 2 (hi - lo)
            let w = hi - lo;
            let m = (v - lo).rem_euclid(2.0 * w);
            (if m <= w { lo + m } else { hi - (m - w) }).clamp(lo, hi)
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn finite_mean(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

fn trace_point(generation: usize, fit: &[f64]) -> TracePoint {
    TracePoint { generation, best_error: fit[argmin(fit)], mean_error: finite_mean(fit) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflection_folds_into_the_box() {
        assert_eq!(handle_bounds(11.0, 0.0, 10.0, BoundHandling::Reflect), 9.0);
        assert_eq!(handle_bounds(-2.0, 0.0, 10.0, BoundHandling::Reflect), 2.0);
        assert_eq!(handle_bounds(25.0, 0.0, 10.0, BoundHandling::Reflect), 5.0);
        assert_eq!(handle_bounds(11.0, 0.0, 10.0, BoundHandling::Clip), 10.0);
    }

    proptest! {
        #[test]
        fn bound_handling_stays_inside(v in -1e6..1e6f64, lo in -10.0..10.0f64, w in 1e-3..20.0f64) {
            for m in [BoundHandling::Clip, BoundHandling::Reflect] {
                let x = handle_bounds(v, lo, lo + w, m);
                prop_assert!(lo <= x && x <= lo + w);
            }
        }
    }
}
