//! Nelder-Mead simplex search over the six pose parameters.
//!
//! The optimizer maximizes by minimizing the negated objective with the
//! textbook coefficients (reflection 1, expansion 2, contraction 0.5,
//! shrink 0.5). The initial simplex is anisotropic: vertex `i` is the start
//! point moved by `initial_steps[i]` along axis `i`, so wide steps can be
//! given to the directions a ground vehicle actually moves in.
//!
//! Non-finite objective values (e.g. the no-overlap sentinel) rank as the
//! worst possible, which makes the simplex contract away from them.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM: usize = 6;

pub type Params = [f64; DIM];

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexConfig {
    /// Per-axis initial step `[x, y, z, roll, pitch, yaw]` in meters and radians.
    pub initial_steps: Params,
    pub max_iterations: usize,
    /// Stop when the objective spread across the simplex drops below this.
    pub f_tol: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Extra runs restarted at the best vertex with the steps halved each time.
    pub restarts: usize,
}

impl SimplexConfig {
    pub const DEFAULT_STEPS: Params = [8.0, 8.0, 1.0, 0.1, 0.1, 0.8];

    pub fn with_steps(initial_steps: Params) -> Self {
        Self {
            initial_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.initial_steps.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!(
                "simplex steps must be positive, got {:?}",
                self.initial_steps
            )));
        }
        if !(self.f_tol > 0.0 && self.x_tol > 0.0) {
            return Err(Error::Config("simplex tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            initial_steps: Self::DEFAULT_STEPS,
            max_iterations: 300,
            f_tol: 1e-5,
            x_tol: 1e-3,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedF,
    ConvergedX,
    MaxIter,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Best objective value seen so far.
    pub best: f64,
    /// Largest distance from the best vertex to any other vertex.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best: Params,
    pub best_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

impl OptimResult {
    /// Writes the iteration trace as `iteration,best_mi,spread`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "best_mi", "spread"])?;
        for t in &self.trace {
            wr.serialize((t.iteration, t.best, t.spread))?;
        }
        wr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Cost used internally: negated objective, NaN and −∞ mapped to +∞.
fn cost(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        -v
    }
}

fn axpy(a: f64, x: &Params, y: &Params) -> Params {
    std::array::from_fn(|i| a * x[i] + y[i])
}

fn sub(x: &Params, y: &Params) -> Params {
    std::array::from_fn(|i| x[i] - y[i])
}

fn dist(x: &Params, y: &Params) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

struct Search<'f, F> {
    f: &'f mut F,
    evaluations: usize,
    best: Params,
    best_cost: f64,
}

impl<F: FnMut(&Params) -> f64> Search<'_, F> {
    fn eval(&mut self, x: Params) -> (Params, f64) {
        let c = cost((self.f)(&x));
        self.evaluations += 1;
        if c < self.best_cost {
            self.best_cost = c;
            self.best = x;
        }
        (x, c)
    }
}

fn sort_simplex(s: &mut [(Params, f64)]) {
    s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
}

fn spread(s: &[(Params, f64)]) -> f64 {
    s[1..].iter().map(|v| dist(&v.0, &s[0].0)).fold(0.0, f64::max)
}

/// Maximizes `f` starting from `x0`.
///
/// Returns the best point ever evaluated, which is never worse than `x0`.
pub fn nelder_mead_maximize<F>(mut f: F, x0: Params, cfg: &SimplexConfig) -> Result<OptimResult>
where
    F: FnMut(&Params) -> f64,
{
    cfg.validate()?;
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite start point {x0:?}")));
    }

    let mut search = Search {
        f: &mut f,
        evaluations: 0,
        best: x0,
        best_cost: f64::INFINITY,
    };
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut steps = cfg.initial_steps;
    let mut start = x0;
    let mut termination;

    for run in 0..=cfg.restarts {
        if run > 0 {
            start = search.best;
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
        let mut simplex: Vec<(Params, f64)> = Vec::with_capacity(DIM + 1);
        simplex.push(search.eval(start));
        for (i, step) in steps.iter().enumerate() {
            let mut v = start;
            v[i] += step;
            simplex.push(search.eval(v));
        }
        sort_simplex(&mut simplex);
        trace.push(TraceEntry {
            iteration: iterations,
            best: -search.best_cost,
            spread: spread(&simplex),
        });

        termination = loop {
            let (lo, hi) = (simplex[0].1, simplex[DIM].1);
            if (hi - lo).abs() < cfg.f_tol {
                break Termination::ConvergedF;
            }
            if spread(&simplex) < cfg.x_tol {
                break Termination::ConvergedX;
            }
            if iterations >= cfg.max_iterations {
                break Termination::MaxIter;
            }

            let centroid: Params = std::array::from_fn(|i| {
                simplex[..DIM].iter().map(|v| v.0[i]).sum::<f64>() / DIM as f64
            });
            let (worst, worst_cost) = simplex[DIM];
            let away = sub(&centroid, &worst);
            let (xr, cr) = search.eval(axpy(REFLECTION, &away, &centroid));

            let mut shrink = false;
            if cr < simplex[0].1 {
                let (xe, ce) = search.eval(axpy(EXPANSION, &away, &centroid));
                simplex[DIM] = if ce < cr { (xe, ce) } else { (xr, cr) };
            } else if cr < simplex[DIM - 1].1 {
                simplex[DIM] = (xr, cr);
            } else if cr < worst_cost {
                let (xc, cc) = search.eval(axpy(CONTRACTION * REFLECTION, &away, &centroid));
                if cc <= cr {
                    simplex[DIM] = (xc, cc);
                } else {
                    shrink = true;
                }
            } else {
                let (xc, cc) = search.eval(axpy(-CONTRACTION, &away, &centroid));
                if cc < worst_cost {
                    simplex[DIM] = (xc, cc);
                } else {
                    shrink = true;
                }
            }
            if shrink {
                let anchor = simplex[0].0;
                for v in simplex[1..].iter_mut() {
                    *v = search.eval(axpy(SHRINK, &sub(&v.0, &anchor), &anchor));
                }
            }

            sort_simplex(&mut simplex);
            iterations += 1;
            trace.push(TraceEntry {
                iteration: iterations,
                best: -search.best_cost,
                spread: spread(&simplex),
            });
        };

        if run == cfg.restarts || termination == Termination::MaxIter {
            return Ok(OptimResult {
                best: search.best,
                best_value: -search.best_cost,
                iterations,
                evaluations: search.evaluations,
                termination,
                trace,
            });
        }
    }
    unreachable!("loop returns on its last run")
}
