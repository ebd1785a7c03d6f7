use std::collections::VecDeque;

use crate::error::{ensure, Result};
use crate::math::{axpy, dot};

/// Strong Wolfe line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evaluations: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            c1: 1e-4,
            c2: 0.9,
            max_evaluations: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the gradient's infinity norm falls to this value.
    pub gradient_tolerance: f64,
    /// Stop once an iteration decreases the objective by less than this
    /// fraction of its magnitude. Zero disables the test.
    pub value_tolerance: f64,
    pub line_search: LineSearchConfig,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            value_tolerance: 0.0,
            line_search: LineSearchConfig::default(),
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        ensure!(self.memory >= 1, "L-BFGS memory must be positive");
        ensure!(0.0 < ls.c1 && ls.c1 < ls.c2 && ls.c2 < 1.0, "line search needs 0 < c1 < c2 < 1");
        ensure!(ls.max_evaluations >= 1, "line search needs at least one evaluation");
        ensure!(self.gradient_tolerance >= 0.0, "gradient tolerance must be nonnegative");
        ensure!(self.value_tolerance >= 0.0, "value tolerance must be nonnegative");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// No step satisfying the line-search conditions was found; the result
    /// holds the best point seen.
    LineSearchFailed,
    /// The monitor callback asked to stop.
    Stopped,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    /// Objective value at the start and after every accepted iteration.
    pub history: Vec<f64>,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizes `objective`, which returns the value at `x` and writes the
/// gradient into its second argument.
///
/// `monitor` is called after every accepted iteration with the iteration
/// count, parameters and value; returning `false` stops the run.
pub fn lbfgs_minimize<F, M>(mut objective: F, x0: &[f64], cfg: &LbfgsConfig, mut monitor: M) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    M: FnMut(usize, &[f64], f64) -> bool,
{
    cfg.validate()?;
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut cur = {
        let mut g = vec![0.0; n];
        let f = objective(x0, &mut g);
        evaluations += 1;
        Point { x: x0.to_vec(), f, g }
    };
    ensure!(cur.f.is_finite(), "objective is not finite at the starting point");
    let mut history = vec![cur.f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;

    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory];
    while iterations < cfg.max_iterations {
        if inf_norm(&cur.g) <= cfg.gradient_tolerance {
            status = LbfgsStatus::Converged;
            break;
        }
        two_loop(&cur.g, &pairs, &mut alpha_buf, &mut dir);
        let mut slope = dot(&dir, &cur.g);
        if !(slope < 0.0) {
            pairs.clear();
            dir.iter_mut().zip(&cur.g).for_each(|(d, g)| *d = -g);
            slope = dot(&dir, &cur.g);
        }
        let initial_step = if pairs.is_empty() {
            (1.0 / cur.g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let search = line_search(&mut objective, &cur, &dir, slope, initial_step, &cfg.line_search);
        evaluations += search.evaluations;
        let Some(next) = search.point else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = cur.f - next.f;
        debug_assert!(decrease >= 0.0);
        let scale = cur.f.abs().max(next.f.abs()).max(1.0);
        cur = next;
        history.push(cur.f);
        if !monitor(iterations, &cur.x, cur.f) {
            status = LbfgsStatus::Stopped;
            break;
        }
        if !search.wolfe {
            status = LbfgsStatus::LineSearchFailed;
            break;
        }
        if cfg.value_tolerance > 0.0 && decrease <= cfg.value_tolerance * scale {
            status = LbfgsStatus::Converged;
            break;
        }
    }
    if status == LbfgsStatus::MaxIterations && inf_norm(&cur.g) <= cfg.gradient_tolerance {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsResult {
        params: cur.x,
        value: cur.f,
        iterations,
        evaluations,
        status,
        history,
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Computes `dir = -H·g` from the stored curvature pairs.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, alpha: &mut [f64], dir: &mut [f64]) {
    dir.iter_mut().zip(g).for_each(|(d, g)| *d = -g);
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, dir);
        axpy(-alpha[k], y, dir);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        dir.iter_mut().for_each(|d| *d *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, dir);
        axpy(alpha[k] - beta, s, dir);
    }
}

struct SearchOutcome {
    /// Accepted point, if any step decreased the objective.
    point: Option<Point>,
    /// Whether the accepted point satisfies the strong Wolfe conditions.
    wolfe: bool,
    evaluations: usize,
}

struct Trial {
    step: f64,
    f: f64,
    slope: f64,
    point: Point,
}

fn line_search<F>(
    objective: &mut F,
    start: &Point,
    dir: &[f64],
    slope0: f64,
    initial_step: f64,
    cfg: &LineSearchConfig,
) -> SearchOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let f0 = start.f;
    let mut evaluations = 0usize;
    let mut best: Option<Trial> = None;
    let mut eval = |step: f64, evaluations: &mut usize| -> Trial {
        let mut x = start.x.clone();
        axpy(step, dir, &mut x);
        let mut g = vec![0.0; x.len()];
        let f = objective(&x, &mut g);
        *evaluations += 1;
        let slope = dot(&g, dir);
        Trial {
            step,
            f,
            slope,
            point: Point { x, f, g },
        }
    };
    let keep_best = |best: &mut Option<Trial>, t: &Trial| {
        if t.f.is_finite() && t.f < f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                step: t.step,
                f: t.f,
                slope: t.slope,
                point: Point {
                    x: t.point.x.clone(),
                    f: t.point.f,
                    g: t.point.g.clone(),
                },
            });
        }
    };
    let armijo = |t: &Trial| t.f.is_finite() && t.f <= f0 + cfg.c1 * t.step * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * slope0;
    let done = |t: Trial, evaluations: usize| SearchOutcome {
        point: Some(t.point),
        wolfe: true,
        evaluations,
    };

    // Bracketing phase.
    let mut prev = Trial {
        step: 0.0,
        f: f0,
        slope: slope0,
        point: Point {
            x: start.x.clone(),
            f: f0,
            g: start.g.clone(),
        },
    };
    let mut step = initial_step;
    let (mut lo, mut hi);
    loop {
        let t = eval(step, &mut evaluations);
        keep_best(&mut best, &t);
        if !armijo(&t) || (prev.step > 0.0 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return done(t, evaluations);
        }
        if t.slope >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if evaluations >= cfg.max_evaluations {
            return fallback(best, evaluations);
        }
        step *= 2.0;
        prev = t;
    }

    // Zoom phase: `lo` satisfies sufficient decrease and has the lower value.
    while evaluations < cfg.max_evaluations {
        let width = hi.step - lo.step;
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let margin = 0.1 * (b - a);
        let mut trial_step = if hi.f.is_finite() {
            cubic_minimizer(lo.step, lo.f, lo.slope, hi.step, hi.f, hi.slope)
        } else {
            f64::NAN
        };
        if !trial_step.is_finite() || trial_step < a + margin || trial_step > b - margin {
            trial_step = lo.step + 0.5 * width;
        }
        if (b - a) <= 1e-16 * b.max(1.0) {
            break;
        }
        let t = eval(trial_step, &mut evaluations);
        keep_best(&mut best, &t);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return done(t, evaluations);
            }
            if t.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    fallback(best, evaluations)
}

fn fallback(best: Option<Trial>, evaluations: usize) -> SearchOutcome {
    SearchOutcome {
        point: best.map(|t| t.point),
        wolfe: false,
        evaluations,
    }
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_minimizer(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}
