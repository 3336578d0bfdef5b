use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::objective::Evaluation;
use super::{OptimResult, Termination};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop once the gradient infinity norm falls below this.
    pub tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 6000,
            memory: 10,
            tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 30,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Config("lbfgs memory must be at least 1".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", self.c1, self.c2)));
        }
        if !(self.tolerance >= 0.0) || self.max_line_search == 0 {
            return Err(Error::Config("invalid lbfgs tolerance or line search budget".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` from the stored curvature pairs.
fn two_loop(g: &[f64], mem: &VecDeque<Pair>, d: &mut [f64], alpha: &mut Vec<f64>) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d = -g);
    alpha.clear();
    for p in mem.iter().rev() {
        let a = p.rho * dot(&p.s, d);
        d.iter_mut().zip(&p.y).for_each(|(d, y)| *d -= a * y);
        alpha.push(a);
    }
    if let Some(p) = mem.back() {
        let gamma = dot(&p.s, &p.y) / dot(&p.y, &p.y);
        d.iter_mut().for_each(|d| *d *= gamma);
    }
    for (p, a) in mem.iter().zip(alpha.iter().rev()) {
        let b = p.rho * dot(&p.y, d);
        d.iter_mut().zip(&p.s).for_each(|(d, s)| *d += (a - b) * s);
    }
}

struct Point {
    alpha: f64,
    f: f64,
    dphi: f64,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    cfg: &'a LbfgsConfig,
    trial: Vec<f64>,
    grad: Vec<f64>,
    evals: usize,
    penalized: usize,
    /// Best sufficient-decrease point, kept as a fallback.
    fallback: Option<(Point, Vec<f64>, Vec<f64>)>,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<Evaluation>,
{
    fn eval(&mut self, alpha: f64) -> Result<Point> {
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.d) {
            *t = x + alpha * d;
        }
        let e = (self.f)(&self.trial, &mut self.grad)?;
        self.evals += 1;
        let f = if e.cost.is_finite() { e.cost } else { f64::INFINITY };
        if e.penalized || !e.cost.is_finite() {
            self.penalized += 1;
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        let p = Point {
            alpha,
            f,
            dphi: dot(&self.grad, self.d),
        };
        if p.f <= self.f0 + self.cfg.c1 * alpha * self.dphi0 && p.f < self.fallback.as_ref().map_or(self.f0, |b| b.0.f) {
            self.fallback = Some((
                Point { alpha, f: p.f, dphi: p.dphi },
                self.trial.clone(),
                self.grad.clone(),
            ));
        }
        Ok(p)
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.cfg.c1 * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.dphi.abs() <= -self.cfg.c2 * self.dphi0
    }

    /// Strong Wolfe step: `Some` with the accepted trial point in
    /// `self.trial`/`self.grad`.
    fn run(&mut self, alpha_init: f64) -> Result<Option<Point>> {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            dphi: self.dphi0,
        };
        let mut alpha = alpha_init;
        let mut first = true;
        while self.evals < self.cfg.max_line_search {
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Ok(Some(p));
            }
            if p.dphi >= 0.0 {
                return self.zoom(p, prev);
            }
            first = false;
            alpha = 2.0 * p.alpha;
            prev = p;
        }
        Ok(self.take_fallback())
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Result<Option<Point>> {
        while self.evals < self.cfg.max_line_search {
            let width = (hi.alpha - lo.alpha).abs();
            if width <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()).max(1e-300) {
                break;
            }
            let alpha = interpolate(&lo, &hi);
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Ok(Some(p));
                }
                if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        Ok(self.take_fallback())
    }

    fn take_fallback(&mut self) -> Option<Point> {
        let (p, x, g) = self.fallback.take()?;
        self.trial = x;
        self.grad = g;
        Some(p)
    }
}

/// Safeguarded cubic interpolation inside `(lo, hi)`.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (lo_b, hi_b) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi_b - lo_b);
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    let mut t = f64::NAN;
    if disc >= 0.0 && hi.f.is_finite() {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    }
    if !t.is_finite() || t < lo_b + margin || t > hi_b - margin {
        t = 0.5 * (a + b);
    }
    t
}

/// Limited-memory BFGS with a strong Wolfe line search.
///
/// Stops when the gradient infinity norm drops below the tolerance, after
/// `max_iterations`, or when the line search cannot make progress (even
/// after discarding the curvature memory once).
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<Evaluation>,
{
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let e = f(&x, &mut g)?;
    if !e.cost.is_finite() {
        return Err(Error::Optimizer(format!("non-finite cost at the starting point: {}", e.cost)));
    }
    let mut fx = e.cost;
    let mut evaluations = 1;
    let mut penalized = usize::from(e.penalized);
    let mut trace = vec![fx];
    let mut mem: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut scratch = Vec::with_capacity(cfg.memory);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    if e.penalized {
        termination = Termination::PenalizedStart;
    } else if inf_norm(&g) < cfg.tolerance {
        termination = Termination::Converged;
    }
    while termination == Termination::MaxIterations && iterations < cfg.max_iterations {
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if mem.is_empty() {
                    break;
                }
                mem.clear();
            }
            two_loop(&g, &mem, &mut d, &mut scratch);
            let mut dphi0 = dot(&g, &d);
            if !(dphi0 < 0.0) {
                mem.clear();
                d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
                dphi0 = -dot(&g, &g);
            }
            let alpha0 = if mem.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
            let mut ls = LineSearch {
                f: &mut f,
                x: &x,
                d: &d,
                f0: fx,
                dphi0,
                cfg,
                trial: vec![0.0; n],
                grad: vec![0.0; n],
                evals: 0,
                penalized: 0,
                fallback: None,
            };
            let step = ls.run(alpha0)?;
            evaluations += ls.evals;
            penalized += ls.penalized;
            if let Some(p) = step {
                if p.f < fx {
                    accepted = Some((p, ls.trial, ls.grad));
                    break;
                }
            }
        }
        let Some((p, x_new, g_new)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = x_new;
        g = g_new;
        fx = p.f;
        iterations += 1;
        trace.push(fx);
        if inf_norm(&g) < cfg.tolerance {
            termination = Termination::Converged;
        }
    }
    Ok(OptimResult {
        x,
        cost: fx,
        iterations,
        evaluations,
        penalized_evaluations: penalized,
        termination,
        trace,
    })
}
