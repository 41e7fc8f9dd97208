//! Limited-memory BFGS with a strong-Wolfe line search, plus a central
//! finite-difference gradient checker.
//!
//! The minimizer follows the textbook two-loop recursion: it keeps the last
//! `m` (s, y) pairs, scales the initial Hessian approximation by s'y / y'y,
//! and searches along the resulting direction with bracketing + zoom using
//! cubic interpolation (Nocedal & Wright, Algorithms 3.5/3.6). Curvature
//! pairs with s'y <= 1e-10 ||s|| ||y|| are skipped. A failed line search is
//! non-fatal: the run stops and the best point probed is returned.

use std::collections::VecDeque;

use thiserror::Error;

/// Configuration for [`lbfgs_minimize`]. `0 < c1 < c2 < 1` and `history >= 1`.
#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of (s, y) pairs kept for the two-loop recursion.
    pub history: usize,
    pub max_iters: usize,
    /// Terminate once the gradient infinity norm is at or below this.
    pub grad_tol: f64,
    /// Sufficient-decrease (Armijo) constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Total objective evaluations allowed per line search.
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> LbfgsConfig {
        LbfgsConfig {
            history: 10,
            max_iters: 200,
            grad_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 30,
        }
    }
}

/// One accepted iteration. The slope fields record the directional
/// derivatives at the start and end of the accepted step so that the strong
/// Wolfe conditions can be checked from the trace.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub value: f64,
    pub prev_value: f64,
    pub grad_inf_norm: f64,
    pub step: f64,
    pub slope_start: f64,
    pub slope_end: f64,
}

/// Per-iteration history of an optimization run; objective values are
/// non-increasing across accepted iterations.
#[derive(Debug, Clone, Default)]
pub struct OptTrace {
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub termination: Termination,
    pub trace: OptTrace,
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective returned a non-finite value or gradient at an accepted point")]
    NonFiniteObjective,
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: -H * grad with the scaled-identity initial Hessian.
fn direction(history: &VecDeque<Pair>, grad: &[f64]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let alpha = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (pair, alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (alpha - beta) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Minimizes `objective` starting from `x0`. The objective returns the value
/// and gradient at a point; both must be finite at `x0`.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
) -> Result<LbfgsOutcome, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(cfg.history >= 1, "history must be at least 1");
    assert!(
        0.0 < cfg.c1 && cfg.c1 < cfg.c2 && cfg.c2 < 1.0,
        "need 0 < c1 < c2 < 1"
    );

    let mut x = x0.to_vec();
    let (mut fx, mut grad) = objective(&x);
    if !is_finite(fx, &grad) {
        return Err(OptimError::NonFiniteObjective);
    }
    assert_eq!(grad.len(), x.len(), "gradient dimension mismatch");

    let mut history: VecDeque<Pair> = VecDeque::with_capacity(cfg.history);
    let mut trace = OptTrace::default();
    let mut termination = Termination::MaxIterations;

    for iter in 0..cfg.max_iters {
        if inf_norm(&grad) <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut dir = direction(&history, &grad);
        let mut slope = dot(&dir, &grad);
        if slope >= 0.0 || !slope.is_finite() {
            // not a descent direction: fall back to steepest descent
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
            if slope == 0.0 {
                termination = Termination::GradientTolerance;
                break;
            }
        }
        let first_step = if iter == 0 && history.is_empty() {
            (1.0 / l2_norm(&grad)).min(1.0)
        } else {
            1.0
        };

        match line_search(&mut objective, &x, fx, &dir, slope, first_step, cfg) {
            LineSearchResult::Wolfe(found) => {
                let s: Vec<f64> = found.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = found.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * l2_norm(&s) * l2_norm(&y) {
                    if history.len() == cfg.history {
                        history.pop_front();
                    }
                    history.push_back(Pair {
                        rho: 1.0 / sy,
                        s,
                        y,
                    });
                }
                trace.iterations.push(IterationRecord {
                    value: found.value,
                    prev_value: fx,
                    grad_inf_norm: inf_norm(&found.grad),
                    step: found.step,
                    slope_start: slope,
                    slope_end: found.slope,
                });
                x = found.x;
                fx = found.value;
                grad = found.grad;
            }
            LineSearchResult::Failed(best) => {
                // no strong-Wolfe point; keep the best sufficiently
                // decreasing probe, if any, and stop
                if let Some(best) = best {
                    if best.value < fx {
                        x = best.x;
                        fx = best.value;
                        grad = best.grad;
                    }
                }
                termination = Termination::LineSearchFailed;
                break;
            }
        }
    }
    if termination == Termination::MaxIterations && inf_norm(&grad) <= cfg.grad_tol {
        termination = Termination::GradientTolerance;
    }

    Ok(LbfgsOutcome {
        x,
        value: fx,
        gradient: grad,
        termination,
        trace,
    })
}

struct LsPoint {
    step: f64,
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
    usable: bool,
}

enum LineSearchResult {
    Wolfe(LsPoint),
    Failed(Option<LsPoint>),
}

struct LsProbe<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    evals: usize,
    max_evals: usize,
    best: Option<LsPoint>,
}

impl<'a, F> LsProbe<'a, F>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn eval(&mut self, step: f64) -> LsPoint {
        let xt: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(xi, di)| xi + step * di)
            .collect();
        let (value, grad) = (self.objective)(&xt);
        self.evals += 1;
        let usable = is_finite(value, &grad);
        let slope = if usable {
            dot(&grad, self.dir)
        } else {
            f64::INFINITY
        };
        let pt = LsPoint {
            step,
            x: xt,
            value,
            grad,
            slope,
            usable,
        };
        if pt.usable && pt.value <= self.f0 + self.c1 * step * self.slope0 {
            let improves = self.best.as_ref().is_none_or(|b| pt.value < b.value);
            if improves {
                self.best = Some(LsPoint {
                    step: pt.step,
                    x: pt.x.clone(),
                    value: pt.value,
                    grad: pt.grad.clone(),
                    slope: pt.slope,
                    usable: true,
                });
            }
        }
        pt
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }
}

/// Strong Wolfe line search: a bracketing phase that doubles the step until
/// it overshoots, then zoom on the bracketed interval.
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope0: f64,
    first_step: f64,
    cfg: &LbfgsConfig,
) -> LineSearchResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut probe = LsProbe {
        objective,
        x,
        dir,
        f0,
        slope0,
        c1: cfg.c1,
        evals: 0,
        max_evals: cfg.max_line_search_steps,
        best: None,
    };
    // the zero-step end of the initial bracket
    let mut prev = (0.0f64, f0, slope0);
    let mut step = first_step.max(f64::MIN_POSITIVE);
    let mut first = true;

    while !probe.exhausted() {
        let pt = probe.eval(step);
        if !pt.usable || pt.value > f0 + cfg.c1 * step * slope0 || (!first && pt.value >= prev.1) {
            return zoom(&mut probe, prev, (pt.step, pt.value, pt.slope), cfg);
        }
        if pt.slope.abs() <= -cfg.c2 * slope0 {
            return LineSearchResult::Wolfe(pt);
        }
        if pt.slope >= 0.0 {
            return zoom(&mut probe, (pt.step, pt.value, pt.slope), prev, cfg);
        }
        prev = (pt.step, pt.value, pt.slope);
        step *= 2.0;
        first = false;
    }
    LineSearchResult::Failed(probe.best.take())
}

/// Zoom phase; `lo` always satisfies sufficient decrease. Interval ends are
/// (step, value, slope) triples; a non-finite value marks an unusable end.
fn zoom<F>(
    probe: &mut LsProbe<'_, F>,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    cfg: &LbfgsConfig,
) -> LineSearchResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let f0 = probe.f0;
    let slope0 = probe.slope0;
    while !probe.exhausted() {
        let width = (hi.0 - lo.0).abs();
        if width <= 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
        let mut step = if hi.1.is_finite() {
            cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            f64::NAN
        };
        // safeguard: keep strictly inside the interval
        let (a, b) = if lo.0 < hi.0 {
            (lo.0, hi.0)
        } else {
            (hi.0, lo.0)
        };
        let margin = 0.05 * width;
        if !step.is_finite() || step <= a + margin || step >= b - margin {
            step = 0.5 * (a + b);
        }

        let pt = probe.eval(step);
        if !pt.usable || pt.value > f0 + cfg.c1 * step * slope0 || pt.value >= lo.1 {
            hi = (
                pt.step,
                if pt.usable { pt.value } else { f64::INFINITY },
                pt.slope,
            );
        } else {
            if pt.slope.abs() <= -cfg.c2 * slope0 {
                return LineSearchResult::Wolfe(pt);
            }
            if pt.slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (pt.step, pt.value, pt.slope);
        }
    }
    LineSearchResult::Failed(probe.best.take())
}

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db);
/// NaN when the interpolation is degenerate.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

/// Central-difference gradient check. Returns the maximum over coordinates
/// of |g_i - ghat_i| / max(1, |g_i|, |ghat_i|).
pub fn grad_check<F>(mut objective: F, x: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = objective(x);
    let mut max_rel = 0.0f64;
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        xt[i] = x[i] + h;
        let (fp, _) = objective(&xt);
        xt[i] = x[i] - h;
        let (fm, _) = objective(&xt);
        xt[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / 1.0f64.max(grad[i].abs()).max(fd.abs());
        max_rel = max_rel.max(rel);
    }
    max_rel
}
