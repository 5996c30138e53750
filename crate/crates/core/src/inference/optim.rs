//! Limited-memory BFGS with a bisection line search on the weak Wolfe conditions.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Converged when `‖g‖∞ < grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    pub max_line_search: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 3000,
            grad_tol: 1e-6,
            max_line_search: 60,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub line_search_failures: usize,
    pub converged: bool,
    pub message: String,
    /// Objective value after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns value and gradient. Evaluation errors inside
/// the line search are treated as an infinite value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut failures = 0;
    let mut restarted = false;
    let mut history = vec![fx];
    let mut stalled = 0;

    for iter in 0..opts.max_iter {
        if inf_norm(&g) < opts.grad_tol * (1.0 + fx.abs()) {
            return Ok(report(
                x,
                fx,
                g,
                iter,
                evaluations,
                failures,
                true,
                "gradient tolerance reached",
                history,
            ));
        }
        if n == 0 {
            break;
        }
        // Two-loop recursion for d = −H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut t = 1.0;
        let mut best: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;
        let mut accepted = None;
        // Near the optimum differences in f drown in roundoff; the approximate
        // Wolfe test then judges a non-increasing step by its slope alone.
        for _ in 0..opts.max_line_search {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            evaluations += 1;
            let (ft, gt) = match f(&xt) {
                Ok(v) if v.0.is_finite() => v,
                _ => (f64::INFINITY, Vec::new()),
            };
            let armijo = ft <= fx + opts.c1 * t * slope;
            let slope_t = if ft.is_finite() {
                dot(&gt, &d)
            } else {
                f64::NAN
            };
            let approx = ft <= fx && slope_t <= (1.0 - 2.0 * opts.c1) * -slope;
            if !(armijo || approx) {
                hi = t;
            } else {
                let better = best
                    .as_ref()
                    .is_none_or(|b| ft < b.0 || (ft == b.0 && t < b.2));
                if better {
                    best = Some((ft, gt.clone(), t, xt.clone()));
                }
                if slope_t < opts.c2 * slope {
                    lo = t;
                } else {
                    accepted = Some((ft, gt, t, xt));
                    break;
                }
            }
            t = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * lo.max(t)
            };
        }
        let step = accepted.or(best);
        let Some((ft, gt, _t, xt)) = step else {
            failures += 1;
            if restarted || hist.is_empty() {
                return Ok(report(
                    x,
                    fx,
                    g,
                    iter,
                    evaluations,
                    failures,
                    false,
                    "line search failed",
                    history,
                ));
            }
            hist.clear();
            restarted = true;
            continue;
        };
        restarted = false;
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let progress = fx - ft;
        let g_before = inf_norm(&g);
        x = xt;
        fx = ft;
        g = gt;
        history.push(fx);
        if progress <= f64::EPSILON * fx.abs() && inf_norm(&g) >= g_before {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if stalled >= 5 {
            let conv = inf_norm(&g) < opts.grad_tol * (1.0 + fx.abs());
            return Ok(report(
                x,
                fx,
                g,
                iter + 1,
                evaluations,
                failures,
                conv,
                "no further progress",
                history,
            ));
        }
    }
    let conv = inf_norm(&g) < opts.grad_tol * (1.0 + fx.abs());
    let msg = if conv {
        "gradient tolerance reached"
    } else {
        "iteration limit reached"
    };
    Ok(report(
        x,
        fx,
        g,
        opts.max_iter,
        evaluations,
        failures,
        conv,
        msg,
        history,
    ))
}

#[allow(clippy::too_many_arguments)]
fn report(
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    iterations: usize,
    evaluations: usize,
    line_search_failures: usize,
    converged: bool,
    message: &str,
    history: Vec<f64>,
) -> LbfgsReport {
    LbfgsReport {
        x,
        f,
        g,
        iterations,
        evaluations,
        line_search_failures,
        converged,
        message: message.to_string(),
        history,
    }
}
