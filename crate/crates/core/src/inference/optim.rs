//! Limited-memory BFGS minimizer with a backtracking line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    pub max_iterations: usize,
    pub memory: usize,
    /// Relative objective change threshold.
    pub f_tolerance: f64,
    /// Gradient max-norm threshold.
    pub g_tolerance: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            memory: 10,
            f_tolerance: 1e-8,
            g_tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_change: f64,
}

impl OptimResult {
    pub fn grad_max_norm(&self) -> f64 {
        max_norm(&self.gradient)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient. Evaluations that
/// fail or are non-finite count as rejected steps.
pub fn minimize<F>(f: F, x0: Vec<f64>, opts: &OptimOptions) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_preconditioned(f, x0, opts, None)
}

/// As [`minimize`], with `curvature` a positive approximation of the
/// Hessian diagonal used as the initial inverse-Hessian scaling.
pub fn minimize_preconditioned<F>(
    f: F,
    x0: Vec<f64>,
    opts: &OptimOptions,
    curvature: Option<&[f64]>,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let inv: Vec<f64> = match curvature {
        Some(c) => {
            if c.len() != x0.len() || c.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Domain("preconditioner must be positive with one entry per parameter".into()));
            }
            c.iter().map(|v| 1.0 / v).collect()
        }
        None => vec![1.0; x0.len()],
    };
    let scaled = curvature.is_some();
    let descent = |g: &[f64]| -> Vec<f64> { g.iter().zip(&inv).map(|(v, h)| -v * h).collect() };
    let (mut fx, mut g) = f(&x0).map_err(|e| Error::Optimization {
        iterations: 0,
        message: format!("objective fails at the starting point: {e}"),
    })?;
    let mut x = x0;
    let n = x.len();
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut rel = f64::INFINITY;
    let mut iter = 0;
    while iter < opts.max_iterations {
        if max_norm(&g) < opts.g_tolerance && rel < opts.f_tolerance {
            break;
        }
        iter += 1;
        let mut d = direction(&g, &memory, &inv);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            memory.clear();
            d = descent(&g);
            gd = dot(&g, &d);
        }
        let first = memory.is_empty() && !scaled;
        let step = line_search(&f, &x, fx, &g, &d, gd, first);
        let (alpha, f_new, g_new) = match step {
            Some(s) => s,
            None if !memory.is_empty() => {
                // retry once along (scaled) steepest descent
                memory.clear();
                d = descent(&g);
                gd = dot(&g, &d);
                match line_search(&f, &x, fx, &g, &d, gd, !scaled) {
                    Some(s) => s,
                    None => break,
                }
            }
            None => break,
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let x_new: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        rel = (f_new - fx).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    debug_assert_eq!(x.len(), n);
    let converged = max_norm(&g) < opts.g_tolerance && rel < opts.f_tolerance;
    if !converged && iter < opts.max_iterations {
        return Err(Error::Optimization {
            iterations: iter,
            message: format!(
                "line search failed; objective {fx:.6e}, gradient max-norm {:.3e}",
                max_norm(&g)
            ),
        });
    }
    Ok(OptimResult {
        x,
        value: fx,
        gradient: g,
        iterations: iter,
        converged,
        relative_change: rel,
    })
}

/// Two-loop recursion for `-H g`, seeded with `gamma * diag(inv)`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, inv: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = match memory.back() {
        Some((s, y, _)) => {
            let yhy: f64 = y.iter().zip(inv).map(|(v, h)| v * v * h).sum();
            dot(s, y) / yhy
        }
        None => 1.0,
    };
    for (qi, h) in q.iter_mut().zip(inv) {
        *qi *= gamma * h;
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Backtracking with halving. Accepts on sufficient decrease, or on the
/// approximate Wolfe condition when the decrease is below rounding noise.
fn line_search<F>(
    f: &F,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    gd: f64,
    first: bool,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut alpha = if first { (1.0 / max_norm(g)).min(1.0) } else { 1.0 };
    let noise = 1e-12 * fx.abs().max(1.0);
    let mut trial = vec![0.0; x.len()];
    for _ in 0..60 {
        for ((t, xi), di) in trial.iter_mut().zip(x).zip(d) {
            *t = xi + alpha * di;
        }
        if let Ok((f_new, g_new)) = f(&trial) {
            if f_new.is_finite() {
                let armijo = f_new <= fx + 1e-4 * alpha * gd;
                let slope = dot(&g_new, d);
                let approx_wolfe = f_new <= fx + noise && slope.abs() <= 0.9 * gd.abs();
                if armijo || approx_wolfe {
                    return Some((alpha, f_new, g_new));
                }
            }
        }
        alpha *= 0.5;
    }
    None
}
