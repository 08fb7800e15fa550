//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Minimizes. Points where the objective is non-finite are treated as failed
//! line-search trials, so the iterate sequence is monotone and every accepted
//! point has a finite value.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the max-norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease over one iteration drops below this.
    pub f_tol: f64,
    /// Any coordinate beyond this magnitude counts as divergence.
    pub max_abs_x: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 8,
            grad_tol: 1e-6,
            f_tol: 1e-12,
            max_abs_x: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `objective` returns `(value, gradient)`; `None` or a non-finite value marks
/// an infeasible point.
pub fn minimize<F>(mut objective: F, x0: &[f64], opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let eval = |f: &mut F, x: &[f64]| match f(x) {
        Some((v, g)) if v.is_finite() && g.iter().all(|g| g.is_finite()) => Some((v, g)),
        _ => None,
    };

    let Some((mut fx, mut gx)) = eval(&mut objective, x0) else {
        return Err(Error::Fit {
            iterations: 0,
            objective: f64::NAN,
            last_finite: x0.to_vec(),
        });
    };
    let mut x = x0.to_vec();
    if n == 0 {
        return Ok(Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: true,
        });
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for iter in 0..opts.max_iter {
        if max_abs(&gx) < opts.grad_tol {
            return Ok(Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            });
        }

        // Two-loop recursion.
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / max_abs(&gx).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &dir);
        if slope >= 0.0 {
            history.clear();
            let scale = 1.0 / max_abs(&gx).max(1.0);
            dir = gx.iter().map(|g| -g * scale).collect();
            slope = dot(&gx, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = eval(&mut objective, &trial) {
                if ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No decrease along the search direction.
            return Ok(Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            });
        };

        if max_abs(&xn) > opts.max_abs_x {
            return Err(Error::Fit {
                iterations: iter + 1,
                objective: fx,
                last_finite: x,
            });
        }

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        gx = gn;
        if decrease <= opts.f_tol * fx.abs().max(1.0) {
            return Ok(Minimum {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            });
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        iterations: opts.max_iter,
        converged: false,
    })
}
