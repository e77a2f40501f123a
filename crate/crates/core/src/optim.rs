//! Limited-memory quasi-Newton minimization with a strong-Wolfe cubic
//! line search (two-loop recursion for the implicit inverse Hessian).
//!
//! Trial points where the objective is not finite are treated as "too
//! far" by the line search, so exponential overflow in the model simply
//! shortens the step instead of aborting the solve.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { grad_tol: 1e-6, max_iters: 100, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS_EVALS: usize = 40;

/// Minimize `obj`, which writes the gradient into its second argument and
/// returns the objective value (possibly non-finite).
pub fn minimize(
    mut obj: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> MinimizeResult {
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut evals = 0usize;
    let mut f = obj(&x, &mut g);
    evals += 1;
    if dim == 0 {
        return MinimizeResult {
            x,
            f,
            grad: g,
            iterations: 0,
            evaluations: evals,
            converged: true,
            line_search_failed: false,
        };
    }
    if !f.is_finite() {
        return MinimizeResult {
            x,
            f,
            grad: g,
            iterations: 0,
            evaluations: evals,
            converged: false,
            line_search_failed: true,
        };
    }

    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut line_search_failed = false;

    while iterations < opts.max_iters {
        if inf_norm(&g) < opts.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..dim {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let sy = dot(s, y);
            let yy = dot(y, y);
            if sy > 0.0 && yy > 0.0 {
                let scale = sy / yy;
                d.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..dim {
                d[i] += (a - b) * s[i];
            }
        }

        let mut g_dot_d = dot(&g, &d);
        if !(g_dot_d < 0.0) || !g_dot_d.is_finite() {
            // Not a descent direction; fall back to steepest descent.
            d = g.iter().map(|v| -v).collect();
            g_dot_d = dot(&g, &d);
            hist.clear();
        }

        match wolfe_search(&mut obj, &x, f, &g, &d, g_dot_d, &mut evals) {
            Some((alpha, f_new, x_new, g_new)) => {
                let _ = alpha;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * inf_norm(&s) * inf_norm(&y).max(1e-300) {
                    if hist.len() >= opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                x = x_new;
                g = g_new;
                f = f_new;
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }

    let converged = inf_norm(&g) < opts.grad_tol;
    MinimizeResult {
        x,
        f,
        grad: g,
        iterations,
        evaluations: evals,
        converged,
        line_search_failed,
    }
}

/// Strong-Wolfe line search with cubic interpolation and a bracketing
/// phase; non-finite trial values shrink the bracket.
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    obj: &mut impl FnMut(&[f64], &mut [f64]) -> f64,
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    dphi0: f64,
    evals: &mut usize,
) -> Option<(f64, f64, Vec<f64>, Vec<f64>)> {
    let dim = x.len();
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];
    let mut phi = |alpha: f64, g_out: &mut [f64], trial: &mut [f64], evals: &mut usize| -> f64 {
        for i in 0..dim {
            trial[i] = x[i] + alpha * d[i];
        }
        *evals += 1;
        obj(trial, g_out)
    };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut alpha = 1.0;
    let mut ls_evals = 0;

    // Bracketing phase.
    let (mut lo, mut hi, mut f_lo, mut dphi_lo) = loop {
        ls_evals += 1;
        if ls_evals > MAX_LS_EVALS {
            return None;
        }
        let f_a = phi(alpha, &mut g_trial, &mut trial, evals);
        if !f_a.is_finite() {
            // Too far out; bracket between the last good point and here.
            break (alpha_prev, alpha, f_prev, dphi_prev);
        }
        let dphi_a = dot(&g_trial, d);
        if f_a > f0 + C1 * alpha * dphi0 || (ls_evals > 1 && f_a >= f_prev) {
            break (alpha_prev, alpha, f_prev, dphi_prev);
        }
        if dphi_a.abs() <= -C2 * dphi0 {
            return Some((alpha, f_a, trial, g_trial));
        }
        if dphi_a >= 0.0 {
            break (alpha, alpha_prev, f_a, dphi_a);
        }
        alpha_prev = alpha;
        f_prev = f_a;
        dphi_prev = dphi_a;
        alpha *= 2.0;
    };

    // Zoom phase.
    for _ in 0..MAX_LS_EVALS {
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
        // Cubic-ish guess via bisection-safeguarded interpolation.
        let mid = 0.5 * (lo + hi);
        let alpha_j = if dphi_lo.is_finite() && f_lo.is_finite() {
            // Quadratic interpolation using f_lo, dphi_lo and the
            // mid-bracket as fallback.
            let denom = dphi_lo;
            let cand = lo - 0.5 * dphi_lo * (hi - lo) / denom.abs().max(1e-300);
            if cand.is_finite() && (cand - lo) * (cand - hi) < 0.0 {
                0.5 * (cand + mid)
            } else {
                mid
            }
        } else {
            mid
        };
        let f_j = phi(alpha_j, &mut g_trial, &mut trial, evals);
        if !f_j.is_finite() {
            hi = alpha_j;
            continue;
        }
        let dphi_j = dot(&g_trial, d);
        if f_j > f0 + C1 * alpha_j * dphi0 || f_j >= f_lo {
            hi = alpha_j;
        } else {
            if dphi_j.abs() <= -C2 * dphi0 {
                return Some((alpha_j, f_j, trial, g_trial));
            }
            if dphi_j * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = alpha_j;
            f_lo = f_j;
            dphi_lo = dphi_j;
        }
    }

    // Accept the best sufficient-decrease point even without curvature.
    if lo > 0.0 {
        let f_l = phi(lo, &mut g_trial, &mut trial, evals);
        if f_l.is_finite() && f_l < f0 {
            return Some((lo, f_l, trial, g_trial));
        }
    }
    None
}
