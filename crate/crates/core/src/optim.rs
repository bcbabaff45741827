//! Small quasi-Newton minimizers used by the localizer and the orientation
//! search.

use std::collections::VecDeque;

/// Stopping rules shared by the minimizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Options {
    pub max_iter: usize,
    /// Stop when the (projected) gradient infinity-norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this (infinity-norm).
    pub step_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub rel_tol: f64,
    /// Upper bound on the length of the first trial step.
    pub max_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iter: 100,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            rel_tol: 1e-12,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

const ARMIJO: f64 = 1e-4;

/// Dense BFGS with backtracking line search. `f` writes the gradient into its
/// second argument and returns the objective.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &Options) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    // Inverse Hessian approximation, row-major.
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        if inf_norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        iter += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            for i in 0..n {
                h[i * n..(i + 1) * n].fill(0.0);
                h[i * n + i] = 1.0;
            }
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut alpha = if dn > opts.max_step { opts.max_step / dn } else { 1.0 };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite() && f_new <= fx + ARMIJO * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if inf_norm(&s) < opts.step_tol || decrease <= opts.rel_tol * fx.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: iter,
        evaluations: evals,
        converged,
    }
}

/// Limited-memory BFGS with lower bounds (`x_i >= lower_i`; use
/// `f64::NEG_INFINITY` for free variables). Steps are projected onto the
/// feasible box and variables held at an active bound are frozen for the
/// search direction.
pub fn lbfgs_bounded<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    memory: usize,
    opts: &Options,
) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for (v, lo) in x.iter_mut().zip(lower) {
            if *v < *lo {
                *v = *lo;
            }
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        let active: Vec<bool> = (0..n)
            .map(|i| x[i] <= lower[i] && g[i] > 0.0)
            .collect();
        let pg = (0..n)
            .map(|i| if active[i] { 0.0 } else { g[i].abs() })
            .fold(0.0, f64::max);
        if pg < opts.grad_tol {
            converged = true;
            break;
        }
        iter += 1;
        // Two-loop recursion on the free variables.
        let mut q: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += s[i] * (a - b);
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { -q[i] }).collect();
        if dot(&g, &d) >= 0.0 {
            d = (0..n).map(|i| if active[i] { 0.0 } else { -g[i] }).collect();
            hist.clear();
        }
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut alpha = if dn > opts.max_step { opts.max_step / dn } else { 1.0 };
        if hist.is_empty() && dn * alpha > 0.0 {
            // Without curvature information take a unit-ish step.
            alpha = alpha.min(1.0 / inf_norm(&d).max(1.0));
        }
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            project(&mut x_new);
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            let moved: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if f_new.is_finite() && f_new <= fx + ARMIJO * moved && moved < 0.0 {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y) {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s.clone(), y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if inf_norm(&s) < opts.step_tol || decrease <= opts.rel_tol * fx.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: iter,
        evaluations: evals,
        converged,
    }
}
