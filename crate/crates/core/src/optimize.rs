//! Smooth unconstrained minimization via L-BFGS.

use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

use crate::error::{Error, Result};

pub const DEFAULT_GRAD_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: u64 = 10_000;
const HISTORY: usize = 10;
const RESTARTS: usize = 4;
const EVALS_PER_ITER: u64 = 40;
const NEWTON_STEPS: usize = 8;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// ∞-norm of the gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
}

struct Problem<'a, F> {
    f: &'a F,
    best: &'a RefCell<Option<(f64, Vec<f64>)>>,
    evals: &'a Cell<u64>,
    budget: u64,
}

impl<F> Problem<'_, F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    /// The line search can cycle forever once steps reach rounding level;
    /// the budget turns that into an error the caller recovers from.
    fn spend(&self) -> std::result::Result<(), argmin::core::Error> {
        self.evals.set(self.evals.get() + 1);
        if self.evals.get() > self.budget {
            Err(argmin::core::Error::msg("evaluation budget exhausted"))
        } else {
            Ok(())
        }
    }

    fn record(&self, x: &[f64], v: f64) {
        let mut b = self.best.borrow_mut();
        if v.is_finite() && b.as_ref().is_none_or(|(bv, _)| v < *bv) {
            *b = Some((v, x.to_vec()));
        }
    }
}

impl<F> CostFunction for Problem<'_, F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.spend()?;
        let mut g = vec![0.0; x.len()];
        let v = (self.f)(x, &mut g);
        self.record(x, v);
        Ok(v)
    }
}

impl<F> Gradient for Problem<'_, F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.spend()?;
        let mut g = vec![0.0; x.len()];
        let v = (self.f)(x, &mut g);
        self.record(x, v);
        Ok(g)
    }
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn run_lbfgs<F>(f: &F, x0: Vec<f64>, grad_tol: f64, max_iters: u64) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    if max_iters == 0 {
        return Ok((x0, 0));
    }
    let best = RefCell::new(None);
    let evals = Cell::new(0);
    let problem = Problem {
        f,
        best: &best,
        evals: &evals,
        budget: EVALS_PER_ITER * max_iters,
    };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), HISTORY)
        .with_tolerance_grad(grad_tol)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let run = Executor::new(problem, solver)
        .configure(|s| s.param(x0.clone()).max_iters(max_iters))
        .run();
    Ok(match run {
        Ok(res) => {
            let st = res.state();
            (st.get_best_param().cloned().unwrap_or(x0), st.get_iter() as usize)
        }
        // A line search that cannot make progress at rounding level ends
        // the run; the best point seen is judged by the caller.
        Err(_) => match best.into_inner() {
            Some((_, x)) => (x, 1),
            None => (x0, 0),
        },
    })
}

/// Minimizes `f`, which returns the value and writes the gradient into its
/// second argument. Succeeds when the gradient ∞-norm drops below
/// `grad_tol`; otherwise reports the best value attained.
pub fn minimize<F>(f: &F, x0: Vec<f64>, grad_tol: f64, max_iters: u64) -> Result<Minimum>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let (x, iterations) = lbfgs_phase(f, x0, grad_tol, max_iters)?;
    judge(f, x, grad_tol, iterations)
}

/// As [`minimize`] for objectives whose Hessian is tridiagonal (each
/// variable couples only to its neighbours). If L-BFGS stalls above
/// `grad_tol`, a few Newton steps with a finite-difference tridiagonal
/// Hessian finish the job.
pub fn minimize_tridiagonal<F>(f: &F, x0: Vec<f64>, grad_tol: f64, max_iters: u64) -> Result<Minimum>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let (mut x, mut iterations) = lbfgs_phase(f, x0, grad_tol, max_iters)?;
    let mut g = vec![0.0; x.len()];
    let mut value = f(&x, &mut g);
    for _ in 0..NEWTON_STEPS {
        if inf_norm(&g) < grad_tol {
            break;
        }
        let Some(step) = newton_step(f, &x, &g) else { break };
        let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a - d).collect();
        let mut gt = vec![0.0; x.len()];
        let vt = f(&trial, &mut gt);
        // Near the minimum the value is flat to rounding; require the
        // gradient to shrink and the value not to rise beyond rounding.
        if !(vt <= value + 1e-14 * value.abs().max(1.0)) || !(inf_norm(&gt) < inf_norm(&g)) {
            break;
        }
        x = trial;
        g = gt;
        value = vt;
        iterations += 1;
    }
    judge(f, x, grad_tol, iterations)
}

/// Solves `H d = g` with `H` estimated by central differences of the
/// gradient, perturbing every third variable at once.
fn newton_step<F>(f: &F, x: &[f64], g: &[f64]) -> Option<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let (mut diag, mut lower, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for c in 0..3.min(n) {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut e = vec![0.0; n];
        for i in (c..n).step_by(3) {
            e[i] = FD_STEP * (1.0 + x[i].abs());
            xp[i] += e[i];
            xm[i] -= e[i];
        }
        f(&xp, &mut gp);
        f(&xm, &mut gm);
        for i in (c..n).step_by(3) {
            let col = |j: usize| (gp[j] - gm[j]) / (2.0 * e[i]);
            diag[i] = col(i);
            if i > 0 {
                upper[i - 1] = col(i - 1);
            }
            if i + 1 < n {
                lower[i + 1] = col(i + 1);
            }
        }
    }
    // Symmetrize: off[i] couples i and i + 1.
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| 0.5 * (upper[i] + lower[i + 1])).collect();
    let mut b = diag;
    let mut d = g.to_vec();
    for i in 1..n {
        if !(b[i - 1].abs() > 0.0) {
            return None;
        }
        let w = off[i - 1] / b[i - 1];
        b[i] -= w * off[i - 1];
        d[i] -= w * d[i - 1];
    }
    let mut out = vec![0.0; n];
    out[n - 1] = d[n - 1] / b[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = (d[i] - off[i] * out[i + 1]) / b[i];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn lbfgs_phase<F>(f: &F, x0: Vec<f64>, grad_tol: f64, max_iters: u64) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let mut g0 = vec![0.0; x0.len()];
    f(&x0, &mut g0);
    if x0.is_empty() || inf_norm(&g0) < grad_tol {
        return Ok((x0, 0));
    }
    let mut x = x0;
    let mut iterations = 0;
    // A stalled line search sometimes recovers once the curvature history
    // is discarded.
    for _ in 0..RESTARTS {
        let (next, iters) = run_lbfgs(f, x.clone(), grad_tol, max_iters.saturating_sub(iterations as u64))?;
        iterations += iters;
        x = next;
        let mut g = vec![0.0; x.len()];
        f(&x, &mut g);
        if inf_norm(&g) < grad_tol || iterations as u64 >= max_iters || iters == 0 {
            break;
        }
    }
    Ok((x, iterations))
}

fn judge<F>(f: &F, x: Vec<f64>, grad_tol: f64, iterations: usize) -> Result<Minimum>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let value = f(&x, &mut g);
    let grad_norm = inf_norm(&g);
    if grad_norm < grad_tol {
        Ok(Minimum {
            x,
            value,
            grad_norm,
            iterations,
        })
    } else {
        Err(Error::OptimizationFailed {
            best: value,
            grad_norm,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = minimize(&f, vec![-1.2, 1.0], 1e-8, 10_000).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let n = 200;
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                let s = (1 + i) as f64;
                v += 0.5 * s * s * (x[i] - 1.0).powi(2);
                g[i] = s * s * (x[i] - 1.0);
            }
            v
        };
        let m = minimize(&f, vec![0.0; n], 1e-8, 10_000).unwrap();
        assert!(m.grad_norm < 1e-8);
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn tridiagonal_polish_reaches_tight_tolerance() {
        // Discrete Dirichlet energy with a quartic term: tridiagonal Hessian.
        let n = 60;
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            g.iter_mut().for_each(|gi| *gi = 0.0);
            for i in 0..=n {
                let l = if i == 0 { 0.0 } else { x[i - 1] };
                let r = if i == n { 1.0 } else { x[i] };
                let d = r - l;
                v += 500.0 * d * d + 0.25 * d.powi(4);
                let dv = 1000.0 * d + d.powi(3);
                if i > 0 {
                    g[i - 1] -= dv;
                }
                if i < n {
                    g[i] += dv;
                }
            }
            v
        };
        let m = minimize_tridiagonal(&f, vec![0.0; n], 1e-10, 10_000).unwrap();
        assert!(m.grad_norm < 1e-10);
        assert!(m.x.iter().enumerate().all(|(i, v)| (v - (i + 1) as f64 / (n + 1) as f64).abs() < 1e-10));
    }

    #[test]
    fn iteration_cap_reports_best() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        match minimize(&f, vec![-1.2, 1.0], 1e-8, 2) {
            Err(Error::OptimizationFailed { best, .. }) => assert!(best < 24.2 && best.is_finite()),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
