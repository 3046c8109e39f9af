//! Truncated Newton-CG with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smooth objective with an exact Hessian and a positive semi-definite
/// Gauss–Newton substitute.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    /// Objective value; `+∞` outside the domain.
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn gauss_newton(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonCgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonCgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Newton,
    GaussNewton,
    SteepestDescent,
}

#[derive(Debug, Clone)]
pub struct OptimReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub steps: Vec<StepKind>,
}

/// Conjugate gradients on `H p = -g`, stopped at residual `eta`. Returns
/// `None` when negative curvature shows up on the first iteration.
fn truncated_cg(h: &DMatrix<f64>, g: &DVector<f64>, eta: f64) -> Option<DVector<f64>> {
    let n = g.len();
    let mut p = DVector::zeros(n);
    let mut r = -g;
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    for i in 0..(2 * n).max(10) {
        let hd = h * &d;
        let curv = d.dot(&hd);
        if curv <= 1e-14 * d.dot(&d) {
            if i == 0 {
                return None;
            }
            break;
        }
        let alpha = rr / curv;
        p.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= eta {
            break;
        }
        d = &r + (rr_new / rr) * d;
        rr = rr_new;
    }
    Some(p)
}

pub fn newton_cg<O: SmoothObjective + ?Sized>(
    obj: &O,
    x0: DVector<f64>,
    opts: &NewtonCgOptions,
) -> Result<OptimReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("optimizer tolerance must be positive".into()));
    }
    let mut x = x0;
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(Error::Numerical("objective not finite at the starting point".into()));
    }
    let mut g = obj.gradient(&x);
    let mut trace = vec![f];
    let mut steps = Vec::new();
    for iter in 0..=opts.max_iter {
        let gnorm = g.norm();
        if !gnorm.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        if gnorm <= opts.tol {
            return Ok(OptimReport {
                x,
                value: f,
                grad_norm: gnorm,
                iterations: iter,
                trace,
                steps,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let eta = gnorm.sqrt().min(0.5) * gnorm;
        let mut candidates = Vec::with_capacity(3);
        if let Some(p) = truncated_cg(&obj.hessian(&x), &g, eta) {
            candidates.push((StepKind::Newton, p));
        } else {
            let mut gn = obj.gauss_newton(&x);
            let ridge = 1e-10 * gn.diagonal().amax().max(1.0);
            for i in 0..gn.nrows() {
                gn[(i, i)] += ridge;
            }
            if let Some(p) = truncated_cg(&gn, &g, eta) {
                candidates.push((StepKind::GaussNewton, p));
            }
        }
        candidates.push((StepKind::SteepestDescent, -&g));

        let mut accepted = false;
        for (kind, mut p) in candidates {
            let mut slope = g.dot(&p);
            if !(slope < 0.0) {
                if kind != StepKind::SteepestDescent {
                    continue;
                }
                p = -&g;
                slope = g.dot(&p);
            }
            let mut alpha = 1.0;
            for _ in 0..opts.max_backtracks {
                let trial = &x + alpha * &p;
                let ft = obj.value(&trial);
                if ft.is_finite() && ft <= f + opts.armijo_c1 * alpha * slope {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= opts.backtrack;
            }
            if accepted {
                steps.push(kind);
                break;
            }
        }
        if !accepted {
            return Err(Error::ConvergenceFailure {
                iterations: iter,
                grad_norm: gnorm,
                context: "line search stalled".into(),
            });
        }
        g = obj.gradient(&x);
        trace.push(f);
    }
    Err(Error::ConvergenceFailure {
        iterations: opts.max_iter,
        grad_norm: g.norm(),
        context: "iteration cap reached".into(),
    })
}
