//! Conic coefficient problem over a fixed dictionary:
//! minimize `phi(l) = gamma/2 l^T G l - gamma g^T l + gamma/2 |t|^2 + 1^T l` over `l >= 0`.
//!
//! Accelerated projected gradient with adaptive restart runs first; its
//! support then seeds a Lawson-Hanson active-set polish that lands on an exact
//! KKT point whenever the reduced systems are solvable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientProblem {
    /// `G_ij = <K mu_i, K mu_j>_Y`.
    pub gram: DMatrix<f64>,
    /// `g_j = <K mu_j, target>_Y`.
    pub linear: DVector<f64>,
    pub gamma: f64,
    /// `|target|_Y^2`.
    pub target_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSolution {
    pub lambda: Vec<f64>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Outer FISTA iterations between polish attempts.
const FISTA_BUDGET: usize = 400;

impl CoefficientProblem {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, gamma: f64, target_norm_sq: f64) -> Result<Self> {
        let n = linear.len();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: gram.nrows() });
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(CoefficientProblem { gram, linear, gamma, target_norm_sq })
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn objective_value(&self, lambda: &[f64]) -> f64 {
        let l = DVector::from_column_slice(lambda);
        let gl = &self.gram * &l;
        0.5 * self.gamma * l.dot(&gl) - self.gamma * self.linear.dot(&l)
            + 0.5 * self.gamma * self.target_norm_sq
            + l.sum()
    }

    pub fn gradient(&self, lambda: &[f64]) -> DVector<f64> {
        let l = DVector::from_column_slice(lambda);
        (&self.gram * &l - &self.linear) * self.gamma + DVector::from_element(self.len(), 1.0)
    }

    /// `max_j max(|min(l_j, d_j phi)|, -d_j phi)`.
    pub fn kkt_residual(&self, lambda: &[f64]) -> f64 {
        let g = self.gradient(lambda);
        lambda.iter().zip(g.iter()).map(|(&l, &d)| l.min(d).abs().max(-d)).fold(0.0, f64::max)
    }

    /// Power-iteration estimate of the largest eigenvalue of `gamma G`.
    fn lipschitz(&self) -> f64 {
        let n = self.len();
        let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..50 {
            let w = &self.gram * &v;
            let nw = w.norm();
            if nw == 0.0 {
                break;
            }
            est = nw;
            v = w / nw;
        }
        let diag_max = self.gram.diagonal().iter().fold(0.0f64, |a, b| a.max(*b));
        1.05 * self.gamma * est.max(diag_max).max(f64::MIN_POSITIVE)
    }
}

/// Default tolerance `1e-12 (1 + |phi(0)|)`.
pub fn default_tolerance(problem: &CoefficientProblem) -> f64 {
    1e-12 * (1.0 + problem.objective_value(&vec![0.0; problem.len()]).abs())
}

pub fn solve_coefficients(
    problem: &CoefficientProblem,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CoefficientSolution> {
    let n = problem.len();
    if init.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: init.len() });
    }
    let start: Vec<f64> = init.iter().map(|v| v.max(0.0)).collect();
    let phi_start = problem.objective_value(&start);
    if n == 0 {
        return Ok(CoefficientSolution {
            lambda: start,
            kkt_residual: 0.0,
            objective: phi_start,
            iterations: 0,
            converged: true,
        });
    }

    let step = 1.0 / problem.lipschitz();
    let mut x = start.clone();
    let mut best = (phi_start, start.clone());
    let mut iterations = 0;
    let mut kkt = problem.kkt_residual(&x);

    while kkt > tol && iterations < max_iter {
        let budget = FISTA_BUDGET.min(max_iter - iterations);
        x = fista(problem, &x, step, budget, tol);
        iterations += budget;
        let phi = problem.objective_value(&x);
        if phi <= best.0 {
            best = (phi, x.clone());
        }
        if let Some(p) = polish(problem, &x) {
            let pp = problem.objective_value(&p);
            if pp <= best.0 + 1e-14 * (1.0 + pp.abs()) {
                best = (pp, p);
            }
        }
        kkt = problem.kkt_residual(&best.1);
        x = best.1.clone();
    }

    let lambda = best.1;
    let kkt_residual = problem.kkt_residual(&lambda);
    Ok(CoefficientSolution {
        objective: problem.objective_value(&lambda),
        converged: kkt_residual <= tol,
        lambda,
        kkt_residual,
        iterations,
    })
}

/// FISTA with function-value restart.
fn fista(problem: &CoefficientProblem, x0: &[f64], step: f64, iters: usize, tol: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = problem.objective_value(&x);
    for it in 0..iters {
        let g = problem.gradient(&y);
        let next: Vec<f64> = y.iter().zip(g.iter()).map(|(v, d)| (v - step * d).max(0.0)).collect();
        let fn_ = problem.objective_value(&next);
        if fn_ > fx {
            // restart momentum from the last accepted point
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(a, b)| (a + beta * (a - b)).max(0.0)).collect();
        x = next;
        fx = fn_;
        t = t_next;
        if it % 25 == 24 && problem.kkt_residual(&x) <= tol {
            break;
        }
    }
    x
}

/// Lawson-Hanson active-set iterations started from the support of `x0`.
fn polish(problem: &CoefficientProblem, x0: &[f64]) -> Option<Vec<f64>> {
    let n = problem.len();
    let a = &problem.gram * problem.gamma;
    let b = &problem.linear * problem.gamma - DVector::from_element(n, 1.0);
    let mut x = x0.to_vec();
    let mut passive: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    let scale = 1.0 + a.amax() + b.amax();

    for _ in 0..(3 * n + 10) {
        // inner loop: reach a feasible minimizer on the current passive set
        for _ in 0..(n + 1) {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            if idx.is_empty() {
                x.iter_mut().for_each(|v| *v = 0.0);
                break;
            }
            let z = reduced_solve(&a, &b, &idx)?;
            if z.iter().all(|v| *v > 0.0) {
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut step = 1.0f64;
            let mut blocking = idx[0];
            for (k, &j) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let s = x[j] / (x[j] - z[k]);
                    if s < step {
                        step = s;
                        blocking = j;
                    }
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += step * (z[k] - x[j]);
                if j == blocking || x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        x.iter_mut().zip(&passive).for_each(|(v, p)| {
            if !p {
                *v = 0.0
            }
        });

        let grad = problem.gradient(&x);
        let cand = (0..n).filter(|&j| !passive[j]).min_by(|&i, &j| grad[i].total_cmp(&grad[j]).then(i.cmp(&j)));
        match cand {
            Some(j) if grad[j] < -1e-14 * scale => passive[j] = true,
            _ => return Some(x),
        }
    }
    Some(x)
}

/// Solution of `(A_PP + delta I) z = b_P` with a tiny `delta`.
///
/// Near-duplicate atoms make `A_PP` numerically singular; the shift keeps the
/// system solvable, and on an unbounded reduced problem it yields a long step
/// along the descent ray, which the ratio test then truncates.
fn reduced_solve(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> Option<Vec<f64>> {
    let k = idx.len();
    let m = DMatrix::from_fn(k, k, |r, c| a[(idx[r], idx[c])]);
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let rhs = DVector::from_fn(k, |r, _| b[idx[r]]);
    let mut delta = 1e-13 * scale;
    for _ in 0..6 {
        let shifted = &m + DMatrix::identity(k, k) * delta;
        if let Some(chol) = shifted.cholesky() {
            let mut z = chol.solve(&rhs);
            // refinement against the unshifted system removes the shift bias
            for _ in 0..3 {
                let r = &rhs - &m * &z;
                z += chol.solve(&r);
            }
            if z.iter().all(|v| v.is_finite()) {
                return Some(z.iter().copied().collect());
            }
        }
        delta *= 10.0;
    }
    None
}
