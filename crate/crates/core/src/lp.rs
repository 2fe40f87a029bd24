//! Dense two-phase tableau simplex for small equality-form LPs:
//! minimize `c^T x` subject to `A x = b`, `x >= 0`.
//!
//! Pivoting follows Bland's rule (smallest eligible index enters, ties in the
//! ratio test leave by smallest basic index), which rules out cycling on the
//! highly degenerate transport instances this crate feeds it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("problem is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("problem is unbounded below")]
    Unbounded,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    cost: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram { n: n_vars, cost: vec![0.0; n_vars], rows: Vec::new(), rhs: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        self.cost[j] = c;
    }

    /// Add the constraint `sum coeffs[k].1 * x[coeffs[k].0] = rhs`.
    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n));
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    n: usize,
    width: usize,
    // row-major, m rows of `width` entries; last column holds the rhs
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.n;
        let width = n + m + 1;
        let mut t = vec![0.0; m * width];
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
            let r = &mut t[i * width..(i + 1) * width];
            for &(j, v) in row {
                r[j] += sign * v;
            }
            r[n + i] = 1.0;
            r[width - 1] = sign * lp.rhs[i];
        }
        Tableau { m, n, width, t, obj: vec![0.0; width], basis: (n..n + m).collect(), active: vec![true; m], pivots: 0 }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let limit = 50 * (self.n + self.m) + 1000;

        // phase one: minimize the sum of artificials
        let mut c1 = vec![0.0; self.n + self.m];
        for c in c1.iter_mut().skip(self.n) {
            *c = 1.0;
        }
        self.price(&c1);
        self.iterate(self.n + self.m, limit)?;
        let infeas = -self.obj[self.width - 1];
        let scale = 1.0 + lp.rhs.iter().map(|b| b.abs()).sum::<f64>();
        if infeas > FEAS_TOL * scale {
            return Err(LpError::Infeasible(infeas));
        }
        self.expel_artificials();

        // phase two
        let mut c2 = lp.cost.clone();
        c2.resize(self.n + self.m, 0.0);
        self.price(&c2);
        self.iterate(self.n, limit)?;

        let x = self.extract(lp);
        let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: self.pivots })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.m {
            if !self.active[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (o, r) in self.obj.iter_mut().zip(row) {
                    *o -= cb * r;
                }
            }
        }
    }

    /// Bland's-rule iterations; only columns `< eligible` may enter.
    fn iterate(&mut self, eligible: usize, limit: usize) -> Result<(), LpError> {
        loop {
            if self.pivots >= limit {
                return Err(LpError::IterationLimit(limit));
            }
            let Some(enter) = (0..eligible).find(|&j| self.obj[j] < -COST_TOL) else {
                return Ok(());
            };
            let rhs = self.width - 1;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active[i] {
                    continue;
                }
                let a = self.at(i, enter);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-14 * (1.0 + best)
                                || (ratio <= best + 1e-14 * (1.0 + best) && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, enter);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.at(row, col);
        {
            let r = &mut self.t[row * w..(row + 1) * w];
            for v in r.iter_mut() {
                *v /= p;
            }
            r[col] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[row * w..(row + 1) * w].to_vec();
        for i in 0..self.m {
            if i == row || !self.active[i] {
                continue;
            }
            let f = self.t[i * w + col];
            if f != 0.0 {
                let r = &mut self.t[i * w..(i + 1) * w];
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                r[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Pivot zero-level artificials out of the basis; rows where that is
    /// impossible are linearly dependent and get deactivated.
    fn expel_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.n {
                continue;
            }
            let col = (0..self.n)
                .filter(|&j| self.at(i, j).abs() > 1e-9)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            match col {
                Some(j) => self.pivot(i, j),
                None => self.active[i] = false,
            }
        }
    }

    /// Read off the basic solution, re-solving `B x_B = b` from the original
    /// data to shed accumulated tableau round-off.
    fn extract(&self, lp: &LinearProgram) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.m).filter(|&i| self.active[i]).collect();
        let cols: Vec<usize> = rows.iter().map(|&i| self.basis[i]).collect();
        let mut x = vec![0.0; self.n];
        for &i in &rows {
            x[self.basis[i]] = self.at(i, self.width - 1).max(0.0);
        }
        let k = rows.len();
        if k == 0 || cols.iter().any(|&j| j >= self.n) {
            return x;
        }
        let mut b_mat = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut col_of = vec![usize::MAX; self.n];
        for (c, &j) in cols.iter().enumerate() {
            col_of[j] = c;
        }
        for (r, &i) in rows.iter().enumerate() {
            for &(j, v) in &lp.rows[i] {
                if col_of[j] != usize::MAX {
                    b_mat[(r, col_of[j])] += v;
                }
            }
            rhs[r] = lp.rhs[i];
        }
        if let Some(sol) = b_mat.lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite() && *v > -1e-8) {
                for (c, &j) in cols.iter().enumerate() {
                    x[j] = sol[c].max(0.0);
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let mut lp = LinearProgram::new(4);
        lp.set_cost(0, -1.0);
        lp.set_cost(1, -1.0);
        lp.add_equality(vec![(0, 1.0), (1, 2.0), (2, 1.0)], 4.0);
        lp.add_equality(vec![(0, 3.0), (1, 1.0), (3, 1.0)], 6.0);
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, -2.8, epsilon = 1e-12);
        assert_relative_eq!(s.x[0], 1.6, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        // x0 + x1 = -(-1), duplicated row, min x0 + 2 x1
        let mut lp = LinearProgram::new(2);
        lp.set_cost(0, 1.0);
        lp.set_cost(1, 2.0);
        lp.add_equality(vec![(0, -1.0), (1, -1.0)], -1.0);
        lp.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0);
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_equality(vec![(0, 1.0)], -1.0);
        assert!(matches!(lp.solve(), Err(LpError::Infeasible(_))));

        let mut lp = LinearProgram::new(2);
        lp.set_cost(0, -1.0);
        lp.add_equality(vec![(0, 1.0), (1, -1.0)], 0.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn degenerate_assignment() {
        // 3x3 assignment problem; heavy degeneracy, optimum is the anti-diagonal
        let cost = [[4.0, 2.0, 1.0], [2.0, 1.0, 4.0], [1.0, 3.0, 5.0]];
        let mut lp = LinearProgram::new(9);
        for (i, row) in cost.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                lp.set_cost(3 * i + j, *c);
            }
        }
        for i in 0..3 {
            lp.add_equality((0..3).map(|j| (3 * i + j, 1.0)).collect(), 1.0);
            lp.add_equality((0..3).map(|j| (3 * j + i, 1.0)).collect(), 1.0);
        }
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, 3.0, epsilon = 1e-12);
    }
}
