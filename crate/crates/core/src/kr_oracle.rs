//! Exact evaluation of the unbalanced transport cost `W_p` and of the
//! `KR_p^{alpha,beta}` norm for finitely supported measures.
//!
//! Both are solved as linear programs over the support of the input. The
//! brute-force evaluator at the bottom enumerates the same infimum on a grid and
//! exists only to cross-check the LP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::measures::{
    coalesce, total_variation, DiscreteMeasure, ExtremalAtom, KrParams, PlanEntry, Point, TransportPlan,
};

const BALANCE_RTOL: f64 = 1e-12;

/// Optimal decomposition of a measure into created/destroyed mass and transport.
///
/// Sign convention: at atom `i` of `support`,
/// `w_i = creation_i + sum_j plan(i -> j) - sum_j plan(j -> i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrWitness {
    /// Coalesced input measure; indices in `creation` and `plan` refer to its atoms.
    pub support: DiscreteMeasure,
    pub creation: Vec<f64>,
    pub plan: TransportPlan,
    pub value: f64,
}

impl KrWitness {
    /// `alpha * sum |creation| + sum mass * (beta + d^p)`.
    pub fn cost(&self, params: &KrParams) -> f64 {
        let create: f64 = self.creation.iter().map(|c| c.abs()).sum::<f64>() * params.alpha;
        let moved: f64 = self
            .plan
            .entries
            .iter()
            .map(|e| e.mass * params.transport_cost(&self.support.atoms[e.source].x, &self.support.atoms[e.target].x))
            .sum();
        create + moved
    }

    /// Largest violation of the per-atom balance equations.
    pub fn balance_residual(&self) -> f64 {
        let mut net: Vec<f64> = self.creation.clone();
        for e in &self.plan.entries {
            net[e.source] += e.mass;
            net[e.target] -= e.mass;
        }
        net.iter().zip(&self.support.atoms).map(|(n, a)| (n - a.w).abs()).fold(0.0, f64::max)
    }
}

/// `W_p(mu_plus, mu_minus)` without the `1/p` root, with an optimal plan.
///
/// Plan indices are `source` into `mu_plus` and `target` into `mu_minus`;
/// entries between coincident locations carry no cost and are omitted.
pub fn wasserstein_p(mu_plus: &DiscreteMeasure, mu_minus: &DiscreteMeasure, p: f64) -> Result<(f64, TransportPlan)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParams(format!("p must lie in (0, 1], got {p}")));
    }
    for m in [mu_plus, mu_minus] {
        if let Some((index, a)) = m.atoms.iter().enumerate().find(|(_, a)| a.w < 0.0) {
            return Err(Error::NegativeWeight { index, weight: a.w });
        }
    }
    let (m1, m2) = (mu_plus.total_mass(), mu_minus.total_mass());
    if (m1 - m2).abs() > BALANCE_RTOL * m1.max(m2) {
        return Err(Error::UnbalancedInput(m1, m2));
    }
    if m1 == 0.0 {
        return Ok((0.0, TransportPlan::default()));
    }

    let (m, n) = (mu_plus.len(), mu_minus.len());
    let rescale = m1 / m2;
    let mut lp = LinearProgram::new(m * n);
    let cost = |i: usize, j: usize| mu_plus.atoms[i].x.dist(&mu_minus.atoms[j].x).powf(p);
    for i in 0..m {
        for j in 0..n {
            lp.set_cost(i * n + j, cost(i, j));
        }
    }
    for i in 0..m {
        lp.add_equality((0..n).map(|j| (i * n + j, 1.0)).collect(), mu_plus.atoms[i].w);
    }
    for j in 0..n {
        lp.add_equality((0..m).map(|i| (i * n + j, 1.0)).collect(), mu_minus.atoms[j].w * rescale);
    }
    let sol = lp.solve()?;

    let mut plan = TransportPlan::default();
    let mut value = 0.0;
    for i in 0..m {
        for j in 0..n {
            let mass = sol.x[i * n + j];
            let c = cost(i, j);
            if mass > 1e-15 * m1 && c > 0.0 {
                plan.entries.push(PlanEntry { source: i, target: j, mass });
                value += mass * c;
            }
        }
    }
    Ok((value, plan))
}

/// `||mu||_{KR_p^{alpha,beta}}` with an optimal witness.
///
/// The LP lives on the coalesced support of `mu`: creation variables split into
/// nonnegative pairs per atom and a transport variable for every ordered pair
/// of distinct atoms.
pub fn kr_norm(mu: &DiscreteMeasure, params: &KrParams) -> Result<(f64, KrWitness)> {
    params.validate()?;
    let support = coalesce(mu, 0.0);
    let n = support.len();
    if n == 0 {
        let witness = KrWitness { support, creation: Vec::new(), plan: TransportPlan::default(), value: 0.0 };
        return Ok((0.0, witness));
    }
    let scale = support.atoms.iter().map(|a| a.w.abs()).fold(0.0, f64::max);

    let pair_index = |i: usize, j: usize| 2 * n + i * (n - 1) + if j < i { j } else { j - 1 };
    let mut lp = LinearProgram::new(2 * n + n * (n - 1));
    for i in 0..n {
        lp.set_cost(i, params.alpha);
        lp.set_cost(n + i, params.alpha);
        for j in (0..n).filter(|&j| j != i) {
            lp.set_cost(pair_index(i, j), params.transport_cost(&support.atoms[i].x, &support.atoms[j].x));
        }
    }
    for i in 0..n {
        let mut row = vec![(i, 1.0), (n + i, -1.0)];
        for j in (0..n).filter(|&j| j != i) {
            row.push((pair_index(i, j), 1.0));
            row.push((pair_index(j, i), -1.0));
        }
        lp.add_equality(row, support.atoms[i].w / scale);
    }
    let sol = lp.solve()?;

    let creation: Vec<f64> = (0..n).map(|i| scale * (sol.x[i] - sol.x[n + i])).collect();
    let mut plan = TransportPlan::default();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mass = sol.x[pair_index(i, j)];
            if mass > 1e-15 {
                plan.entries.push(PlanEntry { source: i, target: j, mass: scale * mass });
            }
        }
    }
    let mut witness = KrWitness { support, creation, plan, value: 0.0 };
    witness.value = witness.cost(params);
    Ok((witness.value, witness))
}

/// Grid-search evaluation of the KR norm for measures with at most three atoms.
///
/// The balanced part `nu` is restricted to the support of `mu`; its free
/// coordinates range over `grid + 1` levels in `[-TV, TV]` and `W_p(nu+, nu-)`
/// is obtained by enumerating the (forced) coupling.
pub fn kr_norm_bruteforce(mu: &DiscreteMeasure, params: &KrParams, grid: usize) -> Result<f64> {
    params.validate()?;
    let support = coalesce(mu, 0.0);
    let n = support.len();
    if n > 3 {
        return Err(Error::TooLarge(n));
    }
    let pts: Vec<Point> = support.atoms.iter().map(|a| a.x).collect();
    let w: Vec<f64> = support.atoms.iter().map(|a| a.w).collect();
    let objective = |v: &[f64]| -> f64 {
        let create: f64 = w.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>() * params.alpha;
        let mass: f64 = v.iter().map(|x| x.abs()).sum();
        create + 0.5 * params.beta * mass + forced_coupling_cost(&pts, v, params.p)
    };
    match n {
        0 => Ok(0.0),
        1 => Ok(params.alpha * w[0].abs()),
        _ => {
            let tv = total_variation(&support);
            let grid = grid.max(1);
            let level = |k: usize| -tv + 2.0 * tv * k as f64 / grid as f64;
            let mut best = objective(&vec![0.0; n]);
            if n == 2 {
                for k in 0..=grid {
                    let v = level(k);
                    best = best.min(objective(&[v, -v]));
                }
            } else {
                for k1 in 0..=grid {
                    let v1 = level(k1);
                    for k2 in 0..=grid {
                        let v2 = level(k2);
                        best = best.min(objective(&[v1, v2, -v1 - v2]));
                    }
                }
            }
            Ok(best)
        }
    }
}

/// A priori bound on `kr_norm_bruteforce - kr_norm` from the grid spacing.
pub fn bruteforce_resolution(mu: &DiscreteMeasure, params: &KrParams, grid: usize) -> f64 {
    let support = coalesce(mu, 0.0);
    let n = support.len();
    if n <= 1 {
        return 0.0;
    }
    let mut dmax: f64 = 0.0;
    for a in &support.atoms {
        for b in &support.atoms {
            dmax = dmax.max(params.cost(&a.x, &b.x));
        }
    }
    let h = 2.0 * total_variation(&support) / grid.max(1) as f64;
    let lipschitz = 2.0 * params.alpha + params.beta + 2.0 * dmax;
    (n - 1) as f64 * 0.5 * h * lipschitz
}

/// Transport cost between the positive and negative parts of a balanced
/// vector `v` on `pts`, valid when one side has at most one atom.
fn forced_coupling_cost(pts: &[Point], v: &[f64], p: f64) -> f64 {
    let pos: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    let neg: Vec<usize> = (0..v.len()).filter(|&i| v[i] < 0.0).collect();
    let (hub, spokes) = match (pos.len(), neg.len()) {
        (0, _) | (_, 0) => return 0.0,
        (1, _) => (pos[0], neg),
        (_, 1) => (neg[0], pos),
        _ => unreachable!("at most three atoms"),
    };
    spokes.iter().map(|&j| v[j].abs() * pts[hub].dist(&pts[j]).powf(p)).sum()
}

/// Gauge upper bound `sum c_j` for `|| sum c_j e_j ||_KR` over unit-norm atoms.
pub fn gauge_decomposition_value(atoms: &[ExtremalAtom], coeffs: &[f64], params: &KrParams) -> f64 {
    assert_eq!(atoms.len(), coeffs.len(), "one coefficient per atom");
    debug_assert!(coeffs.iter().all(|c| *c >= 0.0));
    debug_assert!(atoms.iter().all(|a| a.validate(params).is_ok()));
    coeffs.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p1(x: f64) -> Point {
        Point::new1(x)
    }

    fn params() -> KrParams {
        KrParams::new(0.9, 0.4, 1.0).unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let (v, plan) =
            wasserstein_p(&DiscreteMeasure::dirac(p1(0.0), 1.0), &DiscreteMeasure::dirac(p1(1.0), 1.0), 1.0).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        assert_eq!(plan.entries, vec![PlanEntry { source: 0, target: 0, mass: 1.0 }]);

        let d0 = DiscreteMeasure::dirac(p1(0.0), 1.0);
        let (v, plan) = wasserstein_p(&d0, &d0, 0.5).unwrap();
        assert_eq!(v, 0.0);
        assert!(plan.entries.is_empty());

        let two = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(1.0), 1.0)]);
        let (v, _) = wasserstein_p(&two, &DiscreteMeasure::dirac(p1(0.5), 2.0), 0.5).unwrap();
        assert_relative_eq!(v, 2.0 * 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn wasserstein_errors() {
        let a = DiscreteMeasure::dirac(p1(0.0), 1.0);
        let b = DiscreteMeasure::dirac(p1(1.0), 2.0);
        assert!(matches!(wasserstein_p(&a, &b, 1.0), Err(Error::UnbalancedInput(..))));
        let c = DiscreteMeasure::from_atoms([(p1(0.0), 2.0), (p1(1.0), -1.0)]);
        assert!(matches!(wasserstein_p(&c, &a, 1.0), Err(Error::NegativeWeight { index: 1, .. })));
    }

    #[test]
    fn wasserstein_on_a_line_matches_cdf_formula() {
        // for p = 1 on the line, W_1 is the L1 distance of the cumulative distributions
        let a = DiscreteMeasure::from_atoms([(p1(0.0), 0.3), (p1(1.0), 0.2), (p1(4.0), 0.5)]);
        let b = DiscreteMeasure::from_atoms([(p1(0.5), 0.6), (p1(3.0), 0.4)]);
        let (v, plan) = wasserstein_p(&a, &b, 1.0).unwrap();
        // cdf difference on [0,0.5): 0.3, [0.5,1): 0.3, [1,3): 0.1, [3,4): 0.5
        let expect = 0.3 * 0.5 + 0.3 * 0.5 + 0.1 * 2.0 + 0.5 * 1.0;
        assert_relative_eq!(v, expect, epsilon = 1e-12);
        assert_relative_eq!(plan.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kr_norm_examples() {
        let (v, _) = kr_norm(&DiscreteMeasure::dirac(p1(7.0), 1.0), &params()).unwrap();
        assert_relative_eq!(v, 0.9, epsilon = 1e-14);

        let near = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(0.1), -1.0)]);
        let (v, w) = kr_norm(&near, &params()).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-12);
        assert_eq!(w.plan.entries.len(), 1);
        assert_eq!((w.plan.entries[0].source, w.plan.entries[0].target), (0, 1));
        assert_relative_eq!(w.plan.entries[0].mass, 1.0, epsilon = 1e-12);
        assert!(w.creation.iter().all(|c| c.abs() < 1e-12));

        let far = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(10.0), -1.0)]);
        let (v, w) = kr_norm(&far, &params()).unwrap();
        assert_relative_eq!(v, 1.8, epsilon = 1e-12);
        assert!(w.plan.entries.is_empty());
        assert_relative_eq!(w.creation[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.creation[1], -1.0, epsilon = 1e-12);

        assert_eq!(kr_norm(&DiscreteMeasure::new(), &params()).unwrap().0, 0.0);
    }

    #[test]
    fn kr_norm_rejects_bad_params() {
        let bad = KrParams { alpha: 0.1, beta: 0.4, p: 1.0 };
        assert!(matches!(kr_norm(&DiscreteMeasure::new(), &bad), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn bruteforce_examples() {
        let near = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(0.1), -1.0)]);
        let v = kr_norm_bruteforce(&near, &params(), 200).unwrap();
        assert!((v - 0.5).abs() <= bruteforce_resolution(&near, &params(), 200));
        assert!(v >= 0.5 - 1e-12);

        for grid in [1, 7, 50] {
            let v = kr_norm_bruteforce(&DiscreteMeasure::dirac(p1(7.0), 1.0), &params(), grid).unwrap();
            assert_relative_eq!(v, 0.9, epsilon = 1e-14);
        }
        assert_eq!(kr_norm_bruteforce(&DiscreteMeasure::new(), &params(), 10).unwrap(), 0.0);

        let four = DiscreteMeasure::from_atoms((0..4).map(|i| (p1(i as f64), 1.0)));
        assert!(matches!(kr_norm_bruteforce(&four, &params(), 10), Err(Error::TooLarge(4))));
    }

    #[test]
    fn witness_is_feasible_and_cost_consistent() {
        let mu = DiscreteMeasure::from_atoms([
            (p1(0.0), 1.3),
            (p1(0.2), -0.4),
            (p1(0.5), -1.1),
            (p1(3.0), 0.7),
            (p1(3.3), -0.2),
        ]);
        let (v, w) = kr_norm(&mu, &params()).unwrap();
        assert!(w.balance_residual() < 1e-10);
        assert_relative_eq!(w.cost(&params()), v, epsilon = 1e-12);
    }

    #[test]
    fn coincident_atoms_cancel_before_the_lp() {
        let mu = DiscreteMeasure::from_atoms([(p1(1.0), 2.0), (p1(1.0), -0.5)]);
        let (v, w) = kr_norm(&mu, &params()).unwrap();
        assert_relative_eq!(v, 0.9 * 1.5, epsilon = 1e-12);
        assert_eq!(w.support.len(), 1);
    }

    #[test]
    fn gauge_value() {
        let d = ExtremalAtom::dipole(p1(0.0), p1(0.5));
        assert_eq!(gauge_decomposition_value(&[], &[], &params()), 0.0);
        assert_eq!(gauge_decomposition_value(&[d, d], &[1.0, 2.0], &params()), 3.0);
        assert_eq!(gauge_decomposition_value(&[ExtremalAtom::dirac(1, p1(1.0))], &[0.7], &params()), 0.7);
    }
}
