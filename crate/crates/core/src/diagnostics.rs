//! First-order optimality certification of a solver result and numerical
//! checks of the structural assumptions behind linear convergence.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agcg::{search_maxima, IterateRecord, SolveResult};
use crate::certificate::{build_certificate, MaximizerSettings, QuadraticFidelity};
use crate::error::{Error, Result};
use crate::measures::{Domain, ExtremalAtom, KrParams, Point};
use crate::operators::ForwardOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracGap {
    pub z: Point,
    pub sign: i8,
    pub q_over_alpha: f64,
    /// `|q(z)| / alpha - 1`.
    pub gap: f64,
    pub sign_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleGap {
    pub x: Point,
    pub y: Point,
    pub psi: f64,
    /// `Psi(x, y) - 1`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub tol: f64,
    pub diracs: Vec<DiracGap>,
    pub dipoles: Vec<DipoleGap>,
    pub max_abs_q_over_alpha: f64,
    pub max_psi: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracCurvature {
    pub z: Point,
    pub sign: i8,
    pub hess_det: f64,
    /// Negative definite for a positive Dirac, positive definite for a negative one.
    pub definite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleCurvature {
    pub x: Point,
    pub y: Point,
    pub psi: f64,
    pub hess_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Curvature of the quadratic fidelity; strong convexity near the optimal
    /// observation holds with this constant for every quadratic `F`.
    pub gamma: f64,
    pub diracs: Vec<DiracCurvature>,
    pub dipoles: Vec<DipoleCurvature>,
    /// Singular values of the matrix of observations of the active atoms, descending.
    pub singular_values: Vec<f64>,
    pub min_singular_value: f64,
    pub condition_number: f64,
    pub min_lambda: f64,
    pub n_diracs: usize,
    pub n_dipoles: usize,
    /// Local maxima of `|q|` found within `1e-6` of the global maximum.
    pub q_near_global: usize,
    /// Local maxima of `Psi` found within `1e-6` of the global maximum.
    pub psi_near_global: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn check_first_order<O: ForwardOperator + ?Sized>(
    result: &SolveResult,
    op: &O,
    fidelity: &QuadraticFidelity,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
    tol: f64,
) -> Result<OptimalityReport> {
    let cert = build_certificate(op, fidelity, &result.measure);
    let mut diracs = Vec::new();
    let mut dipoles = Vec::new();
    for atom in &result.active_set.atoms {
        match *atom {
            ExtremalAtom::Dirac { sign, z } => {
                let q = cert.q_value(&z) / params.alpha;
                diracs.push(DiracGap {
                    z,
                    sign,
                    q_over_alpha: q,
                    gap: q.abs() - 1.0,
                    sign_ok: q * f64::from(sign) > 0.0,
                });
            }
            ExtremalAtom::Dipole { x, y } => {
                let psi = cert.psi_value(params, &x, &y);
                dipoles.push(DipoleGap { x, y, psi, gap: psi - 1.0 });
            }
        }
    }
    let (q_report, psi_report) = search_maxima(&cert, params, domain, settings, &result.active_set);
    let max_abs_q_over_alpha = q_report.value / params.alpha;
    let max_psi = psi_report.value;
    let pass = diracs.iter().all(|d| d.sign_ok && d.gap.abs() <= tol)
        && dipoles.iter().all(|d| d.gap.abs() <= tol)
        && max_abs_q_over_alpha <= 1.0 + tol
        && max_psi <= 1.0 + tol;
    Ok(OptimalityReport { tol, diracs, dipoles, max_abs_q_over_alpha, max_psi, pass })
}

pub fn check_linear_assumptions<O: ForwardOperator + ?Sized>(
    result: &SolveResult,
    op: &O,
    fidelity: &QuadraticFidelity,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
) -> Result<AssumptionReport> {
    let cert = build_certificate(op, fidelity, &result.measure);
    let mut diracs = Vec::new();
    let mut dipoles = Vec::new();
    for atom in &result.active_set.atoms {
        match *atom {
            ExtremalAtom::Dirac { sign, z } => {
                let h = cert.q_hess(&z);
                let eig = h.clone().symmetric_eigenvalues();
                let definite = if sign > 0 { eig.iter().all(|l| *l < 0.0) } else { eig.iter().all(|l| *l > 0.0) };
                diracs.push(DiracCurvature { z, sign, hess_det: h.determinant(), definite });
            }
            ExtremalAtom::Dipole { x, y } => {
                let jet = cert.psi_jet(params, &x, &y)?;
                dipoles.push(DipoleCurvature { x, y, psi: jet.value, hess_det: jet.hess.determinant() });
            }
        }
    }

    let singular_values = atom_singular_values(op, &result.active_set.atoms, params)?;
    let min_singular_value = singular_values.last().copied().unwrap_or(0.0);
    let condition_number = match singular_values.first() {
        Some(&s) if min_singular_value > 0.0 => s / min_singular_value,
        Some(_) => f64::INFINITY,
        None => 1.0,
    };

    let (q_report, psi_report) = search_maxima(&cert, params, domain, settings, &result.active_set);
    Ok(AssumptionReport {
        gamma: fidelity.gamma,
        n_diracs: diracs.len(),
        n_dipoles: dipoles.len(),
        diracs,
        dipoles,
        singular_values,
        min_singular_value,
        condition_number,
        min_lambda: result.active_set.lambdas.iter().copied().fold(f64::INFINITY, f64::min),
        q_near_global: q_report.near_global(1e-6).len(),
        psi_near_global: psi_report.near_global(1e-6).len(),
    })
}

/// Singular values (descending) of the matrix whose columns are the
/// observations of the atoms, scaled so that the Euclidean product matches the
/// inner product of the observation space.
pub fn atom_singular_values<O: ForwardOperator + ?Sized>(
    op: &O,
    atoms: &[ExtremalAtom],
    params: &KrParams,
) -> Result<Vec<f64>> {
    if atoms.is_empty() {
        return Ok(Vec::new());
    }
    let root: Vec<f64> = op.inner_weights().iter().map(|w| w.sqrt()).collect();
    let m = root.len();
    let mut mat = DMatrix::zeros(m, atoms.len());
    for (j, a) in atoms.iter().enumerate() {
        let col = op.gram_column(a, params)?;
        for i in 0..m {
            mat[(i, j)] = root[i] * col.values[i];
        }
    }
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    // a wide matrix has fewer singular values than atoms; the rest are zero
    sv.resize(atoms.len(), 0.0);
    Ok(sv)
}

/// Least-squares fit of `ln r_hat` against `k` over the last third of the
/// history, using only records with `r_hat > 0`.
pub fn fit_tail_rate(history: &[IterateRecord]) -> Result<TailFit> {
    if history.len() < 9 {
        return Err(Error::InsufficientData(format!("need at least 9 records, got {}", history.len())));
    }
    let start = history.len() - history.len() / 3;
    let pts: Vec<(f64, f64)> =
        history[start..].iter().filter(|r| r.r_hat > 0.0).map(|r| (r.k as f64, r.r_hat.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!("{} positive residuals in the tail", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(TailFit { slope, intercept, r_squared, n_points: pts.len() })
}

/// `max_k (k + 1) r_hat_k` over the whole history and over its first `head` records.
pub fn sublinear_constants(history: &[IterateRecord], head: usize) -> (f64, f64) {
    let c = |rs: &[IterateRecord]| rs.iter().map(|r| (r.k as f64 + 1.0) * r.r_hat).fold(0.0, f64::max);
    (c(history), c(&history[..head.min(history.len())]))
}
