//! Multi-start global maximization of `|q|` over `Omega` and of `Psi_q` over
//! `Omega x Omega`.
//!
//! Each start runs a projected, eigenvalue-safeguarded Newton ascent with Armijo
//! backtracking; a few basin-hopping rounds then restart from perturbed copies
//! of the best local maxima. Starts are independent and may run in parallel;
//! perturbations are drawn up front from a seeded generator, so the report does
//! not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DualCertificate;
use crate::measures::{Domain, KrParams, Point};
use crate::operators::ForwardOperator;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximizerSettings {
    /// Seed grid size on `Omega` for `|q|`.
    pub q_seeds: usize,
    /// Seed grid size on `Omega`; `Psi` seeds are all ordered pairs of it.
    pub psi_seed_points: usize,
    /// Number of best seed pairs kept for ascent.
    pub psi_keep: usize,
    /// Number of best pairs of `q`-extrema kept for ascent.
    pub hint_keep: usize,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub perturb_rounds: usize,
    pub perturb_top: usize,
    /// Perturbation standard deviation relative to `diam(Omega)`.
    pub perturb_sigma: f64,
    pub dedupe_radius: f64,
    /// Half-width of the excluded diagonal band, relative to `diam(Omega)`.
    pub diag_tube: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for MaximizerSettings {
    fn default() -> Self {
        MaximizerSettings {
            q_seeds: 256,
            psi_seed_points: 64,
            psi_keep: 512,
            hint_keep: 128,
            max_steps: 200,
            grad_tol: 1e-10,
            perturb_rounds: 3,
            perturb_top: 8,
            perturb_sigma: 1.0 / 50.0,
            dedupe_radius: 1e-6,
            diag_tube: super::DIAG_TUBE_REL,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl MaximizerSettings {
    /// Same settings with every start budget multiplied by `factor`.
    pub fn widened(&self, factor: usize) -> Self {
        MaximizerSettings {
            q_seeds: self.q_seeds * factor,
            psi_seed_points: self.psi_seed_points * factor,
            psi_keep: self.psi_keep * factor,
            hint_keep: self.hint_keep * factor,
            perturb_top: self.perturb_top * factor,
            ..self.clone()
        }
    }
}

/// A local maximum; `points` holds `[z]` for `|q|` and `[x, y]` for `Psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMax {
    pub points: Vec<Point>,
    pub value: f64,
    /// For `|q|`: sign of `q` at the maximizer. Always `+1` for `Psi`.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizerReport {
    pub argmax: Vec<Point>,
    pub value: f64,
    pub sign: i8,
    pub n_starts: usize,
    pub n_converged: usize,
    /// Distinct local maxima, best first.
    pub local_maxima: Vec<LocalMax>,
}

impl MaximizerReport {
    /// Local maxima whose value is within `tol` of the global one.
    pub fn near_global(&self, tol: f64) -> Vec<&LocalMax> {
        self.local_maxima.iter().filter(|m| m.value >= self.value - tol).collect()
    }
}

/// Extrema of `q` used to seed the `Psi` search: pairs (local max, local min)
/// are natural candidates for transport.
#[derive(Debug, Clone, Default)]
pub struct PsiHints {
    pub maxima: Vec<Point>,
    pub minima: Vec<Point>,
    /// Pairs used as starts verbatim, e.g. the dipoles of the current iterate.
    pub pairs: Vec<(Point, Point)>,
}

impl PsiHints {
    pub fn from_report(report: &MaximizerReport) -> Self {
        let mut hints = PsiHints::default();
        for m in &report.local_maxima {
            if m.sign >= 0 {
                hints.maxima.push(m.points[0]);
            } else {
                hints.minima.push(m.points[0]);
            }
        }
        hints
    }
}

fn per_axis(total: usize, dim: usize) -> usize {
    ((total.max(1) as f64).powf(1.0 / dim as f64).round() as usize).max(2)
}

struct Ascent {
    z: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Projected Newton ascent with eigenvalue flooring and Armijo backtracking.
///
/// `eval` returns value, gradient and Hessian; `project` maps onto the feasible set.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn ascend(
    eval: &dyn Fn(&[f64]) -> (f64, DVector<f64>, DMatrix<f64>),
    value_only: &dyn Fn(&[f64]) -> f64,
    project: &dyn Fn(&mut [f64]),
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    max_len: f64,
    settings: &MaximizerSettings,
) -> Ascent {
    let m = start.len();
    let mut z = start.to_vec();
    project(&mut z);
    let (mut f, mut g, mut h) = eval(&z);
    let mut converged = false;
    for _ in 0..settings.max_steps {
        let free: Vec<usize> =
            (0..m).filter(|&i| !((z[i] <= lower[i] && g[i] < 0.0) || (z[i] >= upper[i] && g[i] > 0.0))).collect();
        let pg = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if pg <= settings.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }

        let k = free.len();
        let hf = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_fn(k, |a, _| g[free[a]]);
        let eig = SymmetricEigen::new(hf);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
        let floor = (1e-8 * scale).max(1e-300);
        let mut dir = vec![0.0; m];
        for e in 0..k {
            let v = eig.eigenvectors.column(e);
            let coef = v.dot(&gf) / eig.eigenvalues[e].abs().max(floor);
            for a in 0..k {
                dir[free[a]] += coef * v[a];
            }
        }
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !len.is_finite() || len == 0.0 {
            break;
        }
        if len > max_len {
            dir.iter_mut().for_each(|d| *d *= max_len / len);
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            project(&mut trial);
            let gain: f64 = trial.iter().zip(&z).zip(g.iter()).map(|((a, b), gi)| gi * (a - b)).sum();
            let ft = value_only(&trial);
            if ft >= f + 1e-4 * gain && ft >= f {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else { break };
        let moved = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next;
        let e = eval(&z);
        f = e.0;
        g = e.1;
        h = e.2;
        if moved <= 1e-15 * (1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    Ascent { z, value: f, converged }
}

fn dedupe(mut found: Vec<LocalMax>, radius: f64) -> Vec<LocalMax> {
    found.sort_by(|a, b| {
        b.value.total_cmp(&a.value).then_with(|| {
            let ka = a.points.iter().flat_map(|p| p.as_slice().to_vec());
            let kb = b.points.iter().flat_map(|p| p.as_slice().to_vec());
            ka.zip(kb).map(|(x, y)| x.total_cmp(&y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut kept: Vec<LocalMax> = Vec::new();
    for cand in found {
        let dup = kept.iter().any(|k| {
            k.sign == cand.sign
                && k.points
                    .iter()
                    .zip(&cand.points)
                    .all(|(a, b)| a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| (u - v).abs() <= radius))
        });
        if !dup {
            kept.push(cand);
        }
    }
    kept
}

fn perturbed_starts(best: &[LocalMax], top: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, i8)> {
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    best.iter()
        .take(top)
        .map(|m| {
            let z: Vec<f64> =
                m.points.iter().flat_map(|p| p.as_slice().to_vec()).map(|v| v + normal.sample(rng)).collect();
            (z, m.sign)
        })
        .collect()
}

fn split_points(z: &[f64], dim: usize) -> Vec<Point> {
    z.chunks(dim).map(|c| Point::from_slice(c).expect("dim is 1 or 2")).collect()
}

/// Global maximum of `|q|` over `Omega`.
///
/// Every seed is ascended on both `q` and `-q`, so `local_maxima` carries the
/// local maxima (`sign = +1`) and local minima (`sign = -1`) of `q`.
pub fn maximize_abs_q<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    domain: &Domain,
    settings: &MaximizerSettings,
) -> MaximizerReport {
    maximize_abs_q_with_seeds(cert, domain, settings, &[])
}

/// [`maximize_abs_q`] with additional seed points.
pub fn maximize_abs_q_with_seeds<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    domain: &Domain,
    settings: &MaximizerSettings,
    extra: &[Point],
) -> MaximizerReport {
    let dim = domain.dim();
    let mut seeds = domain.grid(per_axis(settings.q_seeds, dim));
    seeds.extend(extra.iter().copied());
    let max_len = 0.25 * domain.diam();
    let lower = domain.lower().to_vec();
    let upper = domain.upper().to_vec();
    let project = |z: &mut [f64]| domain.clamp(z);

    let run = |start: &[f64], sign: i8| -> (LocalMax, bool) {
        let s = f64::from(sign);
        let eval = |z: &[f64]| {
            let j = cert.q_jet(&Point::from_slice(z).expect("dim"));
            (s * j.value, j.grad_vector(dim) * s, j.hess_matrix(dim) * s)
        };
        let value_only = |z: &[f64]| s * cert.q_value(&Point::from_slice(z).expect("dim"));
        let a = ascend(&eval, &value_only, &project, &lower, &upper, start, max_len, settings);
        (LocalMax { points: split_points(&a.z, dim), value: a.value, sign }, a.converged)
    };

    let mut starts: Vec<(Vec<f64>, i8)> = Vec::with_capacity(2 * seeds.len());
    for s in &seeds {
        starts.push((s.as_slice().to_vec(), 1));
        starts.push((s.as_slice().to_vec(), -1));
    }
    let mut results = par::map(settings.execution, &starts, |(z, sign)| run(z, *sign));
    let mut n_starts = starts.len();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let sigma = settings.perturb_sigma * domain.diam();
    for _ in 0..settings.perturb_rounds {
        let current = dedupe(results.iter().map(|r| r.0.clone()).collect(), settings.dedupe_radius);
        let extra = perturbed_starts(&current, settings.perturb_top, sigma, &mut rng);
        n_starts += extra.len();
        results.extend(par::map(settings.execution, &extra, |(z, sign)| run(z, *sign)));
    }

    let n_converged = results.iter().filter(|r| r.1).count();
    let local_maxima = dedupe(results.into_iter().map(|r| r.0).collect(), settings.dedupe_radius);
    let (argmax, value, sign) = match local_maxima.first() {
        Some(best) if best.value > 0.0 => (best.points.clone(), best.value, best.sign),
        _ => (vec![seeds[0]], 0.0, 1),
    };
    MaximizerReport { argmax, value, sign, n_starts, n_converged, local_maxima }
}

/// Global maximum of `Psi_q` over `Omega x Omega`.
pub fn maximize_psi<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
) -> MaximizerReport {
    maximize_psi_with_hints(cert, params, domain, settings, &PsiHints::default())
}

/// [`maximize_psi`] with extra starts at pairs of known extrema of `q`.
pub fn maximize_psi_with_hints<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
    hints: &PsiHints,
) -> MaximizerReport {
    let dim = domain.dim();
    let tube = settings.diag_tube * domain.diam();
    let cert = &cert.clone().with_diag_tube(tube);
    let max_len = 0.25 * domain.diam();
    let lower: Vec<f64> = domain.lower().iter().chain(domain.lower()).copied().collect();
    let upper: Vec<f64> = domain.upper().iter().chain(domain.upper()).copied().collect();

    // keep |x - y| >= tube (slightly inflated so the jet stays defined)
    let keep_out = tube * (1.0 + 1e-6);
    let project = |z: &mut [f64]| {
        domain.clamp(z);
        let d = (0..dim).map(|i| (z[i] - z[dim + i]).powi(2)).sum::<f64>().sqrt();
        if d < keep_out {
            let mut u: Vec<f64> = (0..dim).map(|i| z[i] - z[dim + i]).collect();
            if d > 0.0 {
                u.iter_mut().for_each(|v| *v /= d);
            } else {
                u = (0..dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
            }
            for i in 0..dim {
                let mid = 0.5 * (z[i] + z[dim + i]);
                z[i] = mid + 0.5 * keep_out * u[i];
                z[dim + i] = mid - 0.5 * keep_out * u[i];
            }
            domain.clamp(z);
        }
    };

    let eval = |z: &[f64]| {
        let pts = split_points(z, dim);
        match cert.psi_jet(params, &pts[0], &pts[1]) {
            Ok(j) => (j.value, j.grad, j.hess),
            Err(_) => (0.0, DVector::zeros(2 * dim), DMatrix::zeros(2 * dim, 2 * dim)),
        }
    };
    let value_only = |z: &[f64]| {
        let pts = split_points(z, dim);
        cert.psi_value(params, &pts[0], &pts[1])
    };
    let run = |start: &[f64]| -> (LocalMax, bool) {
        let a = ascend(&eval, &value_only, &project, &lower, &upper, start, max_len, settings);
        (LocalMax { points: split_points(&a.z, dim), value: a.value, sign: 1 }, a.converged)
    };

    // seed pairs from a grid, scored with cached q values
    let grid = domain.grid(per_axis(settings.psi_seed_points, dim));
    let qv = par::map(settings.execution, &grid, |z| cert.q_value(z));
    let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(grid.len() * grid.len());
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let d = grid[i].dist(&grid[j]);
            if i != j && d >= keep_out {
                scored.push(((qv[i] - qv[j]) / (d.powf(params.p) + params.beta), i, j));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored.truncate(settings.psi_keep);
    let best_seed = scored.first().map(|s| (s.0, s.1, s.2));
    let mut starts: Vec<Vec<f64>> = scored
        .iter()
        .map(|&(_, i, j)| grid[i].as_slice().iter().chain(grid[j].as_slice()).copied().collect())
        .collect();

    let mut hinted: Vec<(f64, Vec<f64>)> = Vec::new();
    for a in &hints.maxima {
        for b in &hints.minima {
            if a.dist(b) >= keep_out {
                let z: Vec<f64> = a.as_slice().iter().chain(b.as_slice()).copied().collect();
                hinted.push((value_only(&z), z));
            }
        }
    }
    hinted.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.extend(hinted.into_iter().take(settings.hint_keep).map(|h| h.1));
    for (a, b) in &hints.pairs {
        starts.push(a.as_slice().iter().chain(b.as_slice()).copied().collect());
    }

    let mut results = par::map(settings.execution, &starts, |z| run(z));
    let mut n_starts = starts.len();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x9e37_79b9_7f4a_7c15);
    let sigma = settings.perturb_sigma * domain.diam();
    for _ in 0..settings.perturb_rounds {
        let current = dedupe(results.iter().map(|r| r.0.clone()).collect(), settings.dedupe_radius);
        let extra: Vec<Vec<f64>> =
            perturbed_starts(&current, settings.perturb_top, sigma, &mut rng).into_iter().map(|s| s.0).collect();
        n_starts += extra.len();
        results.extend(par::map(settings.execution, &extra, |z| run(z)));
    }

    let n_converged = results.iter().filter(|r| r.1).count();
    let local_maxima = dedupe(results.into_iter().map(|r| r.0).collect(), settings.dedupe_radius);
    let (argmax, value) = match local_maxima.first() {
        Some(best) if best.value > 0.0 => (best.points.clone(), best.value),
        _ => match best_seed {
            Some((_, i, j)) => (vec![grid[i], grid[j]], 0.0),
            None => (vec![grid[0], grid[grid.len() - 1]], 0.0),
        },
    };
    MaximizerReport { argmax, value, sign: 1, n_starts, n_converged, local_maxima }
}

#[cfg(test)]
mod tests {
    use super::super::test_ops::affine_certificate;
    use super::super::{build_certificate, QuadraticFidelity};
    use super::*;
    use crate::measures::DiscreteMeasure;
    use crate::operators::{GaussianSensorOperator, ObservationKind, ObservationVector};
    use approx::assert_relative_eq;

    fn p1(x: f64) -> Point {
        Point::new1(x)
    }

    #[test]
    fn zero_certificate() {
        let op = GaussianSensorOperator::new(0.045, vec![p1(1.0)]).unwrap();
        let fid = QuadraticFidelity::new(1.0, ObservationVector::zeros(ObservationKind::Sensor, 1)).unwrap();
        let cert = build_certificate(&op, &fid, &DiscreteMeasure::new());
        let dom = Domain::interval(0.0, 2.0).unwrap();
        let params = KrParams::new(0.9, 0.4, 1.0).unwrap();
        let s = MaximizerSettings::default();
        assert_eq!(maximize_abs_q(&cert, &dom, &s).value, 0.0);
        assert_eq!(maximize_psi(&cert, &params, &dom, &s).value, 0.0);
    }

    #[test]
    fn single_sensor_peak_is_found() {
        let op = GaussianSensorOperator::new(0.045, vec![p1(7.0)]).unwrap();
        let fid = QuadraticFidelity::new(1.0, ObservationVector { kind: ObservationKind::Sensor, values: vec![2.0] })
            .unwrap();
        let cert = build_certificate(&op, &fid, &DiscreteMeasure::new());
        let dom = Domain::interval(0.0, 20.0).unwrap();
        let r = maximize_abs_q(&cert, &dom, &MaximizerSettings::default());
        assert!((r.argmax[0][0] - 7.0).abs() <= 1e-6, "{:?}", r.argmax);
        assert_eq!(r.sign, 1);
        assert_relative_eq!(r.value, cert.q_value(&p1(7.0)), epsilon = 1e-12);
        let seed_best = dom.grid(256).iter().map(|z| cert.q_value(z).abs()).fold(0.0, f64::max);
        assert!(r.value >= seed_best);
    }

    #[test]
    fn affine_psi_maximum_sits_at_the_corner() {
        let (op, fid) = affine_certificate(1.0);
        let cert = build_certificate(&op, &fid, &DiscreteMeasure::new());
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let params = KrParams::new(0.9, 0.4, 1.0).unwrap();
        let r = maximize_psi(&cert, &params, &dom, &MaximizerSettings::default());
        assert_relative_eq!(r.value, 1.0 / 1.4, epsilon = 1e-12);
        assert_relative_eq!(r.argmax[0][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.argmax[1][0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reports_are_deterministic_across_execution_modes() {
        let op = GaussianSensorOperator::new(0.045, (0..10).map(|i| p1(i as f64 * 2.0 / 9.0 * 2.0)).collect()).unwrap();
        let values = vec![0.3, -1.0, 0.7, 0.2, 1.1, -0.4, 0.0, 0.9, -0.8, 0.5];
        let fid = QuadraticFidelity::new(3.0, ObservationVector { kind: ObservationKind::Sensor, values }).unwrap();
        let cert = build_certificate(&op, &fid, &DiscreteMeasure::new());
        let dom = Domain::interval(0.0, 4.0).unwrap();
        let params = KrParams::new(0.9, 0.4, 1.0).unwrap();
        let seq = MaximizerSettings { execution: Execution::Sequential, seed: 5, ..Default::default() };
        let par = MaximizerSettings { execution: Execution::Parallel, seed: 5, ..Default::default() };
        assert_eq!(maximize_abs_q(&cert, &dom, &seq), maximize_abs_q(&cert, &dom, &par));
        assert_eq!(maximize_psi(&cert, &params, &dom, &seq), maximize_psi(&cert, &params, &dom, &par));
    }
}
