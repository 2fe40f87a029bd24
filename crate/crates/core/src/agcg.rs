//! Accelerated generalized conditional gradient loop over the extremal atoms of
//! the KR unit ball.
//!
//! Each outer iteration builds the certificate of the current iterate, inserts
//! the extremal atom that maximizes the linearized objective, re-optimizes all
//! conic coefficients and prunes atoms whose weight dropped to zero.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{
    maximize_abs_q_with_seeds, maximize_psi_with_hints, DualCertificate, MaximizerReport, MaximizerSettings, PsiHints,
    QuadraticFidelity,
};
use crate::error::{Error, Result};
use crate::measures::{as_measure, coalesce, AtomKind, DiscreteMeasure, Domain, ExtremalAtom, KrParams, Point};
use crate::operators::ForwardOperator;
use crate::par::{self, Execution};
use crate::subproblem::{solve_coefficients, CoefficientProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kr: KrParams,
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub maximizer: MaximizerSettings,
    /// Relative subproblem tolerance; the absolute one is `tol * (1 + |phi(0)|)`.
    pub subproblem_tol: f64,
    pub subproblem_max_iter: usize,
    pub prune_threshold: f64,
    /// Insertion coalescing radius relative to `diam(Omega)`.
    pub coalesce_radius: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kr: KrParams { alpha: 1.0, beta: 0.5, p: 1.0 },
            epsilon: 1e-8,
            max_outer_iterations: 1000,
            maximizer: MaximizerSettings::default(),
            subproblem_tol: 1e-12,
            subproblem_max_iter: 20_000,
            prune_threshold: 1e-12,
            coalesce_radius: 1e-7,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.kr.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(Error::ConfigInvalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.subproblem_tol > 0.0) {
            return Err(Error::ConfigInvalid("subproblem_tol must be > 0".into()));
        }
        if !(self.prune_threshold >= 0.0 && self.coalesce_radius >= 0.0) {
            return Err(Error::ConfigInvalid("prune_threshold and coalesce_radius must be >= 0".into()));
        }
        Ok(())
    }

    /// Maximizer settings for outer iteration `k`: the RNG stream is derived
    /// from the run seed and `k`, and execution follows the solver.
    pub fn maximizer_for(&self, k: usize) -> MaximizerSettings {
        MaximizerSettings {
            seed: self.seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            execution: self.execution,
            ..self.maximizer.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub atoms: Vec<ExtremalAtom>,
    pub lambdas: Vec<f64>,
}

impl ActiveSet {
    pub fn new() -> Self {
        ActiveSet::default()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn gauge_value(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// `sum_j lambda_j * as_measure(atom_j)`, with coincident locations merged.
    pub fn measure(&self, params: &KrParams) -> Result<DiscreteMeasure> {
        let mut mu = DiscreteMeasure::new();
        for (a, l) in self.atoms.iter().zip(&self.lambdas) {
            mu = mu.plus(&as_measure(a, params)?.scaled(*l));
        }
        Ok(coalesce(&mu, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    /// `F(K mu_k) + sum lambda`.
    pub surrogate: f64,
    pub max_abs_q_over_alpha: f64,
    pub max_psi: f64,
    pub n_atoms: usize,
    pub inserted_kind: Option<AtomKind>,
    /// `surrogate_k - surrogate_final`, filled after the run.
    pub r_hat: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub active_set: ActiveSet,
    pub measure: DiscreteMeasure,
    pub history: Vec<IterateRecord>,
    pub termination: Termination,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Insertion {
    pub atom: Option<ExtremalAtom>,
    pub max_abs_q: f64,
    pub max_psi: f64,
    pub q_report: MaximizerReport,
    pub psi_report: MaximizerReport,
}

/// `max(max|q| / alpha, max Psi) <= 1 + epsilon`.
pub fn stopping_check(max_abs_q: f64, max_psi: f64, params: &KrParams, epsilon: f64) -> bool {
    (max_abs_q / params.alpha).max(max_psi) <= 1.0 + epsilon
}

/// Choose the atom to insert from the two global maxima; `None` when the
/// stopping criterion holds. Ties go to the Dirac.
pub fn choose_atom(
    q_report: &MaximizerReport,
    psi_report: &MaximizerReport,
    params: &KrParams,
    epsilon: f64,
) -> Result<Option<ExtremalAtom>> {
    if stopping_check(q_report.value, psi_report.value, params, epsilon) {
        return Ok(None);
    }
    if q_report.value / params.alpha >= psi_report.value {
        return Ok(Some(ExtremalAtom::dirac(q_report.sign, q_report.argmax[0])));
    }
    let (x, y) = (psi_report.argmax[0], psi_report.argmax[1]);
    let atom = ExtremalAtom::dipole(x, y);
    if atom.validate(params).is_err() {
        return Err(Error::ExtremalityViolation { x: x.as_slice().to_vec(), y: y.as_slice().to_vec() });
    }
    Ok(Some(atom))
}

/// Global maxima of `|q|` and `Psi_q`, warm-started from the atoms of `warm`.
pub fn search_maxima<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
    warm: &ActiveSet,
) -> (MaximizerReport, MaximizerReport) {
    let mut q_seeds: Vec<Point> = Vec::new();
    let mut hints = PsiHints::default();
    for a in &warm.atoms {
        match *a {
            ExtremalAtom::Dirac { z, .. } => q_seeds.push(z),
            ExtremalAtom::Dipole { x, y } => {
                q_seeds.push(x);
                q_seeds.push(y);
                hints.pairs.push((x, y));
            }
        }
    }
    let q_report = maximize_abs_q_with_seeds(cert, domain, settings, &q_seeds);
    let from_q = PsiHints::from_report(&q_report);
    hints.maxima = from_q.maxima;
    hints.minima = from_q.minima;
    let psi_report = maximize_psi_with_hints(cert, params, domain, settings, &hints);
    (q_report, psi_report)
}

/// Global search over both atom families followed by [`choose_atom`].
pub fn insert_candidate<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    params: &KrParams,
    domain: &Domain,
    settings: &MaximizerSettings,
    epsilon: f64,
    warm: &ActiveSet,
) -> Result<Insertion> {
    let (q_report, psi_report) = search_maxima(cert, params, domain, settings, warm);
    let atom = choose_atom(&q_report, &psi_report, params, epsilon)?;
    Ok(Insertion { atom, max_abs_q: q_report.value, max_psi: psi_report.value, q_report, psi_report })
}

/// Outcome of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Converged,
}

pub struct Solver<'a, O: ForwardOperator + ?Sized> {
    op: &'a O,
    fidelity: &'a QuadraticFidelity,
    domain: Domain,
    config: SolverConfig,
    active: ActiveSet,
    // K mu_j for every active atom
    columns: Vec<Vec<f64>>,
    k: usize,
    history: Vec<IterateRecord>,
    started: Instant,
    target_norm_sq: f64,
    last_insertion: Option<Insertion>,
}

impl<'a, O: ForwardOperator + ?Sized> Solver<'a, O> {
    pub fn new(
        op: &'a O,
        fidelity: &'a QuadraticFidelity,
        domain: Domain,
        config: SolverConfig,
        initial: ActiveSet,
    ) -> Result<Self> {
        config.validate()?;
        if fidelity.target.len() != op.obs_len() {
            return Err(Error::DimensionMismatch { expected: op.obs_len(), got: fidelity.target.len() });
        }
        if initial.atoms.len() != initial.lambdas.len() {
            return Err(Error::DimensionMismatch { expected: initial.atoms.len(), got: initial.lambdas.len() });
        }
        for (a, l) in initial.atoms.iter().zip(&initial.lambdas) {
            a.validate(&config.kr)?;
            a.check_in(&domain)?;
            if !(*l >= 0.0) {
                return Err(Error::InvalidAtom(format!("negative coefficient {l}")));
            }
        }
        let columns = par::map(config.execution, &initial.atoms, |a| op.gram_column(a, &config.kr).map(|c| c.values))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let target_norm_sq = op.norm_sq(&fidelity.target.values);
        Ok(Solver {
            op,
            fidelity,
            domain,
            config,
            active: initial,
            columns,
            k: 0,
            history: Vec::new(),
            started: Instant::now(),
            target_norm_sq,
            last_insertion: None,
        })
    }

    pub fn active_set(&self) -> &ActiveSet {
        &self.active
    }

    pub fn history(&self) -> &[IterateRecord] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// The maxima computed in the most recent step.
    pub fn last_insertion(&self) -> Option<&Insertion> {
        self.last_insertion.as_ref()
    }

    /// `K mu` of the current iterate.
    pub fn observation(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.op.obs_len()];
        for (c, l) in self.columns.iter().zip(&self.active.lambdas) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += l * v;
            }
        }
        out
    }

    pub fn surrogate(&self) -> f64 {
        self.fidelity.value(self.op, &self.observation()) + self.active.gauge_value()
    }

    fn problem(&self, columns: &[Vec<f64>]) -> Result<CoefficientProblem> {
        let n = columns.len();
        let op = self.op;
        let rows: Vec<Vec<f64>> =
            par::map_range(self.config.execution, n, |i| (0..=i).map(|j| op.inner(&columns[i], &columns[j])).collect());
        let gram = DMatrix::from_fn(n, n, |i, j| if j <= i { rows[i][j] } else { rows[j][i] });
        let linear = DVector::from_fn(n, |i, _| op.inner(&columns[i], &self.fidelity.target.values));
        CoefficientProblem::new(gram, linear, self.fidelity.gamma, self.target_norm_sq)
    }

    fn resolve(&self, columns: &[Vec<f64>], init: &[f64]) -> Result<Vec<f64>> {
        let problem = self.problem(columns)?;
        let phi0 = 0.5 * self.fidelity.gamma * self.target_norm_sq;
        // d_j phi = 1 - <q, mu_j>, so the KKT tolerance must sit below epsilon
        let tol = (self.config.subproblem_tol * (1.0 + phi0.abs())).min(0.1 * self.config.epsilon);
        let sol = solve_coefficients(&problem, init, tol, self.config.subproblem_max_iter)?;
        Ok(sol.lambda)
    }

    fn search(&self, settings: &MaximizerSettings) -> Result<Insertion> {
        let cert = DualCertificate::from_observation(self.op, self.fidelity, &self.observation());
        insert_candidate(&cert, &self.config.kr, &self.domain, settings, self.config.epsilon, &self.active)
    }

    fn record(&mut self, ins: &Insertion) {
        self.history.push(IterateRecord {
            k: self.k,
            surrogate: self.surrogate(),
            max_abs_q_over_alpha: ins.max_abs_q / self.config.kr.alpha,
            max_psi: ins.max_psi,
            n_atoms: self.active.len(),
            inserted_kind: ins.atom.map(|a| a.kind()),
            r_hat: 0.0,
            time_s: self.started.elapsed().as_secs_f64(),
        });
    }

    /// One outer iteration: certificate, insertion, coefficient solve, pruning.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let settings = self.config.maximizer_for(self.k);
        let ins = match self.search(&settings) {
            Err(Error::ExtremalityViolation { .. }) => self.search(&settings.widened(4))?,
            other => other?,
        };
        self.record(&ins);
        let Some(atom) = ins.atom else {
            self.last_insertion = Some(ins);
            return Ok(StepOutcome::Converged);
        };
        atom.check_in(&self.domain)?;
        let before = self.history.last().map(|r| r.surrogate).unwrap_or(f64::INFINITY);

        let radius = self.config.coalesce_radius * self.domain.diam();
        let merged = self.active.atoms.iter().any(|a| a.distance_to(&atom).is_some_and(|d| d <= radius));

        let mut next = None;
        if merged {
            let lambda = self.resolve(&self.columns, &self.active.lambdas)?;
            if self.surrogate_of(&self.columns, &lambda) < before {
                next = Some((self.active.atoms.clone(), self.columns.clone(), lambda));
            }
        }
        let (atoms, columns, lambda) = match next {
            Some(n) => n,
            None => {
                // new atom enters with weight zero, so the warm start is feasible
                let mut atoms = self.active.atoms.clone();
                let mut columns = self.columns.clone();
                atoms.push(atom);
                columns.push(self.op.gram_column(&atom, &self.config.kr)?.values);
                let mut init = self.active.lambdas.clone();
                init.push(0.0);
                let lambda = self.resolve(&columns, &init)?;
                (atoms, columns, lambda)
            }
        };

        let keep: Vec<usize> = (0..atoms.len()).filter(|&j| lambda[j] > self.config.prune_threshold).collect();
        self.active = ActiveSet {
            atoms: keep.iter().map(|&j| atoms[j]).collect(),
            lambdas: keep.iter().map(|&j| lambda[j]).collect(),
        };
        self.columns = keep.into_iter().map(|j| columns[j].clone()).collect();
        self.last_insertion = Some(ins);
        self.k += 1;
        Ok(StepOutcome::Continue)
    }

    fn surrogate_of(&self, columns: &[Vec<f64>], lambda: &[f64]) -> f64 {
        let mut obs = vec![0.0; self.op.obs_len()];
        for (c, l) in columns.iter().zip(lambda) {
            for (o, v) in obs.iter_mut().zip(c) {
                *o += l * v;
            }
        }
        self.fidelity.value(self.op, &obs) + lambda.iter().sum::<f64>()
    }

    /// Iterate until the stopping criterion or the iteration cap.
    pub fn run(mut self) -> Result<SolveResult> {
        let termination = loop {
            if self.k >= self.config.max_outer_iterations {
                // certify the last iterate so the final record is complete
                let settings = self.config.maximizer_for(self.k);
                let ins = self.search(&settings).or_else(|_| self.search(&settings.widened(4)))?;
                let converged = ins.atom.is_none();
                self.record(&ins);
                break if converged { Termination::Converged } else { Termination::MaxIter };
            }
            if self.step()? == StepOutcome::Converged {
                break Termination::Converged;
            }
        };
        let final_value = self.history.last().map(|r| r.surrogate).unwrap_or(0.0);
        for r in &mut self.history {
            r.r_hat = (r.surrogate - final_value).max(0.0);
        }
        let measure = self.active.measure(&self.config.kr)?;
        Ok(SolveResult { measure, active_set: self.active, history: self.history, termination, iterations: self.k })
    }
}

/// Run the solver from `initial`.
pub fn run<O: ForwardOperator + ?Sized>(
    config: &SolverConfig,
    op: &O,
    fidelity: &QuadraticFidelity,
    domain: &Domain,
    initial: ActiveSet,
) -> Result<SolveResult> {
    Solver::new(op, fidelity, domain.clone(), config.clone(), initial)?.run()
}
