//! Run a configured experiment and write its artifacts:
//! `history.csv`, `result.json`, `q.csv`, `psi.csv` and `reports.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agcg::{run, ActiveSet, IterateRecord, SolveResult, Termination};
use crate::certificate::{build_certificate, DualCertificate, QuadraticFidelity};
use crate::config::{build_problem, ExperimentConfig, Problem};
use crate::diagnostics::{
    check_first_order, check_linear_assumptions, fit_tail_rate, sublinear_constants, AssumptionReport,
    OptimalityReport, TailFit,
};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Domain, ExtremalAtom, KrParams};
use crate::operators::ForwardOperator;

pub const HISTORY_HEADER: &str = "k,surrogate,max_abs_q_over_alpha,max_psi,N_k,inserted_kind,r_hat,time_s";

/// Samples per axis for `q.csv` (1D, 2D) and per side for `psi.csv`.
const Q_SAMPLES_1D: usize = 2001;
const Q_SAMPLES_2D: usize = 201;
const PSI_SAMPLES: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtom {
    #[serde(flatten)]
    pub atom: ExtremalAtom,
    pub lambda: f64,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub termination: Termination,
    pub iterations: usize,
    pub seed: u64,
    pub final_surrogate: f64,
    pub atoms: Vec<WeightedAtom>,
    /// The solution `mu` in the shifted variable.
    pub measure: DiscreteMeasure,
    pub reference: DiscreteMeasure,
    pub config: ExperimentConfig,
}

impl ResultFile {
    pub fn active_set(&self) -> ActiveSet {
        ActiveSet {
            atoms: self.atoms.iter().map(|a| a.atom).collect(),
            lambdas: self.atoms.iter().map(|a| a.lambda).collect(),
        }
    }

    /// A [`SolveResult`] without history, enough for the diagnostics.
    pub fn solve_result(&self) -> SolveResult {
        SolveResult {
            active_set: self.active_set(),
            measure: self.measure.clone(),
            history: Vec::new(),
            termination: self.termination,
            iterations: self.iterations,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ResultFile = serde_json::from_str(&text)?;
        file.config.validate()?;
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearCheck {
    /// `max_k (k + 1) r_hat_k`.
    pub constant: f64,
    /// The same maximum over the first ten records.
    pub head_constant: f64,
}

/// Contents of `reports.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    pub optimality: OptimalityReport,
    pub assumptions: AssumptionReport,
    pub tail_fit: Option<TailFit>,
    pub sublinear: SublinearCheck,
    /// `|K(mu + mu_r) - y|_Y / |y|_Y`.
    pub relative_misfit: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` of the config.
    pub out_dir: Option<PathBuf>,
    /// Write `time_s = 0` so that reruns produce byte-identical histories.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub result: SolveResult,
    pub reports: Reports,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn success(&self) -> bool {
        self.result.termination == Termination::Converged && self.reports.optimality.pass
    }

    pub fn summary(&self) -> String {
        let last = self.result.history.last();
        format!(
            "termination={} iterations={} atoms={} surrogate={:.12e} max|q|/alpha={:.12} maxPsi={:.12} first_order={} out={}",
            self.result.termination.as_str(),
            self.result.iterations,
            self.result.active_set.len(),
            last.map_or(f64::NAN, |r| r.surrogate),
            self.reports.optimality.max_abs_q_over_alpha,
            self.reports.optimality.max_psi,
            if self.reports.optimality.pass { "pass" } else { "fail" },
            self.out_dir.display(),
        )
    }
}

/// Tolerance of the first-order report relative to the solver's epsilon.
pub fn report_tolerance(epsilon: f64) -> f64 {
    10.0 * epsilon
}

pub fn build_reports(problem: &Problem, result: &SolveResult) -> Result<Reports> {
    let kr = &problem.solver.kr;
    let settings = problem.solver.maximizer_for(usize::MAX / 2);
    let tol = report_tolerance(problem.solver.epsilon);
    let optimality =
        check_first_order(result, &problem.operator, &problem.fidelity, kr, &problem.domain, &settings, tol)?;
    let assumptions =
        check_linear_assumptions(result, &problem.operator, &problem.fidelity, kr, &problem.domain, &settings)?;
    let (constant, head_constant) = sublinear_constants(&result.history, 10);
    let full = result.measure.plus(&problem.reference);
    let mut misfit = problem.operator.apply(&full);
    misfit.axpy(-1.0, &problem.data);
    let y_norm = problem.operator.norm_sq(&problem.data.values).sqrt();
    let relative_misfit = problem.operator.norm_sq(&misfit.values).sqrt() / y_norm.max(f64::MIN_POSITIVE);
    Ok(Reports {
        optimality,
        assumptions,
        tail_fit: fit_tail_rate(&result.history).ok(),
        sublinear: SublinearCheck { constant, head_constant },
        relative_misfit,
    })
}

pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutcome> {
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::ConfigInvalid("output_dir: not set and no --out given".into()))?;
    let problem = build_problem(config)?;
    fs::create_dir_all(&out_dir)?;

    let result = run(&problem.solver, &problem.operator, &problem.fidelity, &problem.domain, ActiveSet::new())?;
    let reports = build_reports(&problem, &result)?;

    fs::write(out_dir.join("history.csv"), history_csv(&result.history, options.deterministic))?;
    let file = ResultFile {
        termination: result.termination,
        iterations: result.iterations,
        seed: problem.solver.seed,
        final_surrogate: result.history.last().map_or(0.0, |r| r.surrogate),
        atoms: result
            .active_set
            .atoms
            .iter()
            .zip(&result.active_set.lambdas)
            .map(|(a, l)| WeightedAtom { atom: *a, lambda: *l })
            .collect(),
        measure: result.measure.clone(),
        reference: problem.reference.clone(),
        config: config.clone(),
    };
    fs::write(out_dir.join("result.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    write_certificate_grids(&problem, &result.measure, &out_dir)?;
    fs::write(out_dir.join("reports.json"), serde_json::to_string_pretty(&reports)? + "\n")?;

    Ok(ExperimentOutcome { result, reports, out_dir })
}

pub fn history_csv(history: &[IterateRecord], deterministic: bool) -> String {
    let mut s = String::with_capacity(96 * (history.len() + 1));
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let kind = match r.inserted_kind {
            Some(k) => serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            None => "none".to_owned(),
        };
        let t = if deterministic { 0.0 } else { r.time_s };
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{},{},{:e},{:.6}",
            r.k, r.surrogate, r.max_abs_q_over_alpha, r.max_psi, r.n_atoms, kind, r.r_hat, t
        );
    }
    s
}

/// `q.csv` (columns `z,q_over_alpha`, or `x1,x2,q_over_alpha` in 2D) and, in
/// 1D, `psi.csv` (columns `x,y,psi`).
pub fn write_certificate_grids(problem: &Problem, measure: &DiscreteMeasure, out_dir: &Path) -> Result<()> {
    let cert = build_certificate(&problem.operator, &problem.fidelity, measure);
    let (q, psi) = certificate_grids(&cert, &problem.solver.kr, &problem.domain);
    fs::write(out_dir.join("q.csv"), q)?;
    if let Some(psi) = psi {
        fs::write(out_dir.join("psi.csv"), psi)?;
    }
    Ok(())
}

pub fn certificate_grids<O: ForwardOperator + ?Sized>(
    cert: &DualCertificate<'_, O>,
    params: &KrParams,
    domain: &Domain,
) -> (String, Option<String>) {
    let mut q = String::new();
    if domain.dim() == 1 {
        q.push_str("z,q_over_alpha\n");
        for z in domain.grid(Q_SAMPLES_1D) {
            let _ = writeln!(q, "{},{:e}", z[0], cert.q_value(&z) / params.alpha);
        }
        let pts = domain.grid(PSI_SAMPLES);
        let mut psi = String::from("x,y,psi\n");
        for x in &pts {
            for y in &pts {
                let _ = writeln!(psi, "{},{},{:e}", x[0], y[0], cert.psi_value(params, x, y));
            }
        }
        (q, Some(psi))
    } else {
        q.push_str("x1,x2,q_over_alpha\n");
        for z in domain.grid(Q_SAMPLES_2D) {
            let _ = writeln!(q, "{},{},{:e}", z[0], z[1], cert.q_value(&z) / params.alpha);
        }
        (q, None)
    }
}

/// Rebuild the problem behind a `result.json` and rerun the diagnostics.
pub fn check_result(file: &ResultFile) -> Result<(Problem, Reports)> {
    let problem = build_problem(&file.config)?;
    let reports = build_reports(&problem, &file.solve_result())?;
    Ok((problem, reports))
}

/// Evaluate the certificate of a stored result on grids and write the CSVs.
pub fn certify_result(file: &ResultFile, out_dir: &Path) -> Result<()> {
    let problem = build_problem(&file.config)?;
    fs::create_dir_all(out_dir)?;
    write_certificate_grids(&problem, &file.measure, out_dir)
}

/// KR norm of a measure read from a JSON atom list, as JSON.
pub fn kr_norm_json(measure_json: &str, params: &KrParams) -> Result<String> {
    let mu: DiscreteMeasure = serde_json::from_str(measure_json)?;
    let (value, witness) = crate::kr_oracle::kr_norm(&mu, params)?;
    #[derive(Serialize)]
    struct Out<'a> {
        value: f64,
        witness: &'a crate::kr_oracle::KrWitness,
    }
    Ok(serde_json::to_string_pretty(&Out { value, witness: &witness })?)
}

/// Fidelity value of a measure in the shifted variable.
pub fn fidelity_of(problem: &Problem, mu: &DiscreteMeasure) -> f64 {
    fidelity_value(&problem.operator, &problem.fidelity, mu)
}

fn fidelity_value<O: ForwardOperator + ?Sized>(op: &O, fid: &QuadraticFidelity, mu: &DiscreteMeasure) -> f64 {
    fid.value(op, &op.apply(mu).values)
}
