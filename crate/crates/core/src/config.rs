//! Experiment configuration and problem assembly.
//!
//! The solver works in the shifted variable `mu = mu_tilde - mu_r`, so the
//! fidelity target is `y - K mu_r`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agcg::SolverConfig;
use crate::certificate::{MaximizerSettings, QuadraticFidelity};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Domain, KrParams};
use crate::operators::{AnyOperator, ForwardOperator, ObservationKind, ObservationVector, OperatorConfig};
use crate::par::Execution;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub domain: Domain,
    pub operator: OperatorConfig,
    pub kr: KrParams,
    pub gamma: f64,
    #[serde(default)]
    pub reference: DiscreteMeasure,
    pub data: DataSpec,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// How the measurements `y` are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// `y = K mu_dagger`.
    ForwardOf { measure: MeasureSpec },
    /// `y` given verbatim, one entry per sensor or quadrature node.
    Vector { values: Vec<f64> },
    /// Closed-form function of the first coordinate sampled at the observation points.
    Function {
        name: FunctionName,
        #[serde(default)]
        amplitude: Option<f64>,
        #[serde(default)]
        frequency: Option<f64>,
        #[serde(default)]
        offset: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    /// One Dirac of the given weight at every sensor.
    AtSensors {
        at_sensors: f64,
    },
    Atoms(DiscreteMeasure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionName {
    /// `amplitude * sin(frequency * x) + offset`.
    Sine,
}

/// Solver settings without the KR parameters, which live at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub maximizer: MaximizerSettings,
    pub subproblem_tol: f64,
    pub subproblem_max_iter: usize,
    pub prune_threshold: f64,
    pub coalesce_radius: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            epsilon: d.epsilon,
            max_outer_iterations: d.max_outer_iterations,
            maximizer: d.maximizer,
            subproblem_tol: d.subproblem_tol,
            subproblem_max_iter: d.subproblem_max_iter,
            prune_threshold: d.prune_threshold,
            coalesce_radius: d.coalesce_radius,
            seed: d.seed,
            execution: d.execution,
        }
    }
}

impl SolverSection {
    pub fn with_kr(&self, kr: KrParams) -> SolverConfig {
        SolverConfig {
            kr,
            epsilon: self.epsilon,
            max_outer_iterations: self.max_outer_iterations,
            maximizer: self.maximizer.clone(),
            subproblem_tol: self.subproblem_tol,
            subproblem_max_iter: self.subproblem_max_iter,
            prune_threshold: self.prune_threshold,
            coalesce_radius: self.coalesce_radius,
            seed: self.seed,
            execution: self.execution,
        }
    }
}

/// Everything needed to run the solver on one experiment.
#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: Domain,
    pub operator: AnyOperator,
    /// Measurements `y`.
    pub data: ObservationVector,
    pub reference: DiscreteMeasure,
    pub fidelity: QuadraticFidelity,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::ConfigInvalid(format!("version: expected {CONFIG_VERSION}, got {}", self.version)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::ConfigInvalid(format!("gamma: must be > 0, got {}", self.gamma)));
        }
        self.reference.check_in(&self.domain).map_err(|e| Error::ConfigInvalid(format!("reference: {e}")))?;
        if let DataSpec::ForwardOf { measure: MeasureSpec::Atoms(m) } = &self.data {
            m.check_in(&self.domain).map_err(|e| Error::ConfigInvalid(format!("data.measure: {e}")))?;
        }
        if matches!(self.data, DataSpec::ForwardOf { measure: MeasureSpec::AtSensors { .. } })
            && self.operator.kind() != ObservationKind::Sensor
        {
            return Err(Error::ConfigInvalid("data.measure: at_sensors requires a sensor operator".into()));
        }
        self.solver.with_kr(self.kr).validate().map_err(|e| Error::ConfigInvalid(format!("solver: {e}")))?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Observation points of an operator: sensors or quadrature nodes.
pub fn observation_points(op: &AnyOperator) -> Vec<crate::measures::Point> {
    match op {
        AnyOperator::Sensors(s) => s.sensors(),
        AnyOperator::Field(f) => f.nodes(),
    }
}

pub fn build_problem(config: &ExperimentConfig) -> Result<Problem> {
    config.validate()?;
    let operator = config.operator.build(&config.domain).map_err(|e| Error::ConfigInvalid(format!("operator: {e}")))?;
    let points = observation_points(&operator);
    let data = match &config.data {
        DataSpec::ForwardOf { measure } => {
            let mu = match measure {
                MeasureSpec::AtSensors { at_sensors } => {
                    DiscreteMeasure::from_atoms(points.iter().map(|p| (*p, *at_sensors)))
                }
                MeasureSpec::Atoms(m) => m.clone(),
            };
            operator.apply(&mu)
        }
        DataSpec::Vector { values } => {
            if values.len() != operator.obs_len() {
                return Err(Error::ConfigInvalid(format!(
                    "data.values: operator has {} observations, got {}",
                    operator.obs_len(),
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::ConfigInvalid("data.values: entries must be finite".into()));
            }
            ObservationVector { kind: operator.kind(), values: values.clone() }
        }
        DataSpec::Function { name: FunctionName::Sine, amplitude, frequency, offset } => {
            let (a, f, c) = (amplitude.unwrap_or(1.0), frequency.unwrap_or(1.0), offset.unwrap_or(0.0));
            ObservationVector {
                kind: operator.kind(),
                values: points.iter().map(|p| a * (f * p[0]).sin() + c).collect(),
            }
        }
    };
    let mut target = data.clone();
    target.axpy(-1.0, &operator.apply(&config.reference));
    let fidelity = QuadraticFidelity::new(config.gamma, target)?;
    Ok(Problem {
        domain: config.domain.clone(),
        operator,
        data,
        reference: config.reference.clone(),
        fidelity,
        solver: config.solver.with_kr(config.kr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Point;

    fn exp1() -> &'static str {
        include_str!("../configs/exp1.json")
    }

    fn exp2() -> &'static str {
        include_str!("../configs/exp2.json")
    }

    #[test]
    fn shipped_experiment_one() {
        let cfg = ExperimentConfig::from_json(exp1()).unwrap();
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.operator.obs_len(), 30);
        match &cfg.operator {
            OperatorConfig::GaussSensors { t, .. } => assert_eq!(*t, 0.045),
            other => panic!("{other:?}"),
        }
        assert_eq!((cfg.kr.alpha, cfg.kr.beta, cfg.kr.p), (0.9, 0.4, 1.0));
        assert_eq!(cfg.gamma, 60.0);
        assert_eq!(cfg.solver.epsilon, 1e-10);
        assert_eq!(cfg.reference, DiscreteMeasure::from_atoms([(Point::new1(7.0), 2.8), (Point::new1(13.0), 2.8)]));
        // y = sum of kernels centred at the sensors
        let sensors = observation_points(&p.operator);
        let mu = DiscreteMeasure::from_atoms(sensors.iter().map(|s| (*s, 1.0)));
        assert_eq!(p.data, p.operator.apply(&mu));
    }

    #[test]
    fn shipped_experiment_two() {
        let cfg = ExperimentConfig::from_json(exp2()).unwrap();
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.operator.kind(), ObservationKind::Field);
        assert_eq!((cfg.kr.alpha, cfg.kr.beta, cfg.gamma), (0.8, 0.3, 4.0));
        assert_eq!(cfg.solver.epsilon, 1e-6);
        assert_eq!(cfg.reference, DiscreteMeasure::from_atoms([(Point::new1(8.0), 1.5), (Point::new1(12.0), 1.5)]));
        let nodes = observation_points(&p.operator);
        for (z, y) in nodes.iter().zip(&p.data.values).step_by(97) {
            assert!((y - ((std::f64::consts::PI * z[0] / 4.0).sin() + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_vector_is_rejected() {
        let mut cfg = ExperimentConfig::from_json(exp2()).unwrap();
        cfg.data = DataSpec::Vector { values: vec![1.0; 30] };
        assert!(matches!(build_problem(&cfg), Err(Error::ConfigInvalid(_))));
        cfg.data = DataSpec::ForwardOf { measure: MeasureSpec::AtSensors { at_sensors: 1.0 } };
        assert!(matches!(build_problem(&cfg), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn round_trip_and_field_errors() {
        let cfg = ExperimentConfig::from_json(exp1()).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json_pretty().unwrap()).unwrap();
        assert_eq!(cfg, again);

        let mut bad = cfg.clone();
        bad.reference = DiscreteMeasure::from_atoms([(Point::new1(25.0), 1.0)]);
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("reference"), "{msg}");
        let mut bad = cfg;
        bad.version = 7;
        assert!(bad.validate().unwrap_err().to_string().contains("version"));
    }
}
