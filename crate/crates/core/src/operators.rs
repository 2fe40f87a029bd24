//! Gaussian heat-kernel forward operators and their adjoints.
//!
//! `K mu` samples `(4 pi T)^{-n/2} sum_k w_k exp(-|x - z_k|^2 / 4T)` at a set of
//! nodes: a finite sensor array, or the nodes of a trapezoid quadrature when the
//! observation space is `L^2(Omega)`. The adjoint maps an observation `y` to the
//! smooth function `z -> <y, K delta_z>_Y`, whose first and second derivatives
//! are available in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{as_measure, linspace, DiscreteMeasure, Domain, ExtremalAtom, KrParams, Point};

/// Kernel values below `exp(-CUTOFF_EXPONENT)` relative to the peak are treated as zero.
const CUTOFF_EXPONENT: f64 = 46.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Sensor,
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub kind: ObservationKind,
    pub values: Vec<f64>,
}

impl ObservationVector {
    pub fn zeros(kind: ObservationKind, len: usize) -> Self {
        ObservationVector { kind, values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axpy(&mut self, a: f64, x: &ObservationVector) {
        for (v, xv) in self.values.iter_mut().zip(&x.values) {
            *v += a * xv;
        }
    }
}

/// Value, gradient and Hessian of a scalar function of one point (dimension <= 2).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Jet {
    pub fn scaled(&self, c: f64) -> Jet {
        Jet {
            value: c * self.value,
            grad: [c * self.grad[0], c * self.grad[1]],
            hess: [[c * self.hess[0][0], c * self.hess[0][1]], [c * self.hess[1][0], c * self.hess[1][1]]],
        }
    }

    pub fn grad_vector(&self, dim: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.grad[..dim])
    }

    pub fn hess_matrix(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| self.hess[i][j])
    }
}

/// Contract every forward operator exposes to the solver.
pub trait ForwardOperator: Send + Sync {
    /// Spatial dimension of the domain.
    fn dim(&self) -> usize;
    fn kind(&self) -> ObservationKind;
    /// Length of observation vectors.
    fn obs_len(&self) -> usize;
    /// Inner product of the observation space `Y`.
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;
    /// Weights `w_m` with `<a, b>_Y = sum_m w_m a_m b_m`.
    fn inner_weights(&self) -> Vec<f64>;
    fn apply(&self, mu: &DiscreteMeasure) -> ObservationVector;
    /// `(K_* y)(z)` only.
    fn adjoint_at(&self, y: &[f64], z: &Point) -> f64;
    /// `(K_* y)(z)` with first and second derivatives in `z`.
    fn adjoint_jet(&self, y: &[f64], z: &Point) -> Jet;

    fn adjoint_value(&self, y: &ObservationVector, z: &Point) -> f64 {
        self.adjoint_at(&y.values, z)
    }

    fn adjoint_grad(&self, y: &ObservationVector, z: &Point) -> DVector<f64> {
        self.adjoint_jet(&y.values, z).grad_vector(self.dim())
    }

    fn adjoint_hess(&self, y: &ObservationVector, z: &Point) -> DMatrix<f64> {
        self.adjoint_jet(&y.values, z).hess_matrix(self.dim())
    }

    fn gram_column(&self, atom: &ExtremalAtom, params: &KrParams) -> Result<ObservationVector> {
        Ok(self.apply(&as_measure(atom, params)?))
    }

    fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }
}

#[derive(Debug, Clone)]
enum Nodes {
    Scattered(Vec<Point>),
    /// Tensor grid of uniformly spaced axes, row-major (last axis fastest).
    Grid {
        axes: Vec<Vec<f64>>,
        lower: Vec<f64>,
        step: Vec<f64>,
    },
}

/// Gaussian kernel sampled on a node set.
#[derive(Debug, Clone)]
struct HeatKernel {
    t: f64,
    dim: usize,
    norm: f64,
    inv_4t: f64,
    inv_2t: f64,
    radius: f64,
    nodes: Nodes,
}

impl HeatKernel {
    fn new(t: f64, dim: usize, nodes: Nodes) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::ConfigInvalid(format!("diffusion time must be > 0, got {t}")));
        }
        Ok(HeatKernel {
            t,
            dim,
            norm: (4.0 * std::f64::consts::PI * t).powf(-(dim as f64) / 2.0),
            inv_4t: 1.0 / (4.0 * t),
            inv_2t: 1.0 / (2.0 * t),
            radius: (4.0 * t * CUTOFF_EXPONENT).sqrt(),
            nodes,
        })
    }

    fn len(&self) -> usize {
        match &self.nodes {
            Nodes::Scattered(p) => p.len(),
            Nodes::Grid { axes, .. } => axes.iter().map(Vec::len).product(),
        }
    }

    fn node_points(&self) -> Vec<Point> {
        match &self.nodes {
            Nodes::Scattered(p) => p.clone(),
            Nodes::Grid { axes, .. } => {
                if axes.len() == 1 {
                    axes[0].iter().map(|&x| Point::new1(x)).collect()
                } else {
                    axes[0].iter().flat_map(|&x| axes[1].iter().map(move |&y| Point::new2(x, y))).collect()
                }
            }
        }
    }

    fn axis_range(&self, axis: usize, c: f64) -> std::ops::Range<usize> {
        let Nodes::Grid { axes, lower, step } = &self.nodes else { unreachable!() };
        let n = axes[axis].len();
        let lo = ((c - self.radius - lower[axis]) / step[axis]).ceil().max(0.0);
        let hi = ((c + self.radius - lower[axis]) / step[axis]).floor() + 1.0;
        let hi = hi.min(n as f64).max(0.0);
        if lo >= hi {
            0..0
        } else {
            lo as usize..hi as usize
        }
    }

    /// Calls `f(index, node - z, kernel value)` for every node in the kernel's support around `z`.
    #[inline]
    fn for_each_near(&self, z: &Point, mut f: impl FnMut(usize, [f64; 2], f64)) {
        let r2 = self.radius * self.radius;
        match &self.nodes {
            Nodes::Scattered(points) => {
                for (m, x) in points.iter().enumerate() {
                    let d = [x[0] - z[0], if self.dim == 2 { x[1] - z[1] } else { 0.0 }];
                    let d2 = d[0] * d[0] + d[1] * d[1];
                    if d2 <= r2 {
                        f(m, d, self.norm * (-d2 * self.inv_4t).exp());
                    }
                }
            }
            Nodes::Grid { axes, .. } => {
                if self.dim == 1 {
                    for m in self.axis_range(0, z[0]) {
                        let d = axes[0][m] - z[0];
                        let d2 = d * d;
                        if d2 <= r2 {
                            f(m, [d, 0.0], self.norm * (-d2 * self.inv_4t).exp());
                        }
                    }
                } else {
                    let ny = axes[1].len();
                    let ry = self.axis_range(1, z[1]);
                    for i in self.axis_range(0, z[0]) {
                        let dx = axes[0][i] - z[0];
                        for j in ry.clone() {
                            let dy = axes[1][j] - z[1];
                            let d2 = dx * dx + dy * dy;
                            if d2 <= r2 {
                                f(i * ny + j, [dx, dy], self.norm * (-d2 * self.inv_4t).exp());
                            }
                        }
                    }
                }
            }
        }
    }

    fn apply_into(&self, mu: &DiscreteMeasure, out: &mut [f64]) {
        for a in &mu.atoms {
            self.for_each_near(&a.x, |m, _, g| out[m] += a.w * g);
        }
    }

    fn value(&self, coeffs: &[f64], weights: Option<&[f64]>, z: &Point) -> f64 {
        let mut v = 0.0;
        self.for_each_near(z, |m, _, g| {
            let c = coeffs[m] * weights.map_or(1.0, |w| w[m]);
            v += c * g;
        });
        v
    }

    fn jet(&self, coeffs: &[f64], weights: Option<&[f64]>, z: &Point) -> Jet {
        // d/dz G(x, z) = G (x - z) / 2T;  d2/dz2 G = G ((x - z)(x - z)^T / 4T^2 - I / 2T)
        let mut jet = Jet::default();
        let (i2t, i2t2) = (self.inv_2t, self.inv_2t * self.inv_2t);
        self.for_each_near(z, |m, d, g| {
            let c = coeffs[m] * weights.map_or(1.0, |w| w[m]) * g;
            jet.value += c;
            jet.grad[0] += c * d[0] * i2t;
            jet.grad[1] += c * d[1] * i2t;
            jet.hess[0][0] += c * (d[0] * d[0] * i2t2 - i2t);
            jet.hess[0][1] += c * d[0] * d[1] * i2t2;
            jet.hess[1][1] += c * (d[1] * d[1] * i2t2 - i2t);
        });
        if self.dim == 1 {
            jet.grad[1] = 0.0;
            jet.hess[1][1] = 0.0;
        }
        jet.hess[1][0] = jet.hess[0][1];
        jet
    }
}

/// Heat kernel observed at finitely many sensors; `Y = R^m` with the Euclidean product.
#[derive(Debug, Clone)]
pub struct GaussianSensorOperator {
    kernel: HeatKernel,
}

impl GaussianSensorOperator {
    pub fn new(t: f64, sensors: Vec<Point>) -> Result<Self> {
        let dim = sensors.first().map(Point::dim).ok_or_else(|| Error::ConfigInvalid("no sensors".into()))?;
        if sensors.iter().any(|s| s.dim() != dim || !s.is_finite()) {
            return Err(Error::ConfigInvalid("sensors must share one dimension and be finite".into()));
        }
        Ok(GaussianSensorOperator { kernel: HeatKernel::new(t, dim, Nodes::Scattered(sensors))? })
    }

    /// `count` sensors evenly spaced over the domain with both endpoints included.
    /// In two dimensions `count` must be a perfect square.
    pub fn even(domain: &Domain, t: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::ConfigInvalid("sensor count must be positive".into()));
        }
        let sensors = if domain.dim() == 1 {
            linspace(domain.lower()[0], domain.upper()[0], count).into_iter().map(Point::new1).collect()
        } else {
            let side = (count as f64).sqrt().round() as usize;
            if side * side != count {
                return Err(Error::ConfigInvalid(format!(
                    "an even 2-d sensor layout needs a square count, got {count}"
                )));
            }
            domain.grid(side)
        };
        GaussianSensorOperator::new(t, sensors)
    }

    pub fn t(&self) -> f64 {
        self.kernel.t
    }

    pub fn sensors(&self) -> Vec<Point> {
        self.kernel.node_points()
    }
}

impl ForwardOperator for GaussianSensorOperator {
    fn dim(&self) -> usize {
        self.kernel.dim
    }

    fn kind(&self) -> ObservationKind {
        ObservationKind::Sensor
    }

    fn obs_len(&self) -> usize {
        self.kernel.len()
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn inner_weights(&self) -> Vec<f64> {
        vec![1.0; self.obs_len()]
    }

    fn apply(&self, mu: &DiscreteMeasure) -> ObservationVector {
        let mut out = ObservationVector::zeros(ObservationKind::Sensor, self.obs_len());
        self.kernel.apply_into(mu, &mut out.values);
        out
    }

    fn adjoint_at(&self, y: &[f64], z: &Point) -> f64 {
        self.kernel.value(y, None, z)
    }

    fn adjoint_jet(&self, y: &[f64], z: &Point) -> Jet {
        self.kernel.jet(y, None, z)
    }
}

/// Heat kernel observed on all of `Omega`, discretized by the composite
/// trapezoid rule on a uniform tensor grid; `Y = L^2(Omega)`.
#[derive(Debug, Clone)]
pub struct GaussianFieldOperator {
    kernel: HeatKernel,
    weights: Vec<f64>,
}

impl GaussianFieldOperator {
    /// `nodes_per_axis` quadrature nodes along each axis of `domain`.
    pub fn new(domain: &Domain, t: f64, nodes_per_axis: usize) -> Result<Self> {
        if nodes_per_axis < 2 {
            return Err(Error::ConfigInvalid(format!("quadrature needs >= 2 nodes, got {nodes_per_axis}")));
        }
        let dim = domain.dim();
        let axes: Vec<Vec<f64>> =
            (0..dim).map(|i| linspace(domain.lower()[i], domain.upper()[i], nodes_per_axis)).collect();
        let step: Vec<f64> =
            (0..dim).map(|i| (domain.upper()[i] - domain.lower()[i]) / (nodes_per_axis - 1) as f64).collect();
        let axis_weights: Vec<Vec<f64>> = step
            .iter()
            .map(|&h| {
                (0..nodes_per_axis).map(|k| if k == 0 || k == nodes_per_axis - 1 { 0.5 * h } else { h }).collect()
            })
            .collect();
        let weights = if dim == 1 {
            axis_weights[0].clone()
        } else {
            axis_weights[0].iter().flat_map(|wx| axis_weights[1].iter().map(move |wy| wx * wy)).collect()
        };
        let nodes = Nodes::Grid { axes, lower: domain.lower().to_vec(), step };
        Ok(GaussianFieldOperator { kernel: HeatKernel::new(t, dim, nodes)?, weights })
    }

    pub fn t(&self) -> f64 {
        self.kernel.t
    }

    pub fn nodes(&self) -> Vec<Point> {
        self.kernel.node_points()
    }

    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }
}

impl ForwardOperator for GaussianFieldOperator {
    fn dim(&self) -> usize {
        self.kernel.dim
    }

    fn kind(&self) -> ObservationKind {
        ObservationKind::Field
    }

    fn obs_len(&self) -> usize {
        self.weights.len()
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum()
    }

    fn inner_weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn apply(&self, mu: &DiscreteMeasure) -> ObservationVector {
        let mut out = ObservationVector::zeros(ObservationKind::Field, self.obs_len());
        self.kernel.apply_into(mu, &mut out.values);
        out
    }

    fn adjoint_at(&self, y: &[f64], z: &Point) -> f64 {
        self.kernel.value(y, Some(&self.weights), z)
    }

    fn adjoint_jet(&self, y: &[f64], z: &Point) -> Jet {
        self.kernel.jet(y, Some(&self.weights), z)
    }
}

/// Either shipped operator, for code that picks one at run time.
#[derive(Debug, Clone)]
pub enum AnyOperator {
    Sensors(GaussianSensorOperator),
    Field(GaussianFieldOperator),
}

macro_rules! delegate {
    ($self:ident, $op:ident => $e:expr) => {
        match $self {
            AnyOperator::Sensors($op) => $e,
            AnyOperator::Field($op) => $e,
        }
    };
}

impl ForwardOperator for AnyOperator {
    fn dim(&self) -> usize {
        delegate!(self, o => o.dim())
    }
    fn kind(&self) -> ObservationKind {
        delegate!(self, o => o.kind())
    }
    fn obs_len(&self) -> usize {
        delegate!(self, o => o.obs_len())
    }
    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        delegate!(self, o => o.inner(a, b))
    }
    fn inner_weights(&self) -> Vec<f64> {
        delegate!(self, o => o.inner_weights())
    }
    fn apply(&self, mu: &DiscreteMeasure) -> ObservationVector {
        delegate!(self, o => o.apply(mu))
    }
    fn adjoint_at(&self, y: &[f64], z: &Point) -> f64 {
        delegate!(self, o => o.adjoint_at(y, z))
    }
    fn adjoint_jet(&self, y: &[f64], z: &Point) -> Jet {
        delegate!(self, o => o.adjoint_jet(y, z))
    }
}

/// JSON description of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorConfig {
    GaussSensors {
        #[serde(rename = "T")]
        t: f64,
        sensors: SensorLayout,
    },
    GaussField {
        #[serde(rename = "T")]
        t: f64,
        grid: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorLayout {
    Even { count: usize, layout: EvenLayout },
    Points { points: Vec<Point> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvenLayout {
    Even,
}

impl OperatorConfig {
    pub fn build(&self, domain: &Domain) -> Result<AnyOperator> {
        match self {
            OperatorConfig::GaussSensors { t, sensors } => {
                let op = match sensors {
                    SensorLayout::Even { count, .. } => GaussianSensorOperator::even(domain, *t, *count)?,
                    SensorLayout::Points { points } => {
                        if let Some(p) = points.iter().find(|p| !domain.contains(p)) {
                            return Err(Error::ConfigInvalid(format!("sensor {p:?} lies outside the domain")));
                        }
                        GaussianSensorOperator::new(*t, points.clone())?
                    }
                };
                Ok(AnyOperator::Sensors(op))
            }
            OperatorConfig::GaussField { t, grid } => {
                Ok(AnyOperator::Field(GaussianFieldOperator::new(domain, *t, *grid)?))
            }
        }
    }

    pub fn kind(&self) -> ObservationKind {
        match self {
            OperatorConfig::GaussSensors { .. } => ObservationKind::Sensor,
            OperatorConfig::GaussField { .. } => ObservationKind::Field,
        }
    }
}
