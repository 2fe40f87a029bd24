//! Dual certificate `q = -K_* grad F(K mu)` for the quadratic fidelity, the
//! transport quotient `Psi_q(x, y) = (q(x) - q(y)) / (|x - y|^p + beta)`, their
//! derivatives, and multi-start global maximization of `|q|` and `Psi_q`.

mod search;

pub use search::{
    maximize_abs_q, maximize_abs_q_with_seeds, maximize_psi, maximize_psi_with_hints, LocalMax, MaximizerReport,
    MaximizerSettings, PsiHints,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, KrParams, Point};
use crate::operators::{ForwardOperator, Jet, ObservationVector};

/// `F(v) = gamma / 2 * ||v - target||_Y^2`, with `target = y - K mu_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFidelity {
    pub gamma: f64,
    pub target: ObservationVector,
}

impl QuadraticFidelity {
    pub fn new(gamma: f64, target: ObservationVector) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(QuadraticFidelity { gamma, target })
    }

    pub fn value<O: ForwardOperator + ?Sized>(&self, op: &O, observed: &[f64]) -> f64 {
        let r: Vec<f64> = observed.iter().zip(&self.target.values).map(|(a, b)| a - b).collect();
        0.5 * self.gamma * op.norm_sq(&r)
    }
}

/// Default half-width of the excluded band around `x = y`, relative to `diam(Omega)`.
pub const DIAG_TUBE_REL: f64 = 1e-8;

#[derive(Debug)]
pub struct DualCertificate<'a, O: ForwardOperator + ?Sized> {
    op: &'a O,
    gamma: f64,
    residual: ObservationVector,
    // -gamma * residual, so that q = K_* coeffs
    coeffs: Vec<f64>,
    diag_tube: f64,
}

impl<O: ForwardOperator + ?Sized> Clone for DualCertificate<'_, O> {
    fn clone(&self) -> Self {
        DualCertificate {
            op: self.op,
            gamma: self.gamma,
            residual: self.residual.clone(),
            coeffs: self.coeffs.clone(),
            diag_tube: self.diag_tube,
        }
    }
}

/// `Psi_q` with derivatives in the stacked variable `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiJet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub fn build_certificate<'a, O: ForwardOperator + ?Sized>(
    op: &'a O,
    fidelity: &QuadraticFidelity,
    mu: &DiscreteMeasure,
) -> DualCertificate<'a, O> {
    DualCertificate::from_observation(op, fidelity, &op.apply(mu).values)
}

impl<'a, O: ForwardOperator + ?Sized> DualCertificate<'a, O> {
    /// Certificate for an iterate whose observation `K mu` is already known.
    pub fn from_observation(op: &'a O, fidelity: &QuadraticFidelity, observed: &[f64]) -> Self {
        let values: Vec<f64> = observed.iter().zip(&fidelity.target.values).map(|(a, b)| a - b).collect();
        let coeffs = values.iter().map(|r| -fidelity.gamma * r).collect();
        DualCertificate {
            op,
            gamma: fidelity.gamma,
            residual: ObservationVector { kind: op.kind(), values },
            coeffs,
            diag_tube: DIAG_TUBE_REL,
        }
    }

    pub fn with_diag_tube(mut self, tube: f64) -> Self {
        self.diag_tube = tube;
        self
    }

    pub fn diag_tube(&self) -> f64 {
        self.diag_tube
    }

    pub fn operator(&self) -> &'a O {
        self.op
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `K mu - target`.
    pub fn residual(&self) -> &ObservationVector {
        &self.residual
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    #[inline]
    pub fn q_value(&self, z: &Point) -> f64 {
        self.op.adjoint_at(&self.coeffs, z)
    }

    #[inline]
    pub fn q_jet(&self, z: &Point) -> Jet {
        self.op.adjoint_jet(&self.coeffs, z)
    }

    pub fn q_grad(&self, z: &Point) -> DVector<f64> {
        self.q_jet(z).grad_vector(self.dim())
    }

    pub fn q_hess(&self, z: &Point) -> DMatrix<f64> {
        self.q_jet(z).hess_matrix(self.dim())
    }

    /// `Psi_q(x, y)`; zero on the diagonal.
    pub fn psi_value(&self, params: &KrParams, x: &Point, y: &Point) -> f64 {
        let d = x.dist(y);
        if d == 0.0 {
            return 0.0;
        }
        (self.q_value(x) - self.q_value(y)) / (d.powf(params.p) + params.beta)
    }

    pub fn psi_jet(&self, params: &KrParams, x: &Point, y: &Point) -> Result<PsiJet> {
        let n = self.dim();
        let d = x.dist(y);
        if d < self.diag_tube {
            return Err(Error::DiagonalSingularity(d));
        }
        let (jx, jy) = (self.q_jet(x), self.q_jet(y));
        let p = params.p;
        let denom = d.powf(p) + params.beta;
        let num = jx.value - jy.value;

        // derivatives of h(u) = |u|^p at u = x - y
        let u: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        let dh: Vec<f64> = u.iter().map(|ui| p * d.powf(p - 2.0) * ui).collect();
        let hh = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { p * d.powf(p - 2.0) } else { 0.0 };
            diag + p * (p - 2.0) * d.powf(p - 4.0) * u[i] * u[j]
        });

        let m = 2 * n;
        let mut g_num = DVector::zeros(m);
        let mut g_den = DVector::zeros(m);
        let mut h_num = DMatrix::zeros(m, m);
        let mut h_den = DMatrix::zeros(m, m);
        for i in 0..n {
            g_num[i] = jx.grad[i];
            g_num[n + i] = -jy.grad[i];
            g_den[i] = dh[i];
            g_den[n + i] = -dh[i];
            for j in 0..n {
                h_num[(i, j)] = jx.hess[i][j];
                h_num[(n + i, n + j)] = -jy.hess[i][j];
                h_den[(i, j)] = hh[(i, j)];
                h_den[(n + i, n + j)] = hh[(i, j)];
                h_den[(i, n + j)] = -hh[(i, j)];
                h_den[(n + i, j)] = -hh[(i, j)];
            }
        }
        let value = num / denom;
        let grad = &g_num / denom - &g_den * (num / (denom * denom));
        let cross = &g_num * g_den.transpose() + &g_den * g_num.transpose();
        let hess = &h_num / denom - cross / (denom * denom) + &g_den * g_den.transpose() * (2.0 * num / denom.powi(3))
            - &h_den * (num / (denom * denom));
        Ok(PsiJet { value, grad, hess })
    }

    pub fn psi_grad(&self, params: &KrParams, x: &Point, y: &Point) -> Result<DVector<f64>> {
        Ok(self.psi_jet(params, x, y)?.grad)
    }

    pub fn psi_hess(&self, params: &KrParams, x: &Point, y: &Point) -> Result<DMatrix<f64>> {
        Ok(self.psi_jet(params, x, y)?.hess)
    }
}

#[cfg(test)]
pub(crate) mod test_ops {
    use super::*;
    use crate::operators::ObservationKind;

    /// `K mu = sum_k w_k z_k` (first moment); its adjoint is `y -> (z -> y z)`,
    /// which lets tests build certificates with an affine `q`.
    pub struct MomentOp;

    impl ForwardOperator for MomentOp {
        fn dim(&self) -> usize {
            1
        }
        fn kind(&self) -> ObservationKind {
            ObservationKind::Sensor
        }
        fn obs_len(&self) -> usize {
            1
        }
        fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
            a[0] * b[0]
        }
        fn inner_weights(&self) -> Vec<f64> {
            vec![1.0]
        }
        fn apply(&self, mu: &DiscreteMeasure) -> ObservationVector {
            ObservationVector {
                kind: ObservationKind::Sensor,
                values: vec![mu.atoms.iter().map(|a| a.w * a.x[0]).sum()],
            }
        }
        fn adjoint_at(&self, y: &[f64], z: &Point) -> f64 {
            y[0] * z[0]
        }
        fn adjoint_jet(&self, y: &[f64], z: &Point) -> Jet {
            Jet { value: y[0] * z[0], grad: [y[0], 0.0], hess: [[0.0; 2]; 2] }
        }
    }

    /// Certificate with `q(z) = slope * z`.
    pub fn affine_certificate(slope: f64) -> (MomentOp, QuadraticFidelity) {
        let fid = QuadraticFidelity::new(1.0, ObservationVector { kind: ObservationKind::Sensor, values: vec![slope] })
            .unwrap();
        (MomentOp, fid)
    }
}
