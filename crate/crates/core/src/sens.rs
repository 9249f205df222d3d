//! Sensitivity of the restored state to the diagonal weights.
//!
//! At a converged restoration `x_R` the first-order condition
//! `H(x)' W (z - h(x)) = 0` holds. Differentiating it with respect to `w_i`
//! gives
//!
//! ```text
//! G dx/dw_i = H_i' r_i,    G = H' W H - sum_k w_k r_k d2h_k/dx2
//! ```
//!
//! with `r = z - h(x_R)`. Dropping the curvature sum (holding `H` fixed)
//! turns this into the one-step form: for `Y = (H' W H)^-1 H' W r`,
//!
//! ```text
//! d vec(Y) / d vec(W) = (r - H (H' W H)^-1 H' W r) (x) ((H' W H)^-1 H')'
//! ```
//!
//! an `n x m^2` matrix whose `m` diagonal-weight columns are
//! `A[:, i] * rho_i` with `A = (H' W H)^-1 H'` and `rho = r - H A W r`.

use nalgebra::DMatrix;

use serde::{Deserialize, Serialize};

use crate::acpf::{eval_h, eval_jacobian, weighted_hessian, MeasurementSet, StateVector};
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::wls::{solve_normal, WeightVector};

/// `d x_R / d w_i`, one column per measurement.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix(DMatrix<f64>);

impl SensitivityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    /// Column `i` (sensitivity to weight `i`).
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.0.column(i).iter().copied().collect()
    }

    /// `S' v`, the chain rule for a loss gradient `v = dF/dx`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.0.nrows());
        (0..self.0.ncols())
            .map(|i| self.0.column(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Which linearization of the restoration map to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Implicit differentiation of the converged fixed point, including the
    /// residual curvature of `h`.
    #[default]
    FixedPoint,
    /// One Gauss-Newton update with `H` held constant.
    FrozenJacobian,
}

/// Sensitivity of a converged restoration `x_r` to the weights `w`.
pub fn solution_sensitivity(
    net: &Network,
    z: &MeasurementSet,
    w: &WeightVector,
    x_r: &StateVector,
) -> Result<SensitivityMatrix> {
    solution_sensitivity_with(net, z, w, x_r, SensitivityMode::default())
}

pub fn solution_sensitivity_with(
    net: &Network,
    z: &MeasurementSet,
    w: &WeightVector,
    x_r: &StateVector,
    mode: SensitivityMode,
) -> Result<SensitivityMatrix> {
    let layout = z.layout();
    let m = layout.len();
    if w.len() != m {
        return Err(Error::Dimension {
            what: "weight vector",
            expected: m,
            got: w.len(),
        });
    }
    let wv = w.as_slice();
    let h = eval_h(net, x_r, layout)?;
    let r: Vec<f64> = z.values().iter().zip(&h).map(|(z, h)| z - h).collect();
    let jac = eval_jacobian(net, x_r, layout)?;
    let n = jac.ncols();

    let weighted = DMatrix::from_fn(m, n, |i, j| wv[i] * jac[(i, j)]);
    let normal = jac.transpose() * &weighted;
    let s = match mode {
        SensitivityMode::FixedPoint => {
            let wr: Vec<f64> = wv.iter().zip(&r).map(|(w, r)| w * r).collect();
            let g = normal - weighted_hessian(net, x_r, layout, &wr)?;
            let x = solve_normal(net, &g, &jac.transpose())?;
            DMatrix::from_fn(n, m, |j, i| x[(j, i)] * r[i])
        }
        SensitivityMode::FrozenJacobian => {
            // A = (H' W H)^-1 H'
            let a = solve_normal(net, &normal, &jac.transpose())?;
            let wr = DMatrix::from_fn(m, 1, |i, _| wv[i] * r[i]);
            let projected = &jac * (&a * wr);
            let rho: Vec<f64> = (0..m).map(|i| r[i] - projected[(i, 0)]).collect();
            DMatrix::from_fn(n, m, |j, i| a[(j, i)] * rho[i])
        }
    };
    Ok(SensitivityMatrix(s))
}
