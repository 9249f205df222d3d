//! Gauss-Newton weighted least squares restoration.
//!
//! Minimizes `J(x) = (z - h(x))' W (z - h(x))` with a diagonal weight matrix
//! `W` using the update `dx = (H' W H)^-1 H' W (z - h(x))`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::acpf::{eval_h, eval_jacobian, Layout, MeasurementKind, MeasurementSet, StateVector};
use crate::error::{Error, Result};
use crate::netmodel::Network;

/// Default positivity floor for weights.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Diagonal of the weighting matrix, one entry per measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight {i} must be positive and finite, got {}",
                w[i]
            )));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(m: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * c).collect())
    }

    pub(crate) fn from_raw(w: Vec<f64>) -> Self {
        WeightVector(w)
    }
}

#[derive(Debug, Clone)]
pub struct WlsOptions {
    /// Step max-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from the measured voltages instead of a flat profile.
    pub warm_start: bool,
    /// Keep every iterate in [`WlsResult::history`].
    pub record_history: bool,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tol: 1e-8,
            max_iter: 50,
            warm_start: false,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WlsResult {
    pub state: StateVector,
    /// `z - h(x)` at the returned state.
    pub residual: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Iterates `x^0, x^1, ...` with their objectives, when requested.
    pub history: Vec<(Vec<f64>, f64)>,
}

fn objective(residual: &[f64], w: &[f64]) -> f64 {
    residual.iter().zip(w).map(|(r, w)| w * r * r).sum()
}

/// `H' W H` and `H' W r`.
pub(crate) fn normal_equations(
    jac: &DMatrix<f64>,
    w: &[f64],
    residual: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let weighted = DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| w[i] * jac[(i, j)]);
    let normal = jac.transpose() * &weighted;
    let rhs = weighted.transpose() * DVector::from_column_slice(residual);
    (normal, rhs)
}

/// Dense symmetric solve: Cholesky, falling back to LU when the matrix is not
/// numerically positive definite, with an eigen check for singularity.
pub(crate) fn solve_normal(net: &Network, normal: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = normal.clone().cholesky() {
        let sol = ch.solve(rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let eig = SymmetricEigen::new(normal.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty normal matrix");
    if lmin.abs() <= 1e-13 * max.max(f64::MIN_POSITIVE) {
        let dir = eig.eigenvectors.column(imin);
        return Err(Error::Unobservable(describe_direction(net, dir.as_slice())));
    }
    normal
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Unobservable("LU factorization failed".into()))
}

fn describe_direction(net: &Network, dir: &[f64]) -> String {
    let n = net.n_buses();
    let slack = net.slack();
    let mut idx: Vec<usize> = (0..dir.len()).collect();
    idx.sort_by(|&a, &b| dir[b].abs().total_cmp(&dir[a].abs()));
    let names: Vec<String> = idx
        .iter()
        .take(3)
        .filter(|&&j| dir[j].abs() > 1e-3)
        .map(|&j| {
            if j < n {
                format!("vm[bus {}]", net.buses()[j].id)
            } else {
                let mut b = j - n;
                if b >= slack {
                    b += 1;
                }
                format!("va[bus {}]", net.buses()[b].id)
            }
        })
        .collect();
    names.join(", ")
}

fn initial_state(net: &Network, z: &MeasurementSet, warm: bool) -> Result<StateVector> {
    let mut x = StateVector::flat(net.n_buses(), net.slack());
    if warm {
        let mut va = vec![0.0; net.n_buses()];
        let mut vm = vec![1.0; net.n_buses()];
        for (kind, v) in z.iter() {
            match kind {
                MeasurementKind::Vm(b) if v > 0.0 => vm[b] = v,
                MeasurementKind::Va(b) => va[b] = v,
                _ => {}
            }
        }
        x = StateVector::new(vm, va, net.slack())?;
    }
    Ok(x)
}

/// Restores an AC-consistent state from measurements `z` under weights `w`.
///
/// A step that increases the objective more than tenfold is halved up to five
/// times. Non-convergence is reported through [`WlsResult::converged`].
pub fn wls_restore(
    net: &Network,
    z: &MeasurementSet,
    w: &WeightVector,
    opts: &WlsOptions,
) -> Result<WlsResult> {
    let x0 = initial_state(net, z, opts.warm_start)?;
    wls_restore_from(net, z, w, x0, opts)
}

pub fn wls_restore_from(
    net: &Network,
    z: &MeasurementSet,
    w: &WeightVector,
    x0: StateVector,
    opts: &WlsOptions,
) -> Result<WlsResult> {
    let layout: &Layout = z.layout();
    let m = layout.len();
    if w.len() != m {
        return Err(Error::Dimension {
            what: "weight vector",
            expected: m,
            got: w.len(),
        });
    }
    let n = x0.dim();
    if m < n {
        return Err(Error::Unobservable(format!("{m} measurements for {n} unknowns")));
    }
    let wv = w.as_slice();
    let zv = z.values();
    let residual_at = |x: &StateVector| -> Result<Vec<f64>> {
        let h = eval_h(net, x, layout)?;
        Ok(zv.iter().zip(&h).map(|(z, h)| z - h).collect())
    };

    let mut x = x0;
    let mut r = residual_at(&x)?;
    let mut obj = objective(&r, wv);
    let mut history = Vec::new();
    if opts.record_history {
        history.push((x.to_vec(), obj));
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let jac = eval_jacobian(net, &x, layout)?;
        let (normal, rhs) = normal_equations(&jac, wv, &r);
        let rhs = DMatrix::from_column_slice(n, 1, rhs.as_slice());
        let dx = solve_normal(net, &normal, &rhs)?;
        let dx = dx.as_slice();

        let mut scale = 1.0;
        let mut trial = x.clone();
        trial.apply_step(dx, scale);
        let mut trial_r = residual_at(&trial).ok();
        for _ in 0..5 {
            let bad = match &trial_r {
                Some(tr) => {
                    let t = objective(tr, wv);
                    !t.is_finite() || t > 10.0 * obj || trial.vm().iter().any(|&v| v <= 0.0)
                }
                None => true,
            };
            if !bad {
                break;
            }
            scale *= 0.5;
            trial = x.clone();
            trial.apply_step(dx, scale);
            trial_r = residual_at(&trial).ok();
        }
        let Some(tr) = trial_r else {
            break;
        };
        x = trial;
        r = tr;
        obj = objective(&r, wv);
        iterations += 1;
        if opts.record_history {
            history.push((x.to_vec(), obj));
        }
        let step = dx.iter().fold(0.0f64, |a, v| a.max((scale * v).abs()));
        if !step.is_finite() || !obj.is_finite() {
            break;
        }
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(WlsResult {
        state: x,
        residual: r,
        objective: obj,
        iterations,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn rejects_non_positive_weights() {
        assert!(WeightVector::new(vec![1.0, 0.0]).is_err());
        assert!(WeightVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let net = fixtures::case5();
        let layout = Layout::canonical(&net);
        let z = MeasurementSet::new(layout.clone(), vec![0.0; layout.len()]).unwrap();
        let w = WeightVector::uniform(3, 1.0).unwrap();
        assert!(matches!(
            wls_restore(&net, &z, &w, &WlsOptions::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unobservable_without_angle_information() {
        // nothing observes the angle of bus 1
        let net = fixtures::case5();
        let layout = Layout::families(&net, &[crate::acpf::Family::Vm, crate::acpf::Family::Va]);
        let kinds: Vec<_> = layout
            .iter()
            .copied()
            .filter(|k| !matches!(k, MeasurementKind::Va(0)))
            .collect();
        let layout = Layout::new(kinds, &net).unwrap();
        let z = MeasurementSet::new(layout.clone(), vec![1.0; layout.len()]).unwrap();
        let w = WeightVector::uniform(layout.len(), 1.0).unwrap();
        match wls_restore(&net, &z, &w, &WlsOptions::default()) {
            Err(Error::Unobservable(msg)) => assert!(msg.contains("va[bus 1]"), "{msg}"),
            other => panic!("expected unobservable, got {other:?}"),
        }
    }
}
