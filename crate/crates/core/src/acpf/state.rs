use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voltage state in polar coordinates.
///
/// Magnitudes are kept for every bus and angles for every bus with the slack
/// entry pinned at zero; the estimator unknowns are all magnitudes followed by
/// the non-slack angles in bus order, so `dim() == 2 * n_buses - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    vm: Vec<f64>,
    va: Vec<f64>,
    slack: usize,
}

impl StateVector {
    /// Builds a state from full per-bus magnitudes and angles; angles are
    /// re-referenced so the slack angle becomes zero.
    pub fn new(vm: Vec<f64>, mut va: Vec<f64>, slack: usize) -> Result<Self> {
        if vm.len() != va.len() {
            return Err(Error::Dimension {
                what: "angle vector",
                expected: vm.len(),
                got: va.len(),
            });
        }
        if slack >= vm.len() {
            return Err(Error::InvalidArgument(format!(
                "slack index {slack} out of range for {} buses",
                vm.len()
            )));
        }
        if let Some(b) = vm.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voltage magnitude at bus position {b} is not positive ({})",
                vm[b]
            )));
        }
        let reference = va[slack];
        for a in &mut va {
            *a -= reference;
        }
        va[slack] = 0.0;
        Ok(StateVector { vm, va, slack })
    }

    /// All magnitudes 1.0, all angles 0.
    pub fn flat(n_buses: usize, slack: usize) -> Self {
        StateVector {
            vm: vec![1.0; n_buses],
            va: vec![0.0; n_buses],
            slack,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.vm.len()
    }

    /// Number of estimator unknowns.
    pub fn dim(&self) -> usize {
        2 * self.vm.len() - 1
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn vm(&self) -> &[f64] {
        &self.vm
    }

    /// Per-bus angles, slack entry zero.
    pub fn va(&self) -> &[f64] {
        &self.va
    }

    /// Column of the magnitude of bus `b` in the flat ordering.
    pub fn vm_col(&self, b: usize) -> usize {
        b
    }

    /// Column of the angle of bus `b`, `None` for the slack.
    pub fn va_col(&self, b: usize) -> Option<usize> {
        va_column(self.vm.len(), self.slack, b)
    }

    /// Flat unknown vector: magnitudes then non-slack angles.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.vm);
        out.extend(
            self.va
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != self.slack)
                .map(|(_, &a)| a),
        );
        out
    }

    /// Inverse of [`StateVector::to_vec`].
    pub fn from_vec(x: &[f64], n_buses: usize, slack: usize) -> Result<Self> {
        if x.len() != 2 * n_buses - 1 {
            return Err(Error::Dimension {
                what: "state vector",
                expected: 2 * n_buses - 1,
                got: x.len(),
            });
        }
        let vm = x[..n_buses].to_vec();
        let mut va = Vec::with_capacity(n_buses);
        let mut it = x[n_buses..].iter();
        for b in 0..n_buses {
            va.push(if b == slack { 0.0 } else { *it.next().unwrap() });
        }
        Ok(StateVector { vm, va, slack })
    }

    /// Adds `dx` (flat ordering) in place. Magnitudes are not clamped.
    pub(crate) fn apply_step(&mut self, dx: &[f64], scale: f64) {
        let n = self.vm.len();
        for (v, d) in self.vm.iter_mut().zip(&dx[..n]) {
            *v += scale * d;
        }
        let mut it = dx[n..].iter();
        for (b, a) in self.va.iter_mut().enumerate() {
            if b != self.slack {
                *a += scale * it.next().unwrap();
            }
        }
    }

    pub(crate) fn set_vm(&mut self, b: usize, v: f64) {
        self.vm[b] = v;
    }

    /// Max-norm distance between two states of the same network.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.vm
            .iter()
            .zip(&other.vm)
            .chain(self.va.iter().zip(&other.va))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn va_column(n_buses: usize, slack: usize, b: usize) -> Option<usize> {
    match b.cmp(&slack) {
        std::cmp::Ordering::Less => Some(n_buses + b),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(n_buses + b - 1),
    }
}
