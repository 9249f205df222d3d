//! Conventional Newton-Raphson power flow.

use nalgebra::{DMatrix, DVector};

use super::measurement::MeasurementKind;
use super::model::{eval_h, eval_jacobian};
use super::state::StateVector;
use crate::error::{Error, Result};
use crate::netmodel::{BusType, Network};

/// Quantities held fixed at one bus. `p`/`q` are net injections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusSpec {
    Slack { vm: f64 },
    Pv { p: f64, vm: f64 },
    Pq { p: f64, q: f64 },
}

/// Per-bus power flow specification; the slack angle is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSpec(pub Vec<BusSpec>);

impl PfSpec {
    /// Generator buses regulate to their setpoint and inject the given
    /// per-generator active dispatch; other buses draw their demand. The
    /// slack entry of `p_gen` is ignored.
    pub fn from_dispatch(net: &Network, p_gen: &[f64]) -> Result<Self> {
        if p_gen.len() != net.generators().len() {
            return Err(Error::Dimension {
                what: "generator dispatch",
                expected: net.generators().len(),
                got: p_gen.len(),
            });
        }
        let specs = net
            .buses()
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                let gens = net.generators_at(b);
                if gens.is_empty() {
                    return BusSpec::Pq {
                        p: -bus.p_load,
                        q: -bus.q_load,
                    };
                }
                let vm = net.generators()[gens[0]].v_setpoint;
                if b == net.slack() {
                    BusSpec::Slack { vm }
                } else {
                    let p = gens.iter().map(|&g| p_gen[g]).sum::<f64>() - bus.p_load;
                    BusSpec::Pv { p, vm }
                }
            })
            .collect();
        Ok(PfSpec(specs))
    }

    /// Specification that is exactly satisfied by `x`, using the network's
    /// bus types.
    pub fn from_state(net: &Network, x: &StateVector) -> Result<Self> {
        let n = net.n_buses();
        let kinds: Vec<MeasurementKind> = (0..n)
            .map(MeasurementKind::Pinj)
            .chain((0..n).map(MeasurementKind::Qinj))
            .collect();
        let h = eval_h(net, x, &kinds)?;
        let specs = net
            .buses()
            .iter()
            .enumerate()
            .map(|(b, bus)| match bus.kind {
                BusType::Slack => BusSpec::Slack { vm: x.vm()[b] },
                BusType::Pv => BusSpec::Pv {
                    p: h[b],
                    vm: x.vm()[b],
                },
                BusType::Pq => BusSpec::Pq { p: h[b], q: h[n + b] },
            })
            .collect();
        Ok(PfSpec(specs))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    /// Max-norm mismatch tolerance in per-unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PfResult {
    pub state: StateVector,
    /// Number of Newton updates applied.
    pub iterations: usize,
    pub mismatch: f64,
}

/// Full Newton power flow with the analytic Jacobian.
pub fn newton_pf(net: &Network, spec: &PfSpec, x0: &StateVector, opts: &PfOptions) -> Result<PfResult> {
    let n = net.n_buses();
    if spec.0.len() != n {
        return Err(Error::Dimension {
            what: "power flow specification",
            expected: n,
            got: spec.0.len(),
        });
    }
    if x0.n_buses() != n || x0.slack() != net.slack() {
        return Err(Error::Dimension {
            what: "initial state buses",
            expected: n,
            got: x0.n_buses(),
        });
    }

    let mut x = x0.clone();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut cols = Vec::new();
    for (b, s) in spec.0.iter().enumerate() {
        match *s {
            BusSpec::Slack { vm } => {
                if b != net.slack() {
                    return Err(Error::InvalidArgument(format!(
                        "slack specification at non-slack bus position {b}"
                    )));
                }
                x.set_vm(b, vm);
            }
            BusSpec::Pv { p, vm } => {
                x.set_vm(b, vm);
                rows.push(MeasurementKind::Pinj(b));
                targets.push(p);
            }
            BusSpec::Pq { p, .. } => {
                rows.push(MeasurementKind::Pinj(b));
                targets.push(p);
            }
        }
    }
    for (b, s) in spec.0.iter().enumerate() {
        if let BusSpec::Pq { q, .. } = *s {
            rows.push(MeasurementKind::Qinj(b));
            targets.push(q);
        }
    }
    // unknowns: angles of non-slack buses, then magnitudes of PQ buses
    for b in 0..n {
        if let Some(c) = x.va_col(b) {
            cols.push(c);
        }
    }
    for (b, s) in spec.0.iter().enumerate() {
        if matches!(s, BusSpec::Pq { .. }) {
            cols.push(x.vm_col(b));
        }
    }
    if matches!(spec.0[net.slack()], BusSpec::Pv { .. } | BusSpec::Pq { .. }) {
        return Err(Error::InvalidArgument(
            "slack bus must carry a slack specification".into(),
        ));
    }

    let mut iterations = 0;
    loop {
        let h = eval_h(net, &x, &rows)?;
        let mismatch: Vec<f64> = targets.iter().zip(&h).map(|(t, v)| t - v).collect();
        let worst = mismatch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: worst,
            });
        }
        if worst < opts.tol {
            return Ok(PfResult {
                state: x,
                iterations,
                mismatch: worst,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: worst,
            });
        }
        let full = eval_jacobian(net, &x, &rows)?;
        let jac = DMatrix::from_fn(rows.len(), cols.len(), |i, j| full[(i, cols[j])]);
        let dx = jac
            .lu()
            .solve(&DVector::from_vec(mismatch))
            .ok_or(Error::SingularJacobian)?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        let mut step = vec![0.0; x.dim()];
        for (j, &c) in cols.iter().enumerate() {
            step[c] = dx[j];
        }
        x.apply_step(&step, 1.0);
        if x.vm().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonConvergence {
                iterations: iterations + 1,
                mismatch: worst,
            });
        }
        iterations += 1;
    }
}
