use serde::{Deserialize, Serialize};

use super::measurement::{MeasurementKind, MeasurementSet};
use super::model::{branch_flows, injections, BranchFlow};
use super::newton::{newton_pf, BusSpec, PfOptions, PfSpec};
use super::state::StateVector;
use crate::error::{Error, Result};
use crate::netmodel::Network;

/// An AC-consistent operating point: every injection and flow is an exact
/// evaluation of the state.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub state: StateVector,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub flows: Vec<BranchFlow>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
}

fn split(total: f64, caps: &[f64]) -> Vec<f64> {
    let sum: f64 = caps.iter().sum();
    if sum > 0.0 && caps.iter().all(|&c| c >= 0.0) {
        caps.iter().map(|c| total * c / sum).collect()
    } else {
        vec![total / caps.len() as f64; caps.len()]
    }
}

impl OperatingPoint {
    /// Evaluates flows and injections at `state` and splits each bus's
    /// generation across its generators in proportion to their maximum
    /// outputs.
    pub fn from_state(net: &Network, state: StateVector) -> Self {
        let flows = branch_flows(net, &state);
        let (p_inj, q_inj) = injections(net, &state, &flows);
        let n_gen = net.generators().len();
        let mut p_gen = vec![0.0; n_gen];
        let mut q_gen = vec![0.0; n_gen];
        for (b, bus) in net.buses().iter().enumerate() {
            let gens = net.generators_at(b);
            if gens.is_empty() {
                continue;
            }
            let pmax: Vec<f64> = gens.iter().map(|&g| net.generators()[g].p_max).collect();
            let qmax: Vec<f64> = gens.iter().map(|&g| net.generators()[g].q_max).collect();
            let ps = split(p_inj[b] + bus.p_load, &pmax);
            let qs = split(q_inj[b] + bus.q_load, &qmax);
            for (i, &g) in gens.iter().enumerate() {
                p_gen[g] = ps[i];
                q_gen[g] = qs[i];
            }
        }
        OperatingPoint {
            state,
            p_inj,
            q_inj,
            flows,
            p_gen,
            q_gen,
        }
    }
}

/// Restoration by fixing generator-bus voltage magnitudes and non-slack
/// generator active injections from `z`, then solving a power flow. Demand at
/// the remaining buses comes from `net`.
pub fn benchmark_restore(net: &Network, z: &MeasurementSet) -> Result<OperatingPoint> {
    benchmark_restore_with(net, z, &PfOptions::default())
}

pub fn benchmark_restore_with(net: &Network, z: &MeasurementSet, opts: &PfOptions) -> Result<OperatingPoint> {
    let missing = |what: &str, b: usize| {
        Error::MissingMeasurement(format!("{what} at generator bus {}", net.buses()[b].id))
    };
    let specs = net
        .buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            if !net.is_generator_bus(b) {
                return Ok(BusSpec::Pq {
                    p: -bus.p_load,
                    q: -bus.q_load,
                });
            }
            let vm = z
                .get(MeasurementKind::Vm(b))
                .ok_or_else(|| missing("voltage magnitude", b))?;
            if b == net.slack() {
                return Ok(BusSpec::Slack { vm });
            }
            let p = z
                .get(MeasurementKind::Pinj(b))
                .ok_or_else(|| missing("active injection", b))?;
            Ok(BusSpec::Pv { p, vm })
        })
        .collect::<Result<Vec<_>>>()?;
    let x0 = StateVector::flat(net.n_buses(), net.slack());
    let pf = newton_pf(net, &PfSpec(specs), &x0, opts)?;
    Ok(OperatingPoint::from_state(net, pf.state))
}

/// Largest violation in each constraint family (zero when satisfied).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub voltage: f64,
    pub generator: f64,
    pub flow: f64,
    pub angle: f64,
}

impl ViolationReport {
    /// Element-wise maximum.
    pub fn merge(&self, other: &ViolationReport) -> ViolationReport {
        ViolationReport {
            voltage: self.voltage.max(other.voltage),
            generator: self.generator.max(other.generator),
            flow: self.flow.max(other.flow),
            angle: self.angle.max(other.angle),
        }
    }
}

/// Reports, without enforcing, the inequality constraints of the OPF problem
/// at an operating point.
pub fn constraint_report(net: &Network, op: &OperatingPoint) -> ViolationReport {
    let mut rep = ViolationReport::default();
    for (bus, &v) in net.buses().iter().zip(op.state.vm()) {
        rep.voltage = rep.voltage.max(v - bus.v_max).max(bus.v_min - v);
    }
    for (k, g) in net.generators().iter().enumerate() {
        let (p, q) = (op.p_gen[k], op.q_gen[k]);
        rep.generator = rep
            .generator
            .max(p - g.p_max)
            .max(g.p_min - p)
            .max(q - g.q_max)
            .max(g.q_min - q);
    }
    for (k, br) in net.branches().iter().enumerate() {
        let fl = &op.flows[k];
        if br.s_max > 0.0 {
            let s = fl.p_fr.hypot(fl.q_fr).max(fl.p_to.hypot(fl.q_to));
            rep.flow = rep.flow.max(s - br.s_max);
        }
        let (f, t) = net.branch_ends(k);
        let d = (op.state.va()[f] - op.state.va()[t]).abs();
        rep.angle = rep.angle.max(d - br.theta_max);
    }
    rep.voltage = rep.voltage.max(0.0);
    rep.generator = rep.generator.max(0.0);
    rep.flow = rep.flow.max(0.0);
    rep.angle = rep.angle.max(0.0);
    rep
}
