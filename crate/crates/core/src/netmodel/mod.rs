//! Electrical network model.
//!
//! A [`Network`] is built once (usually by [`parse_case`]) and is immutable
//! afterwards. All power quantities are stored in per-unit on `base_mva`,
//! angles in radians.

mod case;

pub use case::{parse_case, write_case};

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default branch angle-difference limit used when a case omits one.
pub const DEFAULT_THETA_MAX: f64 = PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: i64,
    pub kind: BusType,
    pub v_min: f64,
    pub v_max: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_charge: f64,
    /// Off-nominal turns ratio, 1.0 for plain lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent power limit, 0 means unlimited.
    pub s_max: f64,
    pub theta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: i64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage magnitude setpoint of the regulated bus.
    pub v_setpoint: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Generator {
    /// Generation cost at active output `p` (per-unit).
    pub fn cost(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }
}

/// The four entries of a branch's two-port admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub y_ff: Complex64,
    pub y_ft: Complex64,
    pub y_tf: Complex64,
    pub y_tt: Complex64,
}

/// Asymmetric pi-model of a line or transformer.
pub fn branch_two_port(branch: &Branch) -> TwoPort {
    let y = Complex64::new(1.0, 0.0) / Complex64::new(branch.r, branch.x);
    let half_charge = Complex64::new(0.0, branch.b_charge / 2.0);
    let tap = branch.tap;
    let y_tt = y + half_charge;
    let y_ff = y_tt / (tap * tap);
    let y_ft = -y / (tap * Complex64::from_polar(1.0, -branch.shift));
    let y_tf = -y / (tap * Complex64::from_polar(1.0, branch.shift));
    TwoPort {
        y_ff,
        y_ft,
        y_tf,
        y_tt,
    }
}

/// Terminal of a branch as seen from one of its buses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    From,
    To,
}

#[derive(Debug, Clone)]
pub struct Network {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    index: HashMap<i64, usize>,
    ends: Vec<(usize, usize)>,
    two_ports: Vec<TwoPort>,
    gen_bus: Vec<usize>,
    incident: Vec<Vec<(usize, Side)>>,
    gens_at: Vec<Vec<usize>>,
    slack: usize,
}

impl Network {
    /// Validates the raw tables and derives admittances and incidence data.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::InvalidData(format!(
                "base_mva must be positive, got {base_mva}"
            )));
        }
        if buses.is_empty() {
            return Err(Error::InvalidData("network has no buses".into()));
        }
        let mut index = HashMap::with_capacity(buses.len());
        let mut slack = None;
        for (pos, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, pos).is_some() {
                return Err(Error::DuplicateBus(bus.id));
            }
            if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max) {
                return Err(Error::InvalidData(format!(
                    "bus {}: voltage bounds [{}, {}] violate 0 < v_min <= v_max",
                    bus.id, bus.v_min, bus.v_max
                )));
            }
            if bus.kind == BusType::Slack {
                if let Some(prev) = slack {
                    let prev: &Bus = &buses[prev];
                    return Err(Error::MultipleSlack(prev.id, bus.id));
                }
                slack = Some(pos);
            }
        }
        let slack = slack.ok_or(Error::NoSlack)?;

        let mut ends = Vec::with_capacity(branches.len());
        for (k, br) in branches.iter().enumerate() {
            let lookup = |id: i64| {
                index.get(&id).copied().ok_or_else(|| Error::DanglingBus {
                    element: format!("branch {}", k + 1),
                    bus: id,
                })
            };
            let f = lookup(br.from)?;
            let t = lookup(br.to)?;
            if f == t {
                return Err(Error::InvalidData(format!(
                    "branch {} connects bus {} to itself",
                    k + 1,
                    br.from
                )));
            }
            if !(br.r * br.r + br.x * br.x > 0.0) {
                return Err(Error::InvalidData(format!("branch {} has zero impedance", k + 1)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::InvalidData(format!(
                    "branch {} has non-positive tap",
                    k + 1
                )));
            }
            if !(br.theta_max > 0.0) {
                return Err(Error::InvalidData(format!(
                    "branch {} has non-positive angle limit",
                    k + 1
                )));
            }
            ends.push((f, t));
        }

        let mut gen_bus = Vec::with_capacity(generators.len());
        for (k, g) in generators.iter().enumerate() {
            let pos = index.get(&g.bus).copied().ok_or_else(|| Error::DanglingBus {
                element: format!("generator {}", k + 1),
                bus: g.bus,
            })?;
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(Error::InvalidData(format!(
                    "generator {} at bus {} has inverted limits",
                    k + 1,
                    g.bus
                )));
            }
            gen_bus.push(pos);
        }

        let mut incident = vec![Vec::new(); buses.len()];
        for (k, &(f, t)) in ends.iter().enumerate() {
            incident[f].push((k, Side::From));
            incident[t].push((k, Side::To));
        }
        let mut gens_at = vec![Vec::new(); buses.len()];
        for (k, &b) in gen_bus.iter().enumerate() {
            gens_at[b].push(k);
        }
        if gens_at[slack].is_empty() {
            return Err(Error::InvalidData(format!(
                "slack bus {} has no generator",
                buses[slack].id
            )));
        }

        let mut seen = vec![false; buses.len()];
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(b) = queue.pop_front() {
            for &(k, side) in &incident[b] {
                let other = match side {
                    Side::From => ends[k].1,
                    Side::To => ends[k].0,
                };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(Error::Disconnected(buses[pos].id));
        }

        let two_ports = branches.iter().map(branch_two_port).collect();
        Ok(Network {
            base_mva,
            buses,
            branches,
            generators,
            index,
            ends,
            two_ports,
            gen_bus,
            incident,
            gens_at,
            slack,
        })
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Position of the slack bus in [`Network::buses`].
    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Position of the bus with the given id.
    pub fn bus_index(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// (from, to) bus positions of branch `k`.
    pub fn branch_ends(&self, k: usize) -> (usize, usize) {
        self.ends[k]
    }

    pub fn two_port(&self, k: usize) -> &TwoPort {
        &self.two_ports[k]
    }

    /// Branches attached to bus position `b`, with the side that touches it.
    pub fn incident(&self, b: usize) -> &[(usize, Side)] {
        &self.incident[b]
    }

    /// Bus position of generator `g`.
    pub fn generator_bus(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    /// Generators attached to bus position `b`.
    pub fn generators_at(&self, b: usize) -> &[usize] {
        &self.gens_at[b]
    }

    pub fn is_generator_bus(&self, b: usize) -> bool {
        !self.gens_at[b].is_empty()
    }

    /// Per-bus active and reactive demand.
    pub fn loads(&self) -> Vec<(f64, f64)> {
        self.buses.iter().map(|b| (b.p_load, b.q_load)).collect()
    }

    /// Copy of the network with per-bus demand replaced.
    pub fn with_loads(&self, loads: &[(f64, f64)]) -> Result<Network> {
        if loads.len() != self.buses.len() {
            return Err(Error::Dimension {
                what: "per-bus load table",
                expected: self.buses.len(),
                got: loads.len(),
            });
        }
        let mut out = self.clone();
        for (bus, &(p, q)) in out.buses.iter_mut().zip(loads) {
            bus.p_load = p;
            bus.q_load = q;
        }
        Ok(out)
    }

    /// Short content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(write_case(self).as_bytes());
        hex::encode(&digest[..8])
    }
}
