use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Network;

/// One scalar quantity of the AC model. Bus and branch references are
/// positions in the owning [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    Vm(usize),
    Va(usize),
    Pinj(usize),
    Qinj(usize),
    PflowFrom(usize),
    QflowFrom(usize),
    PflowTo(usize),
    QflowTo(usize),
}

/// Kind without its reference, used for per-family weights and noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Vm,
    Va,
    Pinj,
    Qinj,
    PflowFrom,
    QflowFrom,
    PflowTo,
    QflowTo,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Vm,
        Family::Va,
        Family::Pinj,
        Family::Qinj,
        Family::PflowFrom,
        Family::QflowFrom,
        Family::PflowTo,
        Family::QflowTo,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Family::Vm => "vm",
            Family::Va => "va",
            Family::Pinj => "pinj",
            Family::Qinj => "qinj",
            Family::PflowFrom => "pfr",
            Family::QflowFrom => "qfr",
            Family::PflowTo => "pto",
            Family::QflowTo => "qto",
        }
    }

    fn from_tag(tag: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.tag() == tag)
    }

    /// Whether the family is a bus voltage (as opposed to a power quantity).
    pub fn is_voltage(self) -> bool {
        matches!(self, Family::Vm | Family::Va)
    }
}

impl MeasurementKind {
    pub fn family(self) -> Family {
        match self {
            MeasurementKind::Vm(_) => Family::Vm,
            MeasurementKind::Va(_) => Family::Va,
            MeasurementKind::Pinj(_) => Family::Pinj,
            MeasurementKind::Qinj(_) => Family::Qinj,
            MeasurementKind::PflowFrom(_) => Family::PflowFrom,
            MeasurementKind::QflowFrom(_) => Family::QflowFrom,
            MeasurementKind::PflowTo(_) => Family::PflowTo,
            MeasurementKind::QflowTo(_) => Family::QflowTo,
        }
    }

    /// Bus or branch position.
    pub fn target(self) -> usize {
        match self {
            MeasurementKind::Vm(i)
            | MeasurementKind::Va(i)
            | MeasurementKind::Pinj(i)
            | MeasurementKind::Qinj(i)
            | MeasurementKind::PflowFrom(i)
            | MeasurementKind::QflowFrom(i)
            | MeasurementKind::PflowTo(i)
            | MeasurementKind::QflowTo(i) => i,
        }
    }

    pub fn on_bus(self) -> bool {
        matches!(
            self,
            MeasurementKind::Vm(_)
                | MeasurementKind::Va(_)
                | MeasurementKind::Pinj(_)
                | MeasurementKind::Qinj(_)
        )
    }

    fn with_target(family: Family, i: usize) -> Self {
        match family {
            Family::Vm => MeasurementKind::Vm(i),
            Family::Va => MeasurementKind::Va(i),
            Family::Pinj => MeasurementKind::Pinj(i),
            Family::Qinj => MeasurementKind::Qinj(i),
            Family::PflowFrom => MeasurementKind::PflowFrom(i),
            Family::QflowFrom => MeasurementKind::QflowFrom(i),
            Family::PflowTo => MeasurementKind::PflowTo(i),
            Family::QflowTo => MeasurementKind::QflowTo(i),
        }
    }

    pub fn validate(self, net: &Network) -> Result<()> {
        let (limit, what) = if self.on_bus() {
            (net.n_buses(), "bus")
        } else {
            (net.n_branches(), "branch")
        };
        if self.target() >= limit {
            return Err(Error::UnknownReference(format!(
                "{} refers to {what} position {} of {limit}",
                self.family().tag(),
                self.target()
            )));
        }
        Ok(())
    }

    /// File label: bus kinds use the bus id, branch kinds the 1-based branch
    /// number, e.g. `vm:3` or `pfr:7`.
    pub fn label(self, net: &Network) -> String {
        let id = if self.on_bus() {
            net.buses()[self.target()].id
        } else {
            self.target() as i64 + 1
        };
        format!("{}:{}", self.family().tag(), id)
    }

    pub fn from_label(label: &str, net: &Network) -> Result<Self> {
        let bad = || Error::UnknownReference(format!("malformed measurement label '{label}'"));
        let (tag, id) = label.split_once(':').ok_or_else(bad)?;
        let family = Family::from_tag(tag).ok_or_else(bad)?;
        let id: i64 = id.parse().map_err(|_| bad())?;
        let kind = if family.is_voltage() || matches!(family, Family::Pinj | Family::Qinj) {
            let pos = net
                .bus_index(id)
                .ok_or_else(|| Error::UnknownReference(format!("'{label}': no bus {id}")))?;
            MeasurementKind::with_target(family, pos)
        } else {
            if id < 1 || id as usize > net.n_branches() {
                return Err(Error::UnknownReference(format!("'{label}': no branch {id}")));
            }
            MeasurementKind::with_target(family, id as usize - 1)
        };
        Ok(kind)
    }
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.family().tag(), self.target())
    }
}

/// Ordered, duplicate-free list of measurement kinds shared by a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout(Arc<[MeasurementKind]>);

impl Layout {
    pub fn new(kinds: Vec<MeasurementKind>, net: &Network) -> Result<Self> {
        let mut seen = HashSet::with_capacity(kinds.len());
        for &k in &kinds {
            k.validate(net)?;
            if !seen.insert(k) {
                return Err(Error::InvalidArgument(format!("duplicate measurement {k}")));
            }
        }
        Ok(Layout(kinds.into()))
    }

    /// Every family in canonical order: Vm, Va, Pinj, Qinj over all buses,
    /// then the four flow families over all branches.
    pub fn canonical(net: &Network) -> Self {
        Self::families(net, &Family::ALL)
    }

    /// Canonical layout without angle entries, for sources that provide none.
    pub fn without_angles(net: &Network) -> Self {
        let fams: Vec<Family> = Family::ALL.into_iter().filter(|&f| f != Family::Va).collect();
        Self::families(net, &fams)
    }

    /// The listed families in the given order, each over all buses or branches.
    pub fn families(net: &Network, families: &[Family]) -> Self {
        let mut kinds = Vec::new();
        for &fam in families {
            let probe = MeasurementKind::with_target(fam, 0);
            let count = if probe.on_bus() {
                net.n_buses()
            } else {
                net.n_branches()
            };
            kinds.extend((0..count).map(|i| MeasurementKind::with_target(fam, i)));
        }
        Layout(kinds.into())
    }

    pub fn kinds(&self) -> &[MeasurementKind] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, kind: MeasurementKind) -> Option<usize> {
        self.0.iter().position(|&k| k == kind)
    }

    pub fn labels(&self, net: &Network) -> Vec<String> {
        self.0.iter().map(|k| k.label(net)).collect()
    }

    pub fn from_labels(labels: &[String], net: &Network) -> Result<Self> {
        let kinds = labels
            .iter()
            .map(|l| MeasurementKind::from_label(l, net))
            .collect::<Result<Vec<_>>>()?;
        Layout::new(kinds, net)
    }
}

impl std::ops::Deref for Layout {
    type Target = [MeasurementKind];

    fn deref(&self) -> &[MeasurementKind] {
        &self.0
    }
}

/// Measurement vector `z` with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    layout: Layout,
    values: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if layout.len() != values.len() {
            return Err(Error::Dimension {
                what: "measurement values",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(MeasurementSet { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, kind: MeasurementKind) -> Option<f64> {
        self.layout.position(kind).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (MeasurementKind, f64)> + '_ {
        self.layout.iter().copied().zip(self.values.iter().copied())
    }
}
