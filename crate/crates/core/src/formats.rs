//! Versioned JSON/CSV artifacts: solution files, weight files, datasets and
//! training traces. Every write goes through a temporary file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::acpf::{Family, Layout, MeasurementKind, MeasurementSet, StateVector};
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::train::{Dataset, ScenarioRecord, SourceTag, TrainTrace};
use crate::wls::WeightVector;

pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Writes `bytes` to `path` atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn check_header(path: &Path, format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(format_err(
            path,
            format!("expected format '{expected}', found '{format}'"),
        ));
    }
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    Ok(())
}

fn check_hash(net: &Network, found: &str) -> Result<()> {
    let expected = net.hash();
    if found != expected {
        return Err(Error::HashMismatch {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerUnit {
    #[default]
    Pu,
    Mw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Units {
    #[serde(default)]
    pub angle: AngleUnit,
    #[serde(default)]
    pub power: PowerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusEntry {
    pub id: i64,
    pub vm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<f64>,
    pub p_inj: f64,
    pub q_inj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEntry {
    /// 1-based position in the case's branch table.
    pub index: usize,
    pub p_fr: f64,
    pub q_fr: f64,
    pub p_to: f64,
    pub q_to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEntry {
    pub index: usize,
    pub p_g: f64,
    pub q_g: f64,
}

/// A relaxed or approximated OPF solution exchanged with external solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub version: u32,
    pub formulation: SourceTag,
    pub network_hash: String,
    pub base_mva: f64,
    #[serde(default)]
    pub units: Units,
    pub buses: Vec<BusEntry>,
    pub branches: Vec<BranchEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<GenEntry>>,
    /// Per-bus demand `[p, q]` of the scenario; nominal demand when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<[f64; 2]>>,
}

pub const SOLUTION_FORMAT: &str = "pfrestore-solution";

impl SolutionFile {
    /// Solution file holding the measurement set `z` (per-unit, radians).
    pub fn from_measurements(
        net: &Network,
        z: &MeasurementSet,
        formulation: SourceTag,
        loads: Option<&[(f64, f64)]>,
    ) -> Result<Self> {
        let need = |k: MeasurementKind| z.get(k).ok_or_else(|| Error::MissingMeasurement(k.label(net)));
        let has_angles = z.layout().iter().any(|k| k.family() == Family::Va);
        let buses = net
            .buses()
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                Ok(BusEntry {
                    id: bus.id,
                    vm: need(MeasurementKind::Vm(b))?,
                    va: if has_angles {
                        Some(need(MeasurementKind::Va(b))?)
                    } else {
                        None
                    },
                    p_inj: need(MeasurementKind::Pinj(b))?,
                    q_inj: need(MeasurementKind::Qinj(b))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let branches = (0..net.n_branches())
            .map(|k| {
                Ok(BranchEntry {
                    index: k + 1,
                    p_fr: need(MeasurementKind::PflowFrom(k))?,
                    q_fr: need(MeasurementKind::QflowFrom(k))?,
                    p_to: need(MeasurementKind::PflowTo(k))?,
                    q_to: need(MeasurementKind::QflowTo(k))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SolutionFile {
            format: SOLUTION_FORMAT.into(),
            version: FORMAT_VERSION,
            formulation,
            network_hash: net.hash(),
            base_mva: net.base_mva(),
            units: Units::default(),
            buses,
            branches,
            generators: None,
            loads: loads.map(|l| l.iter().map(|&(p, q)| [p, q]).collect()),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f: SolutionFile = read_json(path)?;
        check_header(path, &f.format, SOLUTION_FORMAT, f.version)?;
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Per-unit demand of the scenario (the case's nominal demand if absent).
    pub fn loads(&self, net: &Network) -> Result<Vec<(f64, f64)>> {
        let scale = match self.units.power {
            PowerUnit::Pu => 1.0,
            PowerUnit::Mw => 1.0 / net.base_mva(),
        };
        match &self.loads {
            None => Ok(net.loads()),
            Some(l) if l.len() == net.n_buses() => {
                Ok(l.iter().map(|[p, q]| (p * scale, q * scale)).collect())
            }
            Some(l) => Err(Error::Dimension {
                what: "solution file loads",
                expected: net.n_buses(),
                got: l.len(),
            }),
        }
    }

    /// Measurement set in the canonical layout (without angles if the file
    /// has none), in per-unit and radians, with angles re-referenced to the
    /// network's slack bus.
    pub fn to_measurements(&self, net: &Network) -> Result<MeasurementSet> {
        check_hash(net, &self.network_hash)?;
        let nb = net.n_buses();
        if self.buses.len() != nb {
            return Err(Error::Dimension {
                what: "solution file buses",
                expected: nb,
                got: self.buses.len(),
            });
        }
        if self.branches.len() != net.n_branches() {
            return Err(Error::Dimension {
                what: "solution file branches",
                expected: net.n_branches(),
                got: self.branches.len(),
            });
        }
        let p_scale = match self.units.power {
            PowerUnit::Pu => 1.0,
            PowerUnit::Mw => 1.0 / net.base_mva(),
        };
        let a_scale = match self.units.angle {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => std::f64::consts::PI / 180.0,
        };
        let mut by_bus = vec![None; nb];
        for e in &self.buses {
            let b = net
                .bus_index(e.id)
                .ok_or_else(|| Error::UnknownReference(format!("bus {}", e.id)))?;
            if by_bus[b].replace(e).is_some() {
                return Err(Error::InvalidArgument(format!("bus {} listed twice", e.id)));
            }
        }
        let by_bus: Vec<&BusEntry> = by_bus
            .into_iter()
            .map(|e| e.expect("all buses present"))
            .collect();
        let mut by_branch = vec![None; net.n_branches()];
        for e in &self.branches {
            if e.index == 0 || e.index > net.n_branches() {
                return Err(Error::UnknownReference(format!("branch {}", e.index)));
            }
            if by_branch[e.index - 1].replace(e).is_some() {
                return Err(Error::InvalidArgument(format!("branch {} listed twice", e.index)));
            }
        }
        let with_angles = by_bus.iter().all(|e| e.va.is_some());
        if !with_angles && by_bus.iter().any(|e| e.va.is_some()) {
            return Err(Error::InvalidArgument("angles given for only some buses".into()));
        }
        let layout = if with_angles {
            Layout::canonical(net)
        } else {
            Layout::without_angles(net)
        };
        let slack_angle = by_bus[net.slack()].va.unwrap_or(0.0);
        let values = layout
            .iter()
            .map(|&k| {
                let br = |k: usize| by_branch[k].expect("all branches present");
                match k {
                    MeasurementKind::Vm(b) => by_bus[b].vm,
                    MeasurementKind::Va(b) => (by_bus[b].va.unwrap_or(0.0) - slack_angle) * a_scale,
                    MeasurementKind::Pinj(b) => by_bus[b].p_inj * p_scale,
                    MeasurementKind::Qinj(b) => by_bus[b].q_inj * p_scale,
                    MeasurementKind::PflowFrom(k) => br(k).p_fr * p_scale,
                    MeasurementKind::QflowFrom(k) => br(k).q_fr * p_scale,
                    MeasurementKind::PflowTo(k) => br(k).p_to * p_scale,
                    MeasurementKind::QflowTo(k) => br(k).q_to * p_scale,
                }
            })
            .collect();
        MeasurementSet::new(layout, values)
    }
}

/// Restored operating point written by `restore`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub format: String,
    pub version: u32,
    pub network_hash: String,
    pub method: String,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

pub const STATE_FORMAT: &str = "pfrestore-state";

impl StateFile {
    pub fn new(net: &Network, method: &str, x: &StateVector) -> Self {
        StateFile {
            format: STATE_FORMAT.into(),
            version: FORMAT_VERSION,
            network_hash: net.hash(),
            method: method.into(),
            vm: x.vm().to_vec(),
            va: x.va().to_vec(),
            iterations: None,
            converged: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f: StateFile = read_json(path)?;
        check_header(path, &f.format, STATE_FORMAT, f.version)?;
        Ok(f)
    }

    pub fn state(&self, net: &Network) -> Result<StateVector> {
        check_hash(net, &self.network_hash)?;
        if self.vm.len() != net.n_buses() || self.va.len() != net.n_buses() {
            return Err(Error::Dimension {
                what: "state file buses",
                expected: net.n_buses(),
                got: self.vm.len(),
            });
        }
        StateVector::new(self.vm.clone(), self.va.clone(), net.slack())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    network_hash: String,
    labels: Vec<String>,
    values: Vec<f64>,
}

pub const WEIGHTS_FORMAT: &str = "pfrestore-weights";

pub fn write_weights(path: &Path, net: &Network, layout: &Layout, w: &WeightVector) -> Result<()> {
    if layout.len() != w.len() {
        return Err(Error::Dimension {
            what: "weights",
            expected: layout.len(),
            got: w.len(),
        });
    }
    write_json(
        path,
        &WeightFile {
            format: WEIGHTS_FORMAT.into(),
            version: FORMAT_VERSION,
            network_hash: net.hash(),
            labels: layout.labels(net),
            values: w.as_slice().to_vec(),
        },
    )
}

pub fn read_weights(path: &Path, net: &Network) -> Result<(Layout, WeightVector)> {
    let f: WeightFile = read_json(path)?;
    check_header(path, &f.format, WEIGHTS_FORMAT, f.version)?;
    check_hash(net, &f.network_hash)?;
    if f.labels.len() != f.values.len() {
        return Err(format_err(path, "label and value counts differ"));
    }
    let layout = Layout::from_labels(&f.labels, net)?;
    Ok((layout, WeightVector::new(f.values)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub network_hash: String,
    pub source: SourceTag,
    pub layout: Vec<String>,
    pub seed: u64,
    pub sigma: f64,
    pub train_fraction: f64,
    pub records: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordFile {
    loads: Vec<[f64; 2]>,
    vm: Vec<f64>,
    va: Vec<f64>,
    z: Vec<f64>,
    source: SourceTag,
}

pub const DATASET_FORMAT: &str = "pfrestore-dataset";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Provenance of a dataset, stored in its manifest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetInfo {
    pub source: SourceTag,
    pub seed: u64,
    pub sigma: f64,
    pub train_fraction: f64,
}

/// Writes `data` as a directory of per-record files plus a manifest. The
/// manifest goes last so a partial write is never mistaken for a dataset.
pub fn write_dataset(dir: &Path, net: &Network, data: &Dataset, info: &DatasetInfo) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let name = format!("record_{i:05}.json");
        write_json(
            &dir.join(&name),
            &RecordFile {
                loads: r.loads.iter().map(|&(p, q)| [p, q]).collect(),
                vm: r.x_ac.vm().to_vec(),
                va: r.x_ac.va().to_vec(),
                z: r.z.values().to_vec(),
                source: r.source,
            },
        )?;
        names.push(name);
    }
    write_json(
        &dir.join(MANIFEST_NAME),
        &DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            network_hash: net.hash(),
            source: info.source,
            layout: data.layout().labels(net),
            seed: info.seed,
            sigma: info.sigma,
            train_fraction: info.train_fraction,
            records: names,
        },
    )
}

pub fn read_dataset(dir: &Path, net: &Network) -> Result<(Dataset, DatasetManifest)> {
    let mpath = dir.join(MANIFEST_NAME);
    let man: DatasetManifest = read_json(&mpath)?;
    check_header(&mpath, &man.format, DATASET_FORMAT, man.version)?;
    check_hash(net, &man.network_hash)?;
    let layout = Layout::from_labels(&man.layout, net)?;
    let records = man
        .records
        .iter()
        .map(|name| {
            let path: PathBuf = dir.join(name);
            let r: RecordFile = read_json(&path)?;
            if r.loads.len() != net.n_buses() {
                return Err(format_err(&path, "load table does not match the network"));
            }
            Ok(ScenarioRecord {
                loads: r.loads.iter().map(|[p, q]| (*p, *q)).collect(),
                x_ac: StateVector::new(r.vm, r.va, net.slack())?,
                z: MeasurementSet::new(layout.clone(), r.z)?,
                source: r.source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(layout, records)?, man))
}

/// `iteration,loss,grad_max_norm,failed` lines.
pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("iteration,loss,grad_max_norm,failed\n");
    for e in &trace.entries {
        s.push_str(&format!(
            "{},{:e},{:e},{}\n",
            e.iteration, e.loss, e.grad_max_norm, e.failed
        ));
    }
    s
}

pub fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    atomic_write(path, trace_csv(trace).as_bytes())
}

pub fn read_trace(path: &Path) -> Result<TrainTrace> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("iteration,loss,grad_max_norm,failed") {
        return Err(format_err(path, "unexpected trace header"));
    }
    let mut trace = TrainTrace::default();
    for (n, line) in lines.enumerate() {
        let bad = || format_err(path, format!("bad trace line {}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        trace.entries.push(crate::train::TraceEntry {
            iteration: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            grad_max_norm: f[2].parse().map_err(|_| bad())?,
            failed: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acpf::eval_h;
    use crate::fixtures;

    fn sample_state(net: &Network) -> StateVector {
        let n = net.n_buses();
        let vm = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let va = (0..n).map(|i| -0.02 * i as f64).collect();
        StateVector::new(vm, va, net.slack()).unwrap()
    }

    #[test]
    fn solution_file_roundtrip() {
        let net = fixtures::case5();
        let layout = Layout::canonical(&net);
        let z = MeasurementSet::new(
            layout.clone(),
            eval_h(&net, &sample_state(&net), &layout).unwrap(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        SolutionFile::from_measurements(&net, &z, SourceTag::Lpac, None)
            .unwrap()
            .write(&path)
            .unwrap();
        let back = SolutionFile::read(&path).unwrap().to_measurements(&net).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn degrees_and_mw_are_converted() {
        let net = fixtures::case5();
        let layout = Layout::canonical(&net);
        let z = MeasurementSet::new(
            layout.clone(),
            eval_h(&net, &sample_state(&net), &layout).unwrap(),
        )
        .unwrap();
        let mut f = SolutionFile::from_measurements(&net, &z, SourceTag::Qc, None).unwrap();
        let base = net.base_mva();
        // shift every angle by 10 degrees: re-referencing removes it
        for b in &mut f.buses {
            b.va = b.va.map(|a| a.to_degrees() + 10.0);
            b.p_inj *= base;
            b.q_inj *= base;
        }
        for br in &mut f.branches {
            br.p_fr *= base;
            br.q_fr *= base;
            br.p_to *= base;
            br.q_to *= base;
        }
        f.units = Units {
            angle: AngleUnit::Deg,
            power: PowerUnit::Mw,
        };
        let back = f.to_measurements(&net).unwrap();
        for (a, b) in back.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn missing_angles_give_angle_free_layout() {
        let net = fixtures::case5();
        let layout = Layout::without_angles(&net);
        let z = MeasurementSet::new(
            layout.clone(),
            eval_h(&net, &sample_state(&net), &layout).unwrap(),
        )
        .unwrap();
        let f = SolutionFile::from_measurements(&net, &z, SourceTag::Socp, None).unwrap();
        assert!(f.buses.iter().all(|b| b.va.is_none()));
        assert_eq!(f.to_measurements(&net).unwrap().layout(), &layout);
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let net = fixtures::case5();
        let layout = Layout::canonical(&net);
        let z = MeasurementSet::new(layout.clone(), vec![1.0; layout.len()]).unwrap();
        let mut f = SolutionFile::from_measurements(&net, &z, SourceTag::Lpac, None).unwrap();
        f.network_hash = "0000000000000000".into();
        assert!(matches!(f.to_measurements(&net), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn weights_roundtrip() {
        let net = fixtures::case5();
        let layout = Layout::canonical(&net);
        let w = WeightVector::new((0..layout.len()).map(|i| 1.0 + i as f64 * 0.5).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        write_weights(&path, &net, &layout, &w).unwrap();
        let (l2, w2) = read_weights(&path, &net).unwrap();
        assert_eq!((l2, w2), (layout, w));
    }

    #[test]
    fn trace_roundtrip() {
        let trace = TrainTrace {
            entries: vec![crate::train::TraceEntry {
                iteration: 1,
                loss: 0.123456789012345,
                grad_max_norm: 3.5e-7,
                failed: 0,
            }],
            snapshots: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&path, &trace).unwrap();
        assert_eq!(read_trace(&path).unwrap().entries, trace.entries);
    }
}
