//! Offline weight training: loss, gradient accumulation over a dataset, and
//! Adam updates.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acpf::{Layout, MeasurementSet, StateVector};
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::sens::{solution_sensitivity_with, SensitivityMode};
use crate::wls::{wls_restore, WeightVector, WlsOptions, WEIGHT_FLOOR};

/// Where a record's measurements came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Qc,
    Socp,
    Sdp,
    Lpac,
    Synthetic,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Qc => "qc",
            SourceTag::Socp => "socp",
            SourceTag::Sdp => "sdp",
            SourceTag::Lpac => "lpac",
            SourceTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "qc" => SourceTag::Qc,
            "socp" => SourceTag::Socp,
            "sdp" => SourceTag::Sdp,
            "lpac" => SourceTag::Lpac,
            "synthetic" => SourceTag::Synthetic,
            other => return Err(Error::InvalidArgument(format!("unknown formulation '{other}'"))),
        })
    }
}

/// One sample: perturbed demand, the AC ground truth and the measurements
/// of an approximate solution.
#[derive(Debug, Clone)]
pub struct ScenarioRecord {
    pub loads: Vec<(f64, f64)>,
    pub x_ac: StateVector,
    pub z: MeasurementSet,
    pub source: SourceTag,
}

/// Records sharing one measurement layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    layout: Layout,
    records: Vec<ScenarioRecord>,
}

impl Dataset {
    pub fn new(layout: Layout, records: Vec<ScenarioRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.z.layout() != &layout {
                return Err(Error::InvalidArgument(format!(
                    "record {i} does not use the dataset layout"
                )));
            }
            if r.x_ac.n_buses() != r.loads.len() {
                return Err(Error::Dimension {
                    what: "record ground truth buses",
                    expected: r.loads.len(),
                    got: r.x_ac.n_buses(),
                });
            }
        }
        Ok(Dataset { layout, records })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn records(&self) -> &[ScenarioRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records at the given positions, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            layout: self.layout.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// First `k` records.
    pub fn take(&self, k: usize) -> Dataset {
        Dataset {
            layout: self.layout.clone(),
            records: self.records.iter().take(k).cloned().collect(),
        }
    }

    /// Splits into a leading training part of `round(fraction * len)`
    /// records and the remaining test part.
    pub fn split(&self, train_fraction: f64) -> (Dataset, Dataset) {
        let k = ((self.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
        let (a, b) = self.records.split_at(k);
        (
            Dataset {
                layout: self.layout.clone(),
                records: a.to_vec(),
            },
            Dataset {
                layout: self.layout.clone(),
                records: b.to_vec(),
            },
        )
    }
}

/// Squared state error `sum (dvm^2 + dva^2)` between two states.
pub fn squared_error(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.n_buses() != b.n_buses() || a.slack() != b.slack() {
        return Err(Error::Dimension {
            what: "state buses",
            expected: a.n_buses(),
            got: b.n_buses(),
        });
    }
    let dv = a.vm().iter().zip(b.vm()).map(|(x, y)| (x - y).powi(2));
    let da = a.va().iter().zip(b.va()).map(|(x, y)| (x - y).powi(2));
    Ok(dv.chain(da).sum())
}

/// Loss `1/(2N-1) * sum_s ||x_R - x_AC||^2` summed over records.
pub fn loss(records: &[ScenarioRecord], restored: &[StateVector]) -> Result<f64> {
    if records.len() != restored.len() {
        return Err(Error::Dimension {
            what: "restored states",
            expected: records.len(),
            got: restored.len(),
        });
    }
    let mut total = 0.0;
    let mut dim = 1;
    for (r, x) in records.iter().zip(restored) {
        total += squared_error(x, &r.x_ac)?;
        dim = r.x_ac.dim();
    }
    Ok(total / dim as f64)
}

/// Gradient of `F(w) = 1/2 sum_s ||x_R(w) - x_AC||^2` together with the loss
/// at the same weights.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub gradient: Vec<f64>,
    /// Loss over the records that succeeded.
    pub loss: f64,
    pub used: usize,
    pub failed: usize,
}

/// Failure fraction above which gradient accumulation aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

fn record_term(
    net: &Network,
    rec: &ScenarioRecord,
    w: &WeightVector,
    opts: &WlsOptions,
    mode: SensitivityMode,
) -> Result<(Vec<f64>, f64)> {
    let res = wls_restore(net, &rec.z, w, opts)?;
    if !res.converged {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            mismatch: res.objective,
        });
    }
    let s = solution_sensitivity_with(net, &rec.z, w, &res.state, mode)?;
    let diff: Vec<f64> = res
        .state
        .to_vec()
        .iter()
        .zip(rec.x_ac.to_vec())
        .map(|(a, b)| a - b)
        .collect();
    let sq = diff.iter().map(|d| d * d).sum();
    Ok((s.transpose_mul(&diff), sq))
}

/// Restores every record, computes its sensitivity and sums `S' (x_R - x_AC)`.
///
/// Failed records are logged and skipped. More than 10% failures aborts.
/// Per-record terms are combined in record order, so results do not depend on
/// the thread count.
pub fn accumulate_gradient(
    net: &Network,
    data: &Dataset,
    w: &WeightVector,
    opts: &WlsOptions,
    mode: SensitivityMode,
) -> Result<GradientEval> {
    accumulate_over(net, data.records(), w, opts, mode, true)
}

fn accumulate_over(
    net: &Network,
    records: &[ScenarioRecord],
    w: &WeightVector,
    opts: &WlsOptions,
    mode: SensitivityMode,
    parallel: bool,
) -> Result<GradientEval> {
    let m = w.len();
    let terms: Vec<Result<(Vec<f64>, f64)>> = if parallel {
        records
            .par_iter()
            .map(|r| record_term(net, r, w, opts, mode))
            .collect()
    } else {
        records
            .iter()
            .map(|r| record_term(net, r, w, opts, mode))
            .collect()
    };
    let mut gradient = vec![0.0; m];
    let mut sq = 0.0;
    let mut failed = 0;
    let mut first = None;
    for (i, t) in terms.into_iter().enumerate() {
        match t {
            Ok((g, e)) => {
                for (a, b) in gradient.iter_mut().zip(g) {
                    *a += b;
                }
                sq += e;
            }
            Err(e) => {
                log::warn!("record {i} skipped: {e}");
                failed += 1;
                first.get_or_insert_with(|| format!("record {i}: {e}"));
            }
        }
    }
    let total = records.len();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total,
            first: first.unwrap_or_default(),
        });
    }
    let dim = (2 * net.n_buses() - 1) as f64;
    Ok(GradientEval {
        gradient,
        loss: sq / dim,
        used: total - failed,
        failed,
    })
}

/// Moment estimates carried between Adam steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed steps.
    pub t: usize,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Starting weights; `None` uses [`default_initial_weights`].
    pub w_init: Option<WeightVector>,
    pub w_floor: f64,
    /// Seed for mini-batch sampling.
    pub rng_seed: u64,
    /// Records per iteration; `None` uses the full dataset.
    pub batch_size: Option<usize>,
    /// Store a weight snapshot every this many iterations (0 disables).
    pub snapshot_every: usize,
    pub parallel: bool,
    pub wls: WlsOptions,
    pub sensitivity: SensitivityMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iter: 200,
            w_init: None,
            w_floor: WEIGHT_FLOOR,
            rng_seed: 0,
            batch_size: None,
            snapshot_every: 0,
            parallel: true,
            wls: WlsOptions::default(),
            sensitivity: SensitivityMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.eta > 0.0) || !open(self.beta1) || !open(self.beta2) {
            return Err(Error::InvalidArgument(
                "need eta > 0 and 0 < beta1, beta2 < 1".into(),
            ));
        }
        if !(self.epsilon >= 0.0) || !(self.w_floor > 0.0) {
            return Err(Error::InvalidArgument(
                "epsilon must be non-negative and w_floor positive".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One Adam update with moments in `state`, followed by clamping to
/// `cfg.w_floor`.
pub fn adam_step(w: &WeightVector, state: &mut AdamState, g: &[f64], cfg: &TrainConfig) -> WeightVector {
    assert_eq!(g.len(), w.len(), "gradient length");
    assert_eq!(state.m.len(), w.len(), "moment length");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let out = w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            (wi - cfg.eta * m_hat / (v_hat.sqrt() + cfg.epsilon)).max(cfg.w_floor)
        })
        .collect();
    WeightVector::from_raw(out)
}

/// 1e4 on voltage magnitudes and angles, 1e3 on injections and flows.
pub fn default_initial_weights(layout: &Layout) -> WeightVector {
    WeightVector::from_raw(
        layout
            .iter()
            .map(|k| if k.family().is_voltage() { 1e4 } else { 1e3 })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Loss at the weights the iteration started from.
    pub loss: f64,
    pub grad_max_norm: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub snapshots: Vec<(usize, WeightVector)>,
}

/// Runs `cfg.max_iter` rounds of gradient accumulation and Adam updates.
pub fn train_weights(
    net: &Network,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<(WeightVector, TrainTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut w = match &cfg.w_init {
        Some(w) => w.clone(),
        None => default_initial_weights(train.layout()),
    };
    if w.len() != train.layout().len() {
        return Err(Error::Dimension {
            what: "initial weights",
            expected: train.layout().len(),
            got: w.len(),
        });
    }
    let mut state = AdamState::new(w.len());
    let mut trace = TrainTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    for it in 0..cfg.max_iter {
        let eval = match cfg.batch_size {
            Some(b) if b < train.len() => {
                let mut idx = sample(&mut rng, train.len(), b).into_vec();
                idx.sort_unstable();
                let batch: Vec<ScenarioRecord> = idx.iter().map(|&i| train.records()[i].clone()).collect();
                accumulate_over(net, &batch, &w, &cfg.wls, cfg.sensitivity, cfg.parallel)?
            }
            _ => accumulate_over(net, train.records(), &w, &cfg.wls, cfg.sensitivity, cfg.parallel)?,
        };
        let gmax = eval.gradient.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        trace.entries.push(TraceEntry {
            iteration: it + 1,
            loss: eval.loss,
            grad_max_norm: gmax,
            failed: eval.failed,
        });
        log::debug!("iteration {}: loss {:.6e}, |g| {:.3e}", it + 1, eval.loss, gmax);
        w = adam_step(&w, &mut state, &eval.gradient, cfg);
        if cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0 {
            trace.snapshots.push((it + 1, w.clone()));
        }
    }
    Ok((w, trace))
}
