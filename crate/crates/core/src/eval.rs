//! Comparison of restoration methods on a held-out dataset.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acpf::{
    benchmark_restore, constraint_report, MeasurementKind, MeasurementSet, OperatingPoint, StateVector,
    ViolationReport,
};
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::train::{squared_error, train_weights, Dataset, TrainConfig};
use crate::wls::{wls_restore, WeightVector, WlsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The approximate solution's own voltages.
    Raw,
    Benchmark,
    WlsInit,
    WlsOpt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Benchmark => "benchmark",
            Method::WlsInit => "wls_init",
            Method::WlsOpt => "wls_opt",
        }
    }
}

/// State read directly from the voltage entries of `z`; angles default to
/// zero when absent.
pub fn raw_state(net: &Network, z: &MeasurementSet) -> Result<StateVector> {
    let n = net.n_buses();
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    for (k, v) in z.iter() {
        match k {
            MeasurementKind::Vm(b) => vm[b] = v,
            MeasurementKind::Va(b) => va[b] = v,
            _ => {}
        }
    }
    if vm.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "non-positive voltage magnitude in z".into(),
        ));
    }
    StateVector::new(vm, va, net.slack())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// Loss over the scenarios every method restored.
    pub loss: f64,
    /// Mean wall-clock seconds per restored scenario.
    pub mean_time_s: f64,
    pub failed: usize,
    /// Worst violation per constraint family over the common scenarios.
    pub violations: ViolationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenarios: usize,
    /// Scenarios restored by every method; losses are over these.
    pub common: usize,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn get(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,loss,mean_time_s,failed,voltage_violation,generator_violation,flow_violation,angle_violation\n",
        );
        for r in &self.methods {
            let v = &r.violations;
            s.push_str(&format!(
                "{},{:e},{:e},{},{:e},{:e},{:e},{:e}\n",
                r.method.as_str(),
                r.loss,
                r.mean_time_s,
                r.failed,
                v.voltage,
                v.generator,
                v.flow,
                v.angle
            ));
        }
        s
    }
}

type Outcome = Option<(StateVector, f64)>;

fn run_method(
    net: &Network,
    loads: &[(f64, f64)],
    z: &MeasurementSet,
    method: Method,
    w: Option<&WeightVector>,
    opts: &WlsOptions,
) -> Outcome {
    let start = Instant::now();
    let state = match method {
        Method::Raw => raw_state(net, z).ok(),
        Method::Benchmark => net
            .with_loads(loads)
            .and_then(|n| benchmark_restore(&n, z))
            .map(|op| op.state)
            .ok(),
        Method::WlsInit | Method::WlsOpt => {
            let w = w.expect("weights for WLS method");
            wls_restore(net, z, w, opts)
                .ok()
                .filter(|r| r.converged)
                .map(|r| r.state)
        }
    }?;
    Some((state, start.elapsed().as_secs_f64()))
}

/// Restores every record of `test` with each method and reports losses,
/// timings and constraint violations. `w_opt` adds the trained-weight row.
pub fn evaluate(
    net: &Network,
    test: &Dataset,
    w_init: &WeightVector,
    w_opt: Option<&WeightVector>,
    opts: &WlsOptions,
    parallel: bool,
) -> Result<EvalReport> {
    let mut methods = vec![Method::Raw, Method::Benchmark, Method::WlsInit];
    if w_opt.is_some() {
        methods.push(Method::WlsOpt);
    }
    let per_record = |rec: &crate::train::ScenarioRecord| -> Vec<Outcome> {
        methods
            .iter()
            .map(|&m| {
                let w = match m {
                    Method::WlsInit => Some(w_init),
                    Method::WlsOpt => w_opt,
                    _ => None,
                };
                run_method(net, &rec.loads, &rec.z, m, w, opts)
            })
            .collect()
    };
    let outcomes: Vec<Vec<Outcome>> = if parallel {
        test.records().par_iter().map(per_record).collect()
    } else {
        test.records().iter().map(per_record).collect()
    };

    let common: Vec<usize> = (0..test.len())
        .filter(|&i| outcomes[i].iter().all(Option::is_some))
        .collect();
    let mut reports = Vec::with_capacity(methods.len());
    for (j, &m) in methods.iter().enumerate() {
        let mut sq = 0.0;
        let mut viol = ViolationReport::default();
        for &i in &common {
            let (x, _) = outcomes[i][j].as_ref().expect("common scenario");
            let rec = &test.records()[i];
            sq += squared_error(x, &rec.x_ac)?;
            let net_s = net.with_loads(&rec.loads)?;
            let op = OperatingPoint::from_state(&net_s, x.clone());
            viol = viol.merge(&constraint_report(&net_s, &op));
        }
        let times: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o[j].as_ref().map(|t| t.1))
            .collect();
        let dim = (2 * net.n_buses() - 1) as f64;
        reports.push(MethodReport {
            method: m,
            loss: sq / dim,
            mean_time_s: if times.is_empty() {
                0.0
            } else {
                times.iter().sum::<f64>() / times.len() as f64
            },
            failed: outcomes.iter().filter(|o| o[j].is_none()).count(),
            violations: viol,
        });
    }
    Ok(EvalReport {
        scenarios: test.len(),
        common: common.len(),
        methods: reports,
    })
}

/// Held-out loss of weights trained on the first `n` training records, for
/// each `n` in `counts`.
pub fn scenario_curve(
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    counts: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    counts
        .iter()
        .map(|&n| {
            if n == 0 || n > train.len() {
                return Err(Error::InvalidArgument(format!(
                    "scenario count {n} outside 1..={}",
                    train.len()
                )));
            }
            let (w, _) = train_weights(net, &train.take(n), cfg)?;
            Ok((n, held_out_loss(net, test, &w, &cfg.wls)?))
        })
        .collect()
}

/// WLS loss over `data` at weights `w`; records that fail are skipped.
pub fn held_out_loss(net: &Network, data: &Dataset, w: &WeightVector, opts: &WlsOptions) -> Result<f64> {
    let sq: Vec<Option<f64>> = data
        .records()
        .par_iter()
        .map(|r| {
            let res = wls_restore(net, &r.z, w, opts).ok().filter(|r| r.converged)?;
            squared_error(&res.state, &r.x_ac).ok()
        })
        .collect();
    let failed = sq.iter().filter(|v| v.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} records failed to restore", data.len());
    }
    Ok(sq.into_iter().flatten().sum::<f64>() / (2 * net.n_buses() - 1) as f64)
}
