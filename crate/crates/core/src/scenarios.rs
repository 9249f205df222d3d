//! Load scenarios and the datasets built from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acpf::{
    benchmark_restore, eval_h, newton_pf, Family, Layout, MeasurementSet, PfOptions, PfSpec, StateVector,
};
use crate::error::{Error, Result};
use crate::lpac::{lpac_to_measurements, solve_lpac, LpacOptions};
use crate::netmodel::Network;
use crate::opf::{solve_acopf, AcOpfOptions};
use crate::train::{Dataset, ScenarioRecord, SourceTag};

/// Smallest multiplicative load factor.
pub const MIN_LOAD_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub count: usize,
    /// Standard deviation of the per-bus load factor.
    pub sigma: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            count: 100,
            sigma: 0.1,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidArgument("train fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-bus demand tables. Each scenario draws one factor `f ~ N(1, sigma)`
/// per bus, clamped below at [`MIN_LOAD_FACTOR`], and scales both active and
/// reactive demand by it. Scenario `i` uses its own random stream.
pub fn gen_load_scenarios(net: &Network, spec: &ScenarioSpec) -> Result<Vec<Vec<(f64, f64)>>> {
    spec.validate()?;
    let normal = Normal::new(1.0, spec.sigma)
        .map_err(|e| Error::InvalidArgument(format!("load distribution: {e}")))?;
    Ok((0..spec.count)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, i as u64);
            net.buses()
                .iter()
                .map(|bus| {
                    let f = normal.sample(&mut rng).max(MIN_LOAD_FACTOR);
                    (bus.p_load * f, bus.q_load * f)
                })
                .collect()
        })
        .collect())
}

/// The factors behind a load table (NaN at buses without demand).
pub fn load_factors(net: &Network, loads: &[(f64, f64)]) -> Vec<f64> {
    net.buses()
        .iter()
        .zip(loads)
        .map(|(b, l)| {
            if b.p_load != 0.0 {
                l.0 / b.p_load
            } else if b.q_load != 0.0 {
                l.1 / b.q_load
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Per-family standard deviations of additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub vm: f64,
    pub va: f64,
    pub pinj: f64,
    pub qinj: f64,
    pub pflow: f64,
    pub qflow: f64,
}

impl NoiseProfile {
    pub fn zero() -> Self {
        NoiseProfile {
            vm: 0.0,
            va: 0.0,
            pinj: 0.0,
            qinj: 0.0,
            pflow: 0.0,
            qflow: 0.0,
        }
    }

    pub fn sigma(&self, family: Family) -> f64 {
        match family {
            Family::Vm => self.vm,
            Family::Va => self.va,
            Family::Pinj => self.pinj,
            Family::Qinj => self.qinj,
            Family::PflowFrom | Family::PflowTo => self.pflow,
            Family::QflowFrom | Family::QflowTo => self.qflow,
        }
    }
}

impl Default for NoiseProfile {
    /// Reactive quantities noisier than active ones, voltages the cleanest.
    fn default() -> Self {
        NoiseProfile {
            vm: 0.01,
            va: 0.01,
            pinj: 0.02,
            qinj: 0.05,
            pflow: 0.02,
            qflow: 0.05,
        }
    }
}

/// Generator outputs meeting total demand in proportion to `p_max`.
pub fn proportional_dispatch(net: &Network) -> Vec<f64> {
    let demand: f64 = net.buses().iter().map(|b| b.p_load).sum();
    let cap: f64 = net.generators().iter().map(|g| g.p_max.max(0.0)).sum();
    net.generators()
        .iter()
        .map(|g| {
            if cap > 0.0 {
                g.p_max.max(0.0) * demand / cap
            } else {
                0.0
            }
        })
        .collect()
}

/// AC state at the given dispatch with generator buses held at their
/// voltage setpoints.
pub fn dispatch_state(net: &Network, p_gen: &[f64]) -> Result<StateVector> {
    let spec = PfSpec::from_dispatch(net, p_gen)?;
    let x0 = StateVector::flat(net.n_buses(), net.slack());
    Ok(newton_pf(net, &spec, &x0, &PfOptions::default())?.state)
}

fn collect_records(results: Vec<Result<ScenarioRecord>>, what: &str) -> Vec<ScenarioRecord> {
    results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| match r {
            Ok(rec) => Some(rec),
            Err(e) => {
                log::warn!("{what} scenario {i} skipped: {e}");
                None
            }
        })
        .collect()
}

/// Synthetic records: the truth is a power flow at proportional dispatch and
/// `z = h(x_AC)` plus Gaussian noise per family. Scenarios whose power flow
/// fails are logged and skipped.
pub fn synth_dataset(
    net: &Network,
    scenarios: &[Vec<(f64, f64)>],
    layout: &Layout,
    noise: &NoiseProfile,
    seed: u64,
) -> Result<Dataset> {
    let results: Vec<Result<ScenarioRecord>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, loads)| {
            let net_s = net.with_loads(loads)?;
            let x_ac = dispatch_state(&net_s, &proportional_dispatch(&net_s))?;
            let mut rng = stream_rng(seed ^ 0x6e6f_6973_6500_0000, i as u64);
            let clean = eval_h(&net_s, &x_ac, layout)?;
            let values = layout
                .iter()
                .zip(clean)
                .map(|(k, v)| {
                    let s = noise.sigma(k.family());
                    if s > 0.0 {
                        let e: f64 = rand_distr::StandardNormal.sample(&mut rng);
                        v + s * e
                    } else {
                        v
                    }
                })
                .collect();
            Ok(ScenarioRecord {
                loads: loads.clone(),
                x_ac,
                z: MeasurementSet::new(layout.clone(), values)?,
                source: SourceTag::Synthetic,
            })
        })
        .collect();
    Dataset::new(layout.clone(), collect_records(results, "synthetic"))
}

/// How LPAC records obtain their ground truth when none is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TruthRule {
    /// Power flow at the LPAC active dispatch with generator buses at their
    /// case voltage setpoints.
    Dispatch,
    /// The benchmark restoration of the LPAC point itself.
    Benchmark,
    /// The AC optimal power flow solution of the scenario.
    #[default]
    AcOpf,
}

/// LPAC records: `z` from the LPAC solution of each scenario. `truth`, when
/// given, supplies one external ground-truth state per scenario. Scenarios
/// whose LPAC or power flow fails are logged and skipped.
pub fn build_lpac_dataset(
    net: &Network,
    scenarios: &[Vec<(f64, f64)>],
    opts: &LpacOptions,
    rule: TruthRule,
    truth: Option<&[StateVector]>,
) -> Result<Dataset> {
    if let Some(t) = truth {
        if t.len() != scenarios.len() {
            return Err(Error::Dimension {
                what: "external ground-truth states",
                expected: scenarios.len(),
                got: t.len(),
            });
        }
    }
    let layout = Layout::canonical(net);
    let results: Vec<Result<ScenarioRecord>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, loads)| {
            let net_s = net.with_loads(loads)?;
            let sol = solve_lpac(&net_s, opts)?;
            let z = lpac_to_measurements(&net_s, &sol)?;
            let x_ac = match truth {
                Some(t) => t[i].clone(),
                None => match rule {
                    TruthRule::Dispatch => dispatch_state(&net_s, &sol.p_g)?,
                    TruthRule::Benchmark => benchmark_restore(&net_s, &z)?.state,
                    TruthRule::AcOpf => solve_acopf(&net_s, &AcOpfOptions::default())?.state,
                },
            };
            Ok(ScenarioRecord {
                loads: loads.clone(),
                x_ac,
                z,
                source: SourceTag::Lpac,
            })
        })
        .collect();
    Dataset::new(layout, collect_records(results, "LPAC"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn zero_sigma_reproduces_nominal() {
        let net = fixtures::case5();
        let spec = ScenarioSpec {
            count: 3,
            sigma: 0.0,
            ..ScenarioSpec::default()
        };
        for s in gen_load_scenarios(&net, &spec).unwrap() {
            assert_eq!(s, net.loads());
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let net = fixtures::case5();
        let spec = ScenarioSpec {
            count: 20,
            seed: 42,
            ..ScenarioSpec::default()
        };
        assert_eq!(
            gen_load_scenarios(&net, &spec).unwrap(),
            gen_load_scenarios(&net, &spec).unwrap()
        );
        let other = ScenarioSpec { seed: 43, ..spec };
        assert_ne!(
            gen_load_scenarios(&net, &spec).unwrap(),
            gen_load_scenarios(&net, &other).unwrap()
        );
    }

    #[test]
    fn factor_spread_matches_sigma() {
        let net = fixtures::case5();
        let spec = ScenarioSpec {
            count: 10_000,
            seed: 7,
            ..ScenarioSpec::default()
        };
        let mut f = Vec::new();
        for s in gen_load_scenarios(&net, &spec).unwrap() {
            f.extend(load_factors(&net, &s).into_iter().filter(|v| !v.is_nan()));
        }
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "sd {sd}");
        assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn factors_are_clamped() {
        let net = fixtures::case5();
        let spec = ScenarioSpec {
            count: 200,
            sigma: 2.0,
            seed: 1,
            ..ScenarioSpec::default()
        };
        for s in gen_load_scenarios(&net, &spec).unwrap() {
            for f in load_factors(&net, &s).into_iter().filter(|v| !v.is_nan()) {
                assert!(f >= MIN_LOAD_FACTOR - 1e-15);
            }
        }
    }

    #[test]
    fn noiseless_synthetic_is_consistent() {
        let net = fixtures::case5();
        let spec = ScenarioSpec {
            count: 4,
            seed: 3,
            ..ScenarioSpec::default()
        };
        let sc = gen_load_scenarios(&net, &spec).unwrap();
        let layout = Layout::canonical(&net);
        let data = synth_dataset(&net, &sc, &layout, &NoiseProfile::zero(), 9).unwrap();
        assert_eq!(data.len(), 4);
        for r in data.records() {
            let h = eval_h(&net, &r.x_ac, &layout).unwrap();
            assert_eq!(h, r.z.values());
        }
    }
}
