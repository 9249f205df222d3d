//! Regression targets for the 5-bus pipeline. Runs last: a failing test
//! binary stops the remaining ones.

use pfrestore::acpf::Layout;
use pfrestore::eval::{evaluate, held_out_loss, raw_state, Method};
use pfrestore::scenarios::{synth_dataset, NoiseProfile, TruthRule};
use pfrestore::train::{squared_error, TrainConfig};
use pfrestore::*;

/// Published loss of verbatim LPAC solutions on 5-bus scenarios.
const REFERENCE_RAW_LOSS: f64 = 0.4996;

#[test]
fn verbatim_lpac_loss_has_reference_order() {
    let net = fixtures::case5();
    let spec = ScenarioSpec {
        count: 2000,
        seed: 7,
        ..ScenarioSpec::default()
    };
    let sc = gen_load_scenarios(&net, &spec).unwrap();
    let data = build_lpac_dataset(&net, &sc, &LpacOptions::default(), TruthRule::default(), None).unwrap();
    let sq: f64 = data
        .records()
        .iter()
        .map(|r| squared_error(&raw_state(&net, &r.z).unwrap(), &r.x_ac).unwrap())
        .sum();
    let loss = sq / (2 * net.n_buses() - 1) as f64;
    assert!(
        (loss / REFERENCE_RAW_LOSS).log10().abs() < 1.0,
        "raw loss {loss:.4} over {} scenarios",
        data.len()
    );
}

#[test]
fn trained_weights_beat_benchmark_and_benchmark_beats_raw() {
    let net = fixtures::case5();
    let spec = ScenarioSpec {
        count: 500,
        seed: 2024,
        ..ScenarioSpec::default()
    };
    let sc = gen_load_scenarios(&net, &spec).unwrap();
    let data = build_lpac_dataset(&net, &sc, &LpacOptions::default(), TruthRule::default(), None).unwrap();
    let (train, test) = data.split(spec.train_fraction);
    let cfg = TrainConfig::default();
    let (w, _) = train_weights(&net, &train, &cfg).unwrap();
    let w0 = default_initial_weights(train.layout());
    let r = evaluate(&net, &test, &w0, Some(&w), &cfg.wls, true).unwrap();
    let l = |m| r.get(m).unwrap().loss;
    let (opt, bench, raw) = (l(Method::WlsOpt), l(Method::Benchmark), l(Method::Raw));
    assert!(
        opt < bench && bench < raw,
        "opt {opt:.4} benchmark {bench:.4} raw {raw:.4}"
    );
}

#[test]
fn synthetic_training_halves_the_loss() {
    let net = fixtures::case5();
    let spec = ScenarioSpec {
        count: 100,
        seed: 42,
        ..ScenarioSpec::default()
    };
    let sc = gen_load_scenarios(&net, &spec).unwrap();
    let data = synth_dataset(&net, &sc, &Layout::canonical(&net), &NoiseProfile::default(), 42).unwrap();
    let (w, trace) = train_weights(&net, &data, &TrainConfig::default()).unwrap();
    let initial = trace.entries[0].loss;
    let last = held_out_loss(&net, &data, &w, &WlsOptions::default()).unwrap();
    assert!(last <= 0.5 * initial, "final {last:.4e} vs initial {initial:.4e}");
}
