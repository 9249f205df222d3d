#![allow(dead_code)]

use pfrestore::acpf::{eval_h, Layout, MeasurementSet, StateVector};
use pfrestore::{parse_case, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 40 25 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 100 0 0 0 0 1 -30 30;
];
mpc.gencost = [
  2 0 0 3 0.01 20 0;
];
";

pub fn two_bus() -> Network {
    parse_case(TWO_BUS).unwrap()
}

/// Random state with magnitudes in [0.9, 1.1] and angles within 0.2 rad.
pub fn random_state(net: &Network, rng: &mut ChaCha8Rng) -> StateVector {
    let n = net.n_buses();
    let vm = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let va = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    StateVector::new(vm, va, net.slack()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Noise-free measurements of `x` in `layout`.
pub fn exact_measurements(net: &Network, x: &StateVector, layout: &Layout) -> MeasurementSet {
    MeasurementSet::new(layout.clone(), eval_h(net, x, layout).unwrap()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
