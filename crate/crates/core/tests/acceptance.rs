//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfrestore::eval::{evaluate, scenario_curve, EvalReport, Method};
use pfrestore::formats::SolutionFile;
use pfrestore::lpac::{build_lpac, simplex_solve, solve_lpac, LpacIndex, CERT_TOL};
use pfrestore::scenarios::{dispatch_state, proportional_dispatch, TruthRule};
use pfrestore::train::{AdamState, TrainConfig};
use pfrestore::*;

const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 40 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1;
];
";

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_state(net: &Network, rng: &mut ChaCha8Rng, dv: f64, da: f64) -> StateVector {
    let n = net.n_buses();
    let vm = (0..n).map(|_| 1.0 + rng.random_range(-dv..dv)).collect();
    let va = (0..n).map(|_| rng.random_range(-da..da)).collect();
    StateVector::new(vm, va, net.slack()).unwrap()
}

fn shifted(x: &StateVector, j: usize, d: f64) -> StateVector {
    let mut v = x.to_vec();
    v[j] += d;
    StateVector::from_vec(&v, x.n_buses(), x.slack()).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = 1e-6;
    let mut worst = 0.0f64;
    for (_, net) in fixtures::all().unwrap() {
        let layout = Layout::canonical(&net);
        for _ in 0..10 {
            let x = random_state(&net, &mut rng, 0.1, 0.3);
            let jac = eval_jacobian(&net, &x, &layout).unwrap();
            for j in 0..x.dim() {
                let hp = eval_h(&net, &shifted(&x, j, step), &layout).unwrap();
                let hm = eval_h(&net, &shifted(&x, j, -step), &layout).unwrap();
                for i in 0..layout.len() {
                    let fd = (hp[i] - hm[i]) / (2.0 * step);
                    let a = jac[(i, j)];
                    worst = worst.max((fd - a).abs() / a.abs().max(1.0));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && secs < 30.0,
        format!("max relative error {worst:.2e} over 4 fixtures x 10 states, {secs:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_err = 0.0f64;
    let mut worst_iter = 0;
    let mut worst_scale = 0.0f64;
    for (_, net) in fixtures::all().unwrap() {
        let layout = Layout::canonical(&net);
        let x_star = dispatch_state(&net, &proportional_dispatch(&net)).unwrap();
        let z = MeasurementSet::new(layout.clone(), eval_h(&net, &x_star, &layout).unwrap()).unwrap();
        let w: Vec<f64> = (0..layout.len())
            .map(|_| 10f64.powf(rng.random_range(1.0..4.0)))
            .collect();
        let w = WeightVector::new(w).unwrap();
        let opts = WlsOptions {
            record_history: true,
            ..WlsOptions::default()
        };
        let base = wls_restore(&net, &z, &w, &opts).unwrap();
        if !base.converged {
            return Err(format!("{} buses: no convergence", net.n_buses()));
        }
        worst_err = worst_err.max(base.state.max_abs_diff(&x_star));
        worst_iter = worst_iter.max(base.iterations);
        for c in [1e-3, 1.0, 1e3] {
            let r = wls_restore(&net, &z, &w.scaled(c).unwrap(), &opts).unwrap();
            if r.history.len() != base.history.len() {
                return Err(format!("iterate count changes under scale {c}"));
            }
            for ((a, _), (b, _)) in r.history.iter().zip(&base.history) {
                for (p, q) in a.iter().zip(b) {
                    worst_scale = worst_scale.max((p - q).abs());
                }
            }
        }
    }
    check(
        worst_iter <= 10 && worst_err < 1e-8 && worst_scale <= 1e-12,
        format!(
            "<= {worst_iter} iterations, |x_R - x*| {worst_err:.1e}, iterate spread under scaling {worst_scale:.1e}"
        ),
    )
}

/// Worst relative column error of the sensitivity against central
/// differences of the solver, over all columns and over Vm/Va columns.
fn sensitivity_errors(net: &Network, z: &MeasurementSet, w: &WeightVector) -> (f64, f64) {
    let tight = WlsOptions {
        tol: 1e-13,
        max_iter: 100,
        ..WlsOptions::default()
    };
    let x_r = wls_restore(net, z, w, &tight).unwrap().state;
    let s = solution_sensitivity(net, z, w, &x_r).unwrap();
    let delta = 1e-4;
    let (mut all, mut volt) = (0.0f64, 0.0f64);
    for (i, kind) in z.layout().iter().enumerate() {
        let wi = w.as_slice()[i];
        let solve = |sign: f64| {
            let mut v = w.as_slice().to_vec();
            v[i] = wi * (1.0 + sign * delta);
            wls_restore_from(net, z, &WeightVector::new(v).unwrap(), x_r.clone(), &tight)
                .unwrap()
                .state
                .to_vec()
        };
        let (p, m) = (solve(1.0), solve(-1.0));
        let fd: Vec<f64> = p
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b) / (2.0 * delta * wi))
            .collect();
        let col = s.column(i);
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = fd.iter().zip(&col).fold(0.0f64, |a, (f, c)| a.max((f - c).abs()));
        let rel = diff / scale.max(f64::MIN_POSITIVE);
        all = all.max(rel);
        if kind.family().is_voltage() {
            volt = volt.max(rel);
        }
    }
    (all, volt)
}

fn criterion_3() -> Outcome {
    let two = parse_case(TWO_BUS).unwrap();
    let kinds = vec![
        MeasurementKind::Vm(0),
        MeasurementKind::Vm(1),
        MeasurementKind::Pinj(1),
        MeasurementKind::Qinj(1),
    ];
    let z2 = MeasurementSet::new(Layout::new(kinds, &two).unwrap(), vec![1.0, 0.98, -0.4, -0.25]).unwrap();
    let w2 = WeightVector::new(vec![1e4, 1e4, 1e3, 1e3]).unwrap();
    let (a2, v2) = sensitivity_errors(&two, &z2, &w2);

    let net = fixtures::case5();
    let sol = solve_lpac(&net, &LpacOptions::default()).unwrap();
    let z5 = lpac_to_measurements(&net, &sol).unwrap();
    let w5 = default_initial_weights(z5.layout());
    let (a5, v5) = sensitivity_errors(&net, &z5, &w5);

    let layout = z5.layout().clone();
    let x = random_state(&net, &mut ChaCha8Rng::seed_from_u64(3), 0.05, 0.1);
    let zc = MeasurementSet::new(layout.clone(), eval_h(&net, &x, &layout).unwrap()).unwrap();
    let s0 = solution_sensitivity(&net, &zc, &w5, &x).unwrap();
    let zero = s0.matrix().iter().all(|&v| v == 0.0);

    let all = a2.max(a5);
    let volt = v2.max(v5);
    check(
        all < 1e-2 && volt < 1e-4 && zero,
        format!(
            "2-bus {a2:.1e} (Vm/Va {v2:.1e}), 5-bus {a5:.1e} (Vm/Va {v5:.1e}), zero residual exact: {zero}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let net = fixtures::case5();
    let spec = ScenarioSpec {
        count: 5,
        seed: 4,
        ..ScenarioSpec::default()
    };
    let layout = Layout::canonical(&net);
    let sc = gen_load_scenarios(&net, &spec).unwrap();
    let data = synth_dataset(&net, &sc, &layout, &NoiseProfile::default(), 4).unwrap();
    let w = default_initial_weights(&layout);
    let tight = WlsOptions {
        tol: 1e-13,
        max_iter: 100,
        ..WlsOptions::default()
    };
    let g = accumulate_gradient(&net, &data, &w, &tight, SensitivityMode::default())
        .unwrap()
        .gradient;
    let f = |w: &WeightVector| -> f64 {
        data.records()
            .iter()
            .map(|r| {
                let x = wls_restore(&net, &r.z, w, &tight).unwrap().state;
                0.5 * train::squared_error(&x, &r.x_ac).unwrap()
            })
            .sum()
    };
    let delta = 1e-4;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..w.len() {
        let wi = w.as_slice()[i];
        let perturbed = |s: f64| {
            let mut v = w.as_slice().to_vec();
            v[i] = wi * (1.0 + s * delta);
            WeightVector::new(v).unwrap()
        };
        let fd = (f(&perturbed(1.0)) - f(&perturbed(-1.0))) / (2.0 * delta * wi);
        num += (fd - g[i]).powi(2);
        den += fd * fd;
    }
    let rel = (num / den).sqrt();
    check(
        rel < 1e-2,
        format!("relative error {rel:.2e} over {} weights", w.len()),
    )
}

fn criterion_5() -> Outcome {
    let cfg = TrainConfig::default();
    let w = WeightVector::new(vec![1e3, 1e4, 20.0, 5.0]).unwrap();
    let g = [0.3, -2.0, 1e-3, 4.0];
    let mut st = AdamState::new(4);
    let next = adam_step(&w, &mut st, &g, &cfg);
    let mut worst = 0.0f64;
    for i in 0..4 {
        let expect = w.as_slice()[i] - cfg.eta * g[i] / ((g[i] * g[i]).sqrt() + cfg.epsilon);
        worst = worst.max((next.as_slice()[i] - expect.max(cfg.w_floor)).abs());
    }
    let floor_ok = next.as_slice()[3] == cfg.w_floor;
    check(
        worst <= 1e-12 && floor_ok,
        format!("first step error {worst:.1e}, weight driven below floor clamped: {floor_ok}"),
    )
}

struct LpacRun {
    report: EvalReport,
    secs: f64,
    train: Dataset,
    test: Dataset,
}

fn lpac_pipeline() -> LpacRun {
    let start = Instant::now();
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
    let report = evaluate(&net, &test, &w0, Some(&w), &cfg.wls, true).unwrap();
    LpacRun {
        report,
        secs: start.elapsed().as_secs_f64(),
        train,
        test,
    }
}

fn loss_of(r: &EvalReport, m: Method) -> f64 {
    r.get(m).map(|x| x.loss).unwrap_or(f64::NAN)
}

fn criterion_6(run: &LpacRun) -> Outcome {
    let r = &run.report;
    let opt = loss_of(r, Method::WlsOpt);
    let init = loss_of(r, Method::WlsInit);
    let bench = loss_of(r, Method::Benchmark);
    let raw = loss_of(r, Method::Raw);
    check(
        run.train.len() == 400
            && run.test.len() == 100
            && opt < init
            && opt < bench
            && opt < raw
            && run.secs < 600.0,
        format!(
            "{}/{} split, opt {opt:.4} init {init:.4} benchmark {bench:.4} raw {raw:.4}, {:.0} s",
            run.train.len(),
            run.test.len(),
            run.secs
        ),
    )
}

fn criterion_7(run: &LpacRun) -> Outcome {
    let net = fixtures::case5();
    let counts = [50, 100, 200, 400];
    let curve = scenario_curve(&net, &run.train, &run.test, &counts, &TrainConfig::default()).unwrap();
    let ok = curve.windows(2).all(|p| p[1].1 <= 1.1 * p[0].1);
    let text: Vec<String> = curve.iter().map(|(n, l)| format!("{n}:{l:.4}")).collect();
    check(ok, format!("held-out loss {}", text.join(" ")))
}

fn criterion_8() -> Outcome {
    let net = fixtures::builtin("case118").unwrap();
    let layout = Layout::canonical(&net);
    let spec = ScenarioSpec {
        count: 10,
        seed: 8,
        ..ScenarioSpec::default()
    };
    let sc = gen_load_scenarios(&net, &spec).unwrap();
    let data = synth_dataset(&net, &sc, &layout, &NoiseProfile::default(), 8).unwrap();
    let w = default_initial_weights(&layout);
    let start = Instant::now();
    let mut converged = 0;
    for r in data.records() {
        converged += wls_restore(&net, &r.z, &w, &WlsOptions::default())
            .unwrap()
            .converged as usize;
    }
    let mean = start.elapsed().as_secs_f64() / data.len() as f64;
    check(
        mean < 1.0 && converged == data.len(),
        format!(
            "{converged}/{} converged, mean {mean:.3} s per scenario",
            data.len()
        ),
    )
}

fn criterion_9(run: &LpacRun) -> Outcome {
    let mut worst = 0.0f64;
    for (_, net) in fixtures::all().unwrap() {
        let layout = Layout::canonical(&net);
        let x_star = dispatch_state(&net, &proportional_dispatch(&net)).unwrap();
        let z = MeasurementSet::new(layout.clone(), eval_h(&net, &x_star, &layout).unwrap()).unwrap();
        let file = SolutionFile::from_measurements(&net, &z, SourceTag::Synthetic, None).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: SolutionFile = serde_json::from_str(&text).unwrap();
        let z = back.to_measurements(&net).unwrap();
        let op = match benchmark_restore(&net, &z) {
            Ok(op) => op,
            Err(e) => return Err(format!("{} buses: {e}", net.n_buses())),
        };
        for (b, bus) in net.buses().iter().enumerate() {
            if net.is_generator_bus(b) {
                worst = worst.max((op.state.vm()[b] - z.get(MeasurementKind::Vm(b)).unwrap()).abs());
                if b != net.slack() {
                    worst = worst.max((op.p_inj[b] - z.get(MeasurementKind::Pinj(b)).unwrap()).abs());
                }
            } else {
                worst = worst.max((op.p_inj[b] + bus.p_load).abs());
                worst = worst.max((op.q_inj[b] + bus.q_load).abs());
            }
        }
    }
    let bench = loss_of(&run.report, Method::Benchmark);
    let opt = loss_of(&run.report, Method::WlsOpt);
    check(
        worst < 1e-8 && bench > opt,
        format!("mismatch {worst:.1e} on all fixtures, LPAC loss benchmark {bench:.4} > opt {opt:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let mut worst_env = f64::NEG_INFINITY;
    let opts = LpacOptions::default();
    for (_, net) in fixtures::all().unwrap() {
        let lp = build_lpac(&net, &opts).unwrap();
        let ix = LpacIndex::new(&net);
        for k in 0..net.n_branches() {
            let (f, t) = net.branch_ends(k);
            let cols = [ix.phi(k), ix.theta(f), ix.theta(t)];
            let rows: Vec<_> = lp
                .constraints
                .iter()
                .filter(|c| {
                    c.coeffs.iter().any(|&(j, _)| j == ix.phi(k))
                        && c.coeffs.iter().all(|(j, _)| cols.contains(j))
                })
                .collect();
            let tmax = net.branches()[k].theta_max;
            for s in 0..1000 {
                let th = -tmax + 2.0 * tmax * s as f64 / 999.0;
                let mut x = vec![0.0; lp.n_vars()];
                x[ix.phi(k)] = th.cos();
                x[ix.theta(f)] = th;
                for c in &rows {
                    worst_env = worst_env.max(c.violation(&x));
                }
                worst_env = worst_env.max(lp.lower[ix.phi(k)] - th.cos());
            }
        }
    }
    // (case, objective from an independent LP solver)
    let reference = [("case5", 18624.029263774315), ("case14", 7796.958576326326)];
    let mut cert = Vec::new();
    let mut ok = worst_env <= 1e-12;
    for (name, objective) in reference {
        let net = fixtures::builtin(name).unwrap();
        let lp = build_lpac(&net, &opts).unwrap();
        let sol = simplex_solve(&lp).unwrap();
        let primal = lp.max_violation(&sol.x);
        let rel = (sol.objective - objective).abs() / objective;
        ok &= primal <= CERT_TOL && sol.min_reduced_cost >= -CERT_TOL && rel < 1e-9;
        cert.push(format!(
            "{name} primal {primal:.1e} reduced cost {:.1e} objective rel {rel:.1e}",
            sol.min_reduced_cost
        ));
    }
    check(
        ok,
        format!(
            "envelope violation {:.1e}; {}",
            worst_env.max(0.0),
            cert.join("; ")
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| match o {
        Ok(d) => println!("criterion {n:>2}: PASS  {d}"),
        Err(d) => {
            failed += 1;
            println!("criterion {n:>2}: FAIL  {d}");
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    let run = lpac_pipeline();
    report(6, criterion_6(&run));
    report(7, criterion_7(&run));
    report(8, criterion_8());
    report(9, criterion_9(&run));
    report(10, criterion_10());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
