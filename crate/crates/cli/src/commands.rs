use std::fs;
use std::path::{Path, PathBuf};

use pfrestore::eval::{evaluate, raw_state, scenario_curve, Method};
use pfrestore::formats::{
    atomic_write, read_dataset, read_weights, write_dataset, write_json, write_trace, write_weights,
    DatasetInfo, GenEntry, SolutionFile, StateFile,
};
use pfrestore::lpac::solve_lpac;
use pfrestore::opf::{solve_acopf, AcOpfOptions};
use pfrestore::scenarios::{dispatch_state, proportional_dispatch, TruthRule};
use pfrestore::{
    benchmark_restore, build_lpac_dataset, default_initial_weights, fixtures, gen_load_scenarios,
    lpac_to_measurements, parse_case, synth_dataset, train_weights, wls_restore, write_case, Dataset, Error,
    Layout, LpacOptions, MeasurementSet, Network, NoiseProfile, Result, ScenarioRecord, ScenarioSpec,
    SourceTag, StateVector, TrainConfig, WeightVector, WlsOptions,
};

use crate::{Command, EvalArgs, RestoreArgs, RestoreMethod, ScenarioArgs, Source, TrainArgs, Truth};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Parse { case, out } => parse(&case.case, out.as_deref()),
        Command::Pf { case, opf, tol, out } => pf(&case.case, opf, tol, out.as_deref()),
        Command::Lpac { case, tangents, out } => lpac(&case.case, tangents, out.as_deref()),
        Command::Scenarios(a) => scenarios(&a),
        Command::Restore(a) => restore(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn load_case(spec: &str) -> Result<Network> {
    let path = Path::new(spec);
    if path.exists() {
        return parse_case(&fs::read_to_string(path)?);
    }
    fixtures::builtin(spec)
        .ok_or_else(|| Error::InvalidArgument(format!("no case file or built-in case named '{spec}'")))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "--{name} must be positive, got {v}"
        )))
    }
}

fn wls_options(tol: f64) -> Result<WlsOptions> {
    positive("tol", tol)?;
    Ok(WlsOptions {
        tol,
        ..WlsOptions::default()
    })
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn parse(case: &str, out: Option<&Path>) -> Result<()> {
    let net = load_case(case)?;
    println!(
        "{} buses, {} branches, {} generators, base {} MVA, hash {}",
        net.n_buses(),
        net.n_branches(),
        net.generators().len(),
        net.base_mva(),
        net.hash()
    );
    if let Some(p) = out {
        atomic_write(p, write_case(&net).as_bytes())?;
    }
    Ok(())
}

fn pf(case: &str, opf: bool, tol: f64, out: Option<&Path>) -> Result<()> {
    let net = load_case(case)?;
    positive("tol", tol)?;
    let (state, method) = if opf {
        let sol = solve_acopf(
            &net,
            &AcOpfOptions {
                tol,
                ..AcOpfOptions::default()
            },
        )?;
        eprintln!(
            "AC-OPF cost {:.6} after {} iterations",
            sol.objective, sol.iterations
        );
        (sol.state, "acopf")
    } else {
        (dispatch_state(&net, &proportional_dispatch(&net))?, "pf")
    };
    emit_json(out, &StateFile::new(&net, method, &state))
}

fn lpac_file(net: &Network, opts: &LpacOptions) -> Result<SolutionFile> {
    let sol = solve_lpac(net, opts)?;
    let z = lpac_to_measurements(net, &sol)?;
    let mut file = SolutionFile::from_measurements(net, &z, SourceTag::Lpac, Some(&sol.loads))?;
    file.generators = Some(
        sol.p_g
            .iter()
            .zip(&sol.q_g)
            .enumerate()
            .map(|(g, (&p_g, &q_g))| GenEntry {
                index: g + 1,
                p_g,
                q_g,
            })
            .collect(),
    );
    eprintln!("LPAC cost {:.6}", sol.objective);
    Ok(file)
}

fn lpac(case: &str, tangents: usize, out: Option<&Path>) -> Result<()> {
    let net = load_case(case)?;
    let opts = LpacOptions {
        n_cos_tangents: tangents,
        ..LpacOptions::default()
    };
    emit_json(out, &lpac_file(&net, &opts)?)
}

/// Solution files in `dir` (sorted), skipping ground-truth state files.
fn solution_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".truth.json") && !name.ends_with(".state.json")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no solution files in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

fn truth_path(solution: &Path) -> PathBuf {
    let stem = solution.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    solution.with_file_name(format!("{stem}.truth.json"))
}

fn rule(t: Truth) -> TruthRule {
    match t {
        Truth::Acopf => TruthRule::AcOpf,
        Truth::Dispatch => TruthRule::Dispatch,
        Truth::Benchmark => TruthRule::Benchmark,
    }
}

fn truth_for(net: &Network, z: &MeasurementSet, t: Truth) -> Result<StateVector> {
    match t {
        Truth::Acopf => Ok(solve_acopf(net, &AcOpfOptions::default())?.state),
        Truth::Dispatch => dispatch_state(net, &proportional_dispatch(net)),
        Truth::Benchmark => Ok(benchmark_restore(net, z)?.state),
    }
}

fn external_dataset(net: &Network, dir: &Path, truth: Truth) -> Result<Dataset> {
    let mut layout: Option<Layout> = None;
    let mut records = Vec::new();
    for path in solution_paths(dir)? {
        let file = SolutionFile::read(&path)?;
        let z = file.to_measurements(net)?;
        let loads = file.loads(net)?;
        let net_s = net.with_loads(&loads)?;
        let tp = truth_path(&path);
        let x_ac = if tp.exists() {
            StateFile::read(&tp)?.state(net)?
        } else {
            truth_for(&net_s, &z, truth)?
        };
        match &layout {
            None => layout = Some(z.layout().clone()),
            Some(l) if l != z.layout() => {
                return Err(Error::InvalidArgument(format!(
                    "{} measures a different set of quantities than the files before it",
                    path.display()
                )))
            }
            _ => {}
        }
        records.push(ScenarioRecord {
            loads,
            x_ac,
            z,
            source: file.formulation,
        });
    }
    Dataset::new(layout.expect("at least one solution file"), records)
}

fn scenarios(a: &ScenarioArgs) -> Result<()> {
    let net = load_case(&a.case.case)?;
    let spec = ScenarioSpec {
        count: a.count,
        sigma: a.sigma,
        seed: a.seed,
        train_fraction: a.train_fraction,
    };
    spec.validate()?;
    let (data, source) = match &a.solutions {
        Some(dir) => {
            let d = external_dataset(&net, dir, a.truth)?;
            let src = d.records().first().map_or(SourceTag::Lpac, |r| r.source);
            (d, src)
        }
        None => {
            let sc = gen_load_scenarios(&net, &spec)?;
            match a.source {
                Source::Synthetic => (
                    synth_dataset(
                        &net,
                        &sc,
                        &Layout::canonical(&net),
                        &NoiseProfile::default(),
                        a.seed,
                    )?,
                    SourceTag::Synthetic,
                ),
                Source::Lpac => (
                    build_lpac_dataset(&net, &sc, &LpacOptions::default(), rule(a.truth), None)?,
                    SourceTag::Lpac,
                ),
            }
        }
    };
    let info = DatasetInfo {
        source,
        seed: a.seed,
        sigma: a.sigma,
        train_fraction: a.train_fraction,
    };
    write_dataset(&a.out, &net, &data, &info)?;
    let (train, test) = data.split(a.train_fraction);
    println!(
        "{} records ({} train, {} test) in {}",
        data.len(),
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

/// `init` gives the default weights for `layout`; anything else is a weight
/// file whose layout must equal `layout`.
fn weights_for(spec: &str, net: &Network, layout: &Layout) -> Result<WeightVector> {
    if spec == "init" {
        return Ok(default_initial_weights(layout));
    }
    let (file_layout, w) = read_weights(Path::new(spec), net)?;
    if &file_layout != layout {
        return Err(Error::InvalidArgument(format!(
            "weights in {spec} are for a different measurement layout"
        )));
    }
    Ok(w)
}

fn restore(a: &RestoreArgs) -> Result<()> {
    let net = load_case(&a.case.case)?;
    let opts = wls_options(a.tol)?;
    let paths = if a.solutions.is_dir() {
        solution_paths(&a.solutions)?
    } else {
        vec![a.solutions.clone()]
    };
    if paths.len() > 1 && a.out.is_none() {
        return Err(Error::InvalidArgument(
            "--out is required for more than one solution file".into(),
        ));
    }
    for path in &paths {
        let file = SolutionFile::read(path)?;
        let z = file.to_measurements(&net)?;
        let net_s = net.with_loads(&file.loads(&net)?)?;
        let state_file = match a.method {
            RestoreMethod::Raw => StateFile::new(&net, "raw", &raw_state(&net, &z)?),
            RestoreMethod::Benchmark => {
                StateFile::new(&net, "benchmark", &benchmark_restore(&net_s, &z)?.state)
            }
            RestoreMethod::Wls => {
                let w = weights_for(&a.weights, &net, z.layout())?;
                let res = wls_restore(&net, &z, &w, &opts)?;
                if !res.converged {
                    log::warn!(
                        "{}: WLS stopped after {} iterations",
                        path.display(),
                        res.iterations
                    );
                }
                let mut f = StateFile::new(&net, "wls", &res.state);
                f.iterations = Some(res.iterations);
                f.converged = Some(res.converged);
                f
            }
        };
        match &a.out {
            Some(dir) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("solution");
                write_json(&dir.join(format!("{stem}.state.json")), &state_file)?;
            }
            None => emit_json(None, &state_file)?,
        }
    }
    if let Some(dir) = &a.out {
        println!("restored {} file(s) into {}", paths.len(), dir.display());
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let net = load_case(&a.case.case)?;
    let (data, man) = read_dataset(&a.data, &net)?;
    let (train, _) = data.split(man.train_fraction);
    let w_init = weights_for(&a.weights, &net, train.layout())?;
    let cfg = TrainConfig {
        eta: a.eta,
        max_iter: a.iters,
        w_init: Some(w_init),
        rng_seed: a.seed,
        batch_size: a.batch,
        parallel: !a.sequential,
        wls: wls_options(a.tol)?,
        ..TrainConfig::default()
    };
    let (w, trace) = train_weights(&net, &train, &cfg)?;
    fs::create_dir_all(&a.out)?;
    write_weights(&a.out.join("weights.json"), &net, train.layout(), &w)?;
    write_trace(&a.out.join("trace.csv"), &trace)?;
    match (trace.entries.first(), trace.entries.last()) {
        (Some(f), Some(l)) => println!(
            "{} iterations on {} records: loss {:.6e} -> {:.6e}",
            trace.entries.len(),
            train.len(),
            f.loss,
            l.loss
        ),
        _ => println!("no iterations; initial weights written"),
    }
    Ok(())
}

fn default_curve(n: usize) -> Vec<usize> {
    let mut c: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&k| k > 0).collect();
    c.dedup();
    c
}

fn eval(a: &EvalArgs) -> Result<()> {
    let net = load_case(&a.case.case)?;
    let (data, man) = read_dataset(&a.data, &net)?;
    let (train, test) = data.split(man.train_fraction);
    if test.is_empty() {
        return Err(Error::InvalidArgument("dataset has no test records".into()));
    }
    let opts = wls_options(a.tol)?;
    let w0 = default_initial_weights(test.layout());
    let w_opt = match &a.weights {
        Some(p) => Some(weights_for(&p.display().to_string(), &net, test.layout())?),
        None => None,
    };
    let report = evaluate(&net, &test, &w0, w_opt.as_ref(), &opts, true)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    atomic_write(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    for m in [Method::Raw, Method::Benchmark, Method::WlsInit, Method::WlsOpt] {
        if let Some(r) = report.get(m) {
            println!(
                "{:<10} loss {:.6e}  mean {:.3e} s  failed {}",
                m.as_str(),
                r.loss,
                r.mean_time_s,
                r.failed
            );
        }
    }
    if !a.no_curve && !train.is_empty() {
        let counts = a.curve.clone().unwrap_or_else(|| default_curve(train.len()));
        let cfg = TrainConfig {
            eta: a.eta,
            max_iter: a.iters,
            wls: opts,
            ..TrainConfig::default()
        };
        let curve = scenario_curve(&net, &train, &test, &counts, &cfg)?;
        let mut csv = String::from("scenarios,loss\n");
        for (n, l) in &curve {
            csv.push_str(&format!("{n},{l:e}\n"));
        }
        atomic_write(&a.out.join("curve.csv"), csv.as_bytes())?;
    }
    Ok(())
}
