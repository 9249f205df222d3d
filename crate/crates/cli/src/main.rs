use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Restore AC-feasible operating points from relaxed or approximated OPF
/// solutions.
#[derive(Parser, Debug)]
#[command(name = "pfrestore", version)]
struct Cli {
    /// Worker threads for scenario-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CaseArg {
    /// Case file, or the name of a built-in case (case5, case14, case57, case118).
    #[arg(long)]
    case: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a case; optionally write it back in canonical form.
    Parse {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AC power flow at proportional dispatch, or the AC-OPF with --opf.
    Pf {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long)]
        opf: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the LPAC approximation and write it as a solution file.
    Lpac {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long, default_value_t = 9)]
        tangents: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scenario dataset.
    Scenarios(ScenarioArgs),
    /// Restore solution files.
    Restore(RestoreArgs),
    /// Train measurement weights on a dataset.
    Train(TrainArgs),
    /// Compare restoration methods on the test part of a dataset.
    Eval(EvalArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Source {
    Synthetic,
    Lpac,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Truth {
    Acopf,
    Dispatch,
    Benchmark,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RestoreMethod {
    Wls,
    Benchmark,
    Raw,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Source::Lpac)]
    source: Source,
    /// Ground truth for LPAC records without an external state file.
    #[arg(long, value_enum, default_value_t = Truth::Acopf)]
    truth: Truth,
    /// Build the dataset from solution files in this directory instead of
    /// generating scenarios. `NAME.truth.json` state files supply ground truth.
    #[arg(long)]
    solutions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    #[command(flatten)]
    case: CaseArg,
    /// A solution file or a directory of them.
    #[arg(long)]
    solutions: PathBuf,
    #[arg(long, value_enum, default_value_t = RestoreMethod::Wls)]
    method: RestoreMethod,
    /// `init` or a weight file.
    #[arg(long, default_value = "init")]
    weights: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Output directory; a single restored state goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Dataset directory; training uses its leading train split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Starting weights: `init` or a weight file.
    #[arg(long, default_value = "init")]
    weights: String,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 10.0)]
    eta: f64,
    /// Seed for mini-batch sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Records per iteration (default: the whole train split).
    #[arg(long)]
    batch: Option<usize>,
    /// Accumulate gradients in one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    data: PathBuf,
    /// Trained weight file.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Training-set sizes for the loss curve, comma separated (default:
    /// 1/8, 1/4, 1/2 and all of the train split).
    #[arg(long, value_delimiter = ',')]
    curve: Option<Vec<usize>>,
    #[arg(long)]
    no_curve: bool,
    /// Adam iterations per curve point.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 10.0)]
    eta: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[argument]: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
