//! The `lmapprox` command line.
//!
//! Exit codes: 0 on success (including a non-converged `select-n`), 1 for
//! usage or validation errors, 2 for runtime failures (corpus, generator,
//! bridge, I/O).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::approximator::Probe;
use crate::corpus::{load_char_corpus, sample_positions, Split};
use crate::exec::Execution;
use crate::generators::{Generator, GeneratorSpec, DEFAULT_BATCH_LIMIT};
use crate::metrics::{self, EvalConfig, EvalError, EvalReport};
use crate::planner::{self, BoundQuery, EmpiricalPlan, EmpiricalSelection, PlanError};
use crate::seed::DEFAULT_SEED;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lmapprox", version, about = "Evaluate sample-only sequence generators as language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Samples per position that keep every estimate within gamma of the
    /// truth with probability 1 - epsilon (Hoeffding plus a union bound).
    PlanN {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        vocab_size: usize,
    },
    /// Score a generator on a corpus by approximate cross-entropy.
    Evaluate(EvaluateArgs),
    /// Pick N empirically from convergence curves on a position subset.
    SelectN(SelectArgs),
    /// Like select-n, but writes the averaged curve as CSV.
    Curve(SelectArgs),
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    /// builtin:uniform | builtin:markov:order=<k>:train=<path>[:pseudo=<x>] | external:cmd=<command>
    #[arg(long)]
    generator: String,
    /// Character corpus (a-z and space only).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Gold tokens of history passed to the generator.
    #[arg(long, default_value_t = metrics::DEFAULT_PREFIX_WINDOW)]
    prefix_window: usize,
    /// Worker threads; does not affect results.
    #[arg(long)]
    workers: Option<usize>,
    /// Largest sample request sent to an external generator.
    #[arg(long, default_value_t = DEFAULT_BATCH_LIMIT)]
    batch_limit: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: GeneratorArgs,
    #[arg(long, default_value = "all")]
    split: String,
    /// Monte-Carlo samples per position.
    #[arg(long, default_value_t = metrics::DEFAULT_N_SAMPLES)]
    n: usize,
    /// Uniform smoothing weight.
    #[arg(long, default_value_t = metrics::DEFAULT_SMOOTHING_ETA)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    start: usize,
    #[arg(long)]
    end: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Also write per-position losses as CSV.
    #[arg(long)]
    per_position: Option<PathBuf>,
    /// Also score with the exact distribution when the generator has one.
    #[arg(long)]
    true_bpc: bool,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    common: GeneratorArgs,
    /// Split the probe positions are drawn from.
    #[arg(long, default_value = "validation")]
    split: String,
    #[arg(long, default_value_t = planner::DEFAULT_ALPHA)]
    alpha: usize,
    #[arg(long, default_value_t = planner::DEFAULT_GAMMA_PRIME)]
    gamma_prime: f64,
    #[arg(long, default_value_t = planner::DEFAULT_N_MAX)]
    n_max: usize,
    #[arg(long, default_value_t = planner::DEFAULT_SUBSET_SIZE)]
    subset_size: usize,
    /// Write the averaged curve (`n,error`) here. `curve` prints it to
    /// stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Runtime(m) => m,
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) | EvalError::NoPositions | EvalError::GoldTooShort(_) => {
                Self::Usage(e.to_string())
            }
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::InvalidBoundQuery(_) | PlanError::InvalidPlan(_) | PlanError::NoPositions => {
                Self::Usage(e.to_string())
            }
            _ => Self::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::PlanN { gamma, epsilon, vocab_size } => plan_n(gamma, epsilon, vocab_size),
        Command::Evaluate(args) => evaluate(args),
        Command::SelectN(args) => select(args, false),
        Command::Curve(args) => select(args, true),
    }
}

fn plan_n(gamma: f64, epsilon: f64, vocab_size: usize) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Out {
        gamma: f64,
        epsilon: f64,
        vocab_size: usize,
        n: u64,
    }
    let query = BoundQuery::new(gamma, epsilon, vocab_size)?;
    let n = planner::hoeffding_bound_n(&query)?;
    println!("{n}");
    println!("{}", serde_json::to_string(&Out { gamma, epsilon, vocab_size, n }).map_err(runtime)?);
    Ok(())
}

fn check_common(c: &GeneratorArgs) -> Result<(GeneratorSpec, usize), Failure> {
    let spec: GeneratorSpec = c.generator.parse().map_err(usage)?;
    if c.batch_limit == 0 {
        return Err(usage("--batch-limit must be at least 1"));
    }
    if c.prefix_window == 0 {
        return Err(usage("--prefix-window must be at least 1"));
    }
    let workers = match c.workers {
        Some(0) => return Err(usage("--workers must be at least 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok((spec, workers))
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_or_print(out, &text)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("writing {}: {e}", path.display()))),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(runtime),
    }
}

#[derive(Serialize)]
struct EvaluateConfigEcho<'a> {
    generator: String,
    corpus: &'a Path,
    split: String,
    #[serde(flatten)]
    eval: &'a EvalConfig,
    batch_limit: usize,
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_report: Option<&'a EvalReport>,
    config: EvaluateConfigEcho<'a>,
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let (spec, workers) = check_common(&args.common)?;
    let split: Split = args.split.parse().map_err(usage)?;
    let cfg = EvalConfig {
        n_samples: args.n,
        smoothing_eta: args.eta,
        prefix_window: args.common.prefix_window,
        seed: args.common.seed,
        start: args.start,
        end: args.end,
        stride: args.stride,
        record_per_position: false,
    };
    cfg.validate()?;

    let corpus = load_char_corpus(&args.common.corpus).map_err(runtime)?;
    let gold = corpus.split(split);
    let gen = spec.build(corpus.vocab(), args.common.batch_limit).map_err(runtime)?;

    let (report, true_report) = Execution::install(workers, |exec| -> Result<_, Failure> {
        let report = metrics::evaluate(gen.as_ref(), &gold, &cfg, exec)?;
        let true_report = if !args.true_bpc {
            None
        } else if gen.supports_true_dist() {
            Some(metrics::evaluate_true(gen.as_ref(), &gold, &cfg, exec)?)
        } else {
            eprintln!("note: generator has no exact distribution; skipping --true-bpc");
            None
        };
        Ok((report, true_report))
    })?;

    if let Some(path) = &args.per_position {
        write_or_print(Some(path), &report.per_position_csv())?;
    }
    let output = EvaluateOutput {
        report: &report,
        true_report: true_report.as_ref(),
        config: EvaluateConfigEcho {
            generator: spec.to_string(),
            corpus: &args.common.corpus,
            split: split.to_string(),
            eval: &cfg,
            batch_limit: args.common.batch_limit,
        },
    };
    emit_json(args.common.out.as_deref(), &output)?;

    match &true_report {
        Some(t) => eprintln!(
            "bpc {:.4}  approx bpc {:.4}  ppl {:.4}  zero-gold {}  N {}  positions {}",
            t.bpc, report.bpc, report.perplexity, report.zero_gold_events, report.n_used, report.token_count
        ),
        None => eprintln!(
            "approx bpc {:.4}  ppl {:.4}  zero-gold {}  N {}  positions {}",
            report.bpc, report.perplexity, report.zero_gold_events, report.n_used, report.token_count
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectConfigEcho<'a> {
    generator: String,
    corpus: &'a Path,
    split: String,
    seed: u64,
    prefix_window: usize,
    batch_limit: usize,
    #[serde(flatten)]
    plan: &'a EmpiricalPlan,
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    #[serde(flatten)]
    selection: &'a EmpiricalSelection,
    positions: &'a [usize],
    config: SelectConfigEcho<'a>,
}

fn select(args: SelectArgs, curve_to_stdout: bool) -> Result<(), Failure> {
    let (spec, workers) = check_common(&args.common)?;
    let split: Split = args.split.parse().map_err(usage)?;
    let plan = EmpiricalPlan {
        alpha: args.alpha,
        gamma_prime: args.gamma_prime,
        n_max: args.n_max,
        subset_size: args.subset_size,
    };
    plan.validate()?;

    let corpus = load_char_corpus(&args.common.corpus).map_err(runtime)?;
    let tokens = corpus.split(split);
    let positions = sample_positions(&corpus, split, plan.subset_size, args.common.seed).map_err(usage)?;
    let gen: Box<dyn Generator> = spec.build(corpus.vocab(), args.common.batch_limit).map_err(runtime)?;
    let probes: Vec<Probe<'_>> = positions
        .iter()
        .map(|&position| Probe { position, prefix: tokens.history(position, args.common.prefix_window) })
        .collect();

    let selection = Execution::install(workers, |exec| {
        planner::select_n_empirical(gen.as_ref(), &probes, &plan, args.common.seed, exec)
    })?;

    let csv = selection.curve.to_csv();
    match (&args.csv, curve_to_stdout) {
        (Some(path), _) => write_or_print(Some(path), &csv)?,
        (None, true) => write_or_print(None, &csv)?,
        (None, false) => {}
    }
    let output = SelectOutput {
        selection: &selection,
        positions: &positions,
        config: SelectConfigEcho {
            generator: spec.to_string(),
            corpus: &args.common.corpus,
            split: split.to_string(),
            seed: args.common.seed,
            prefix_window: args.common.prefix_window,
            batch_limit: args.common.batch_limit,
            plan: &plan,
        },
    };
    // `curve` keeps stdout for the CSV; its JSON goes to --out only.
    if !curve_to_stdout || args.common.out.is_some() {
        emit_json(args.common.out.as_deref(), &output)?;
    }

    match selection.chosen_n {
        Some(n) => {
            eprintln!("converged: N = {n} (gamma' = {}, {} positions)", plan.gamma_prime, selection.positions_used)
        }
        None => {
            eprintln!("not converged: error stayed at or above gamma' = {} up to N = {}", plan.gamma_prime, plan.n_max)
        }
    }
    Ok(())
}
