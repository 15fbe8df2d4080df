//! Command-line front end. `main.rs` only forwards to [`run`].

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::configset::{load_collection, postprocess, save_collection, ConfigCollection};
use crate::error::{Error, Result};
use crate::gate::{load_features, save_model, train, TrainCfg};
use crate::routing::{evaluate, EvalReport};
use crate::runtime::{route_jsonl, StreamRouter, DEFAULT_HYSTERESIS, DEFAULT_WINDOW};
use crate::search::{grid_points, search_collection, SearchParams, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_DELTA};
use crate::synth::synth_trace;
use crate::trace::{expert_stats, load_trace, write_trace, TraceSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "orxe", version, about = "Build, tune and run confidence-gated expert cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic trace.
    Synth(SynthArgs),
    /// Check a trace file and print per-expert statistics.
    Validate(ValidateArgs),
    /// Search one configuration per preference value.
    Search(SearchArgs),
    /// Pareto-filter, interpolate and monotonic-filter a collection.
    Postprocess(PostprocessArgs),
    /// Evaluate a collection on a trace and write a CSV report.
    Eval(EvalArgs),
    /// Route trace-format samples from stdin, one outcome line per sample on stdout.
    Route(RouteArgs),
    /// Train a pairwise ranking gate on a feature dataset.
    TrainGate(TrainGateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    experts: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    skew: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Preference grid as START:END:STEP.
    #[arg(long, default_value = "0:1:0.01", value_parser = parse_range)]
    lambdas: LambdaGrid,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for the search (defaults to all cores).
    #[arg(long, env = "ORXE_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    interp_step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    configs: PathBuf,
    /// Only report the entry nearest to this preference.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RouteArgs {
    #[arg(long)]
    configs: PathBuf,
    #[arg(long, conflicts_with = "budget")]
    lambda: Option<f64>,
    /// Target mean cost per sample; enables the budget controller.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WINDOW, requires = "budget")]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_HYSTERESIS, requires = "budget")]
    hysteresis: f64,
}

#[derive(Debug, Args)]
struct TrainGateArgs {
    #[arg(long)]
    features: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "16", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct LambdaGrid(Vec<f64>);

fn parse_range(s: &str) -> std::result::Result<LambdaGrid, String> {
    parse_grid(s).map(LambdaGrid)
}

/// Parses `START:END:STEP` (or a single value) into the grid it denotes.
fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = match parts.as_slice() {
        [a, b, c] => [a, b, c]
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?,
        [single] => {
            let v = single.trim().parse::<f64>().map_err(|e| format!("`{single}`: {e}"))?;
            return Ok(vec![v]);
        }
        _ => return Err(format!("expected START:END:STEP, got `{s}`")),
    };
    grid_points(nums[0], nums[1], nums[2]).map_err(|e| e.to_string())
}

/// Runs the command line with explicit arguments and standard streams.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn dispatch(command: Command, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let trace = synth_trace(a.experts, a.samples, a.seed, a.skew)?;
            write_trace(&trace, &a.out)
        }
        Command::Validate(a) => cmd_validate(&a.trace, stdout),
        Command::Search(a) => cmd_search(a),
        Command::Postprocess(a) => {
            let collection = load_collection(&a.input)?;
            let trace = load_trace(&a.trace)?;
            let processed = postprocess(&collection, &trace, a.interp_step)?;
            log::info!("{} entries in, {} out", collection.len(), processed.len());
            save_collection(&processed, &a.out)
        }
        Command::Eval(a) => cmd_eval(a),
        Command::Route(a) => cmd_route(a, stdin, stdout),
        Command::TrainGate(a) => {
            let rows = load_features(&a.features)?;
            let cfg = TrainCfg {
                hidden: a.hidden,
                batch_size: a.batch,
                learning_rate: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                init_scale: a.init_scale,
            };
            let report = train(&rows, &cfg)?;
            log::info!(
                "pairwise loss {:.6} -> {:.6}",
                report.initial_loss,
                report.final_loss
            );
            save_model(&report.model, &a.out)
        }
    }
}

fn out_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_validate(path: &Path, stdout: &mut dyn Write) -> Result<()> {
    let trace = load_trace(path)?;
    writeln!(
        stdout,
        "{}: {} experts, {} samples, {}",
        path.display(),
        trace.n_experts(),
        trace.n_samples(),
        trace.trace_id()
    )
    .map_err(out_err)?;
    for s in expert_stats(&trace) {
        writeln!(
            stdout,
            "  [{}] {:<16} cost {:<12} mean_perf {:.6}  conf histogram {:?}",
            s.index, s.name, s.cost, s.mean_perf, s.conf_histogram
        )
        .map_err(out_err)?;
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let trace = load_trace(&a.trace)?;
    let params = SearchParams {
        delta: a.delta,
        alpha: a.alpha,
        beta: a.beta,
        lambda_grid: a.lambdas.0,
        ..SearchParams::default()
    };
    let collection = match a.threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| search_collection(&trace, &params))?,
        None => search_collection(&trace, &params)?,
    };
    save_collection(&collection, &a.out)
}

/// CSV with one row per entry: preference, the evaluation report and the
/// per-node exit counts. Floats use shortest round-trip formatting.
pub fn write_eval_csv<W: Write>(
    trace: &TraceSet,
    rows: &[(f64, EvalReport)],
    mut out: W,
) -> io::Result<()> {
    write!(out, "lambda,mean_cost_raw,mean_cost_norm,perf,mean_exit_conf")?;
    for i in 0..trace.n_experts() {
        write!(out, ",exit_{i}")?;
    }
    writeln!(out)?;
    for (lambda, r) in rows {
        write!(
            out,
            "{lambda:?},{:?},{:?},{:?},{:?}",
            r.mean_cost_raw, r.mean_cost_norm, r.perf, r.mean_exit_conf
        )?;
        for n in &r.n_exit {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Re-evaluates the selected entries of `collection` on `trace`.
pub fn eval_rows(
    trace: &TraceSet,
    collection: &ConfigCollection,
    lambda: Option<f64>,
) -> Result<Vec<(f64, EvalReport)>> {
    let selected: Vec<usize> = match lambda {
        None => (0..collection.len()).collect(),
        Some(l) => {
            let i = collection
                .nearest_index(l)
                .ok_or_else(|| Error::InvalidCollection("collection has no entries".into()))?;
            let found = collection.entries[i].lambda();
            if found != l {
                log::warn!("lambda {l} is not in the collection; using nearest entry {found}");
            }
            vec![i]
        }
    };
    selected
        .into_iter()
        .map(|i| {
            let c = &collection.entries[i].config;
            Ok((c.lambda, evaluate(trace, c)?))
        })
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let trace = load_trace(&a.trace)?;
    let collection = load_collection(&a.configs)?;
    if collection.experts.len() != trace.n_experts() {
        return Err(Error::Dimension {
            what: "experts in collection vs trace",
            expected: collection.experts.len(),
            found: trace.n_experts(),
        });
    }
    if collection.check_trace(&trace).is_err() {
        log::info!("evaluating on a trace other than the calibration trace");
    }
    let rows = eval_rows(&trace, &collection, a.lambda)?;
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_eval_csv(&trace, &rows, BufWriter::new(file)).map_err(|e| Error::io(&a.out, e))
}

fn cmd_route(a: RouteArgs, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<()> {
    let collection = load_collection(&a.configs)?;
    let router = match a.budget {
        Some(budget) => StreamRouter::for_budget(collection, budget, a.window, a.hysteresis)?,
        None => {
            let lambda = a.lambda.unwrap_or(1.0);
            let router = StreamRouter::new(collection, lambda)?;
            let chosen = router.current().config.lambda;
            if a.lambda.is_some() && chosen != lambda {
                log::warn!("lambda {lambda} is not in the collection; using nearest entry {chosen}");
            }
            router
        }
    };
    let mut router = router;
    let n = route_jsonl(&mut router, BufReader::new(stdin), BufWriter::new(stdout))?;
    log::info!("routed {n} samples");
    Ok(())
}
