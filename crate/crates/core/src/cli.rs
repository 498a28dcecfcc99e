//! Command-line front end.
//!
//! `spp --input FILE [flags]` runs a regularization path and writes
//! `path.jsonl`, `summary.csv`, `manifest.json` and `items.json` into the
//! output directory. `spp synth` writes a synthetic transaction list.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::oracle;
use crate::path::{run_path, Method, PathConfig, PathRecord, PathResult};
use crate::pattern_db::{parse_transactions, Format, ItemRemap, PatternDb};
use crate::task::Task;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "spp", version, about = "Safe pattern pruning for sparse pattern models")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in transaction-list format.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Libsvm,
    Tlist,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Libsvm => Format::Libsvm,
            FormatArg::Tlist => Format::Tlist,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Reg,
    Clf,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Reg => Task::Regression,
            TaskArg::Clf => Task::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Spp,
    Boosting,
    Naive,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Spp => Method::Spp,
            MethodArg::Boosting => Method::Boosting,
            MethodArg::Naive => Method::Naive,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Input dataset.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tlist")]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value = "reg")]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "spp")]
    pub method: MethodArg,
    /// Maximum pattern length.
    #[arg(long, default_value_t = 3)]
    pub maxpat: usize,
    /// Number of grid steps K (the path has K + 1 values).
    #[arg(long, default_value_t = 100)]
    pub nlambda: usize,
    /// λ_min / λ_max.
    #[arg(long = "lmin-ratio", default_value_t = 0.01)]
    pub lmin_ratio: f64,
    /// Duality-gap tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Output directory.
    #[arg(long, default_value = "spp-out")]
    pub out: PathBuf,
    /// Tree traversal threads; 1 is the reproducible mode.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Check every pattern's dual constraint after each solve.
    #[arg(long)]
    pub verify: bool,
    /// Write 0 for the timing fields so outputs are byte-comparable.
    #[arg(long)]
    pub no_timing: bool,
    /// Pattern cap of the naive method.
    #[arg(long, default_value_t = 5000)]
    pub naive_cap: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, value_enum, default_value = "reg")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(Error::Config(_)) => EXIT_USAGE,
            CliError::Run(e) if e.is_data_error() => EXIT_DATA,
            CliError::Run(_) => EXIT_SOLVER,
            CliError::Output { .. } => EXIT_IO,
        }
    }
}

fn output_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Some(Command::Synth(args)) => synth(args),
        None => run(&cli.run),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.n == 0 || args.d == 0 {
        return Err(CliError::Usage("--n and --d must be positive".into()));
    }
    let db = oracle::synthetic(args.n, args.d, args.task.into(), args.seed)?;
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(output_error(path))?;
            let mut out = BufWriter::new(file);
            db.write_tlist(&mut out)?;
            out.flush().map_err(output_error(path))?;
        }
        None => {
            let stdout = io::stdout();
            db.write_tlist(stdout.lock())?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightEntry {
    items: Vec<u64>,
    w: f64,
}

/// One line of `path.jsonl`.
#[derive(Debug, Serialize)]
struct JsonRecord {
    lambda: f64,
    bias: f64,
    weights: Vec<WeightEntry>,
    gap: f64,
    n_active: usize,
    n_kept: usize,
    nodes_visited: u64,
    nodes_pruned: u64,
    traverse_ms: f64,
    solve_ms: f64,
    primal: f64,
    dual: f64,
    epochs: usize,
    converged: bool,
    max_violation: Option<f64>,
}

impl JsonRecord {
    fn new(record: &PathRecord, remap: &ItemRemap, timing: bool) -> Self {
        let weights = record
            .model
            .weights
            .iter()
            .map(|(p, &w)| WeightEntry {
                items: p.items().iter().map(|&i| remap.raw(i)).collect(),
                w,
            })
            .collect();
        JsonRecord {
            lambda: record.lambda,
            bias: record.model.intercept,
            weights,
            gap: record.gap,
            n_active: record.n_active,
            n_kept: record.n_kept,
            nodes_visited: record.nodes_visited,
            nodes_pruned: record.nodes_pruned,
            traverse_ms: if timing { record.traverse_ms } else { 0.0 },
            solve_ms: if timing { record.solve_ms } else { 0.0 },
            primal: record.primal,
            dual: record.dual,
            epochs: record.epochs,
            converged: record.converged,
            max_violation: record.max_violation,
        }
    }
}

const CSV_HEADER: &str =
    "lambda,bias,gap,n_active,n_kept,nodes_visited,nodes_pruned,traverse_ms,solve_ms,primal,dual,epochs,converged,max_violation";

fn csv_row(r: &JsonRecord) -> String {
    let violation = r.max_violation.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.lambda,
        r.bias,
        r.gap,
        r.n_active,
        r.n_kept,
        r.nodes_visited,
        r.nodes_pruned,
        r.traverse_ms,
        r.solve_ms,
        r.primal,
        r.dual,
        r.epochs,
        r.converged,
        violation
    )
}

#[derive(Debug, Serialize)]
struct Fingerprint {
    path: String,
    bytes: u64,
    sha256: String,
    transactions: usize,
    items: usize,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig<'a> {
    input: String,
    format: Format,
    task: String,
    out: String,
    #[serde(flatten)]
    path: &'a PathConfig,
    timing: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: ResolvedConfig<'a>,
    dataset: Fingerprint,
    lambda_max: f64,
    records: usize,
    total_nodes_visited: u64,
    started_at: String,
    finished_at: String,
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let Some(input) = &args.input else {
        return Err(CliError::Usage("the following required argument was not provided: --input <INPUT>".into()));
    };
    if args.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let started_at = chrono::Utc::now();
    let task: Task = args.task.into();
    let format: Format = args.format.into();
    let config = PathConfig {
        num_lambdas: args.nlambda,
        lambda_min_ratio: args.lmin_ratio,
        tol: args.tol,
        maxpat: args.maxpat,
        method: args.method.into(),
        threads: args.threads,
        verify: args.verify,
        naive_cap: args.naive_cap,
        ..PathConfig::default()
    };

    let bytes = fs::read(input).map_err(Error::from)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Parse { line: 0, msg: format!("input is not UTF-8: {e}") })?;
    let db = parse_transactions(&text, format, task)?;
    log::info!("loaded {} transactions over {} items", db.n(), db.num_items());

    let result = run_path(&db, task, &config)?;

    fs::create_dir_all(&args.out).map_err(output_error(&args.out))?;
    write_path_files(&args.out, &db, &result, !args.no_timing)?;

    let fingerprint = Fingerprint {
        path: input.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
        transactions: db.n(),
        items: db.num_items(),
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: ResolvedConfig {
            input: input.display().to_string(),
            format,
            task: task.to_string(),
            out: args.out.display().to_string(),
            path: &config,
            timing: !args.no_timing,
        },
        dataset: fingerprint,
        lambda_max: result.lambda_max,
        records: result.records.len(),
        total_nodes_visited: result.total_nodes_visited(),
        started_at: started_at.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(output_error(path))
}

fn write_path_files(dir: &Path, db: &PatternDb, result: &PathResult, timing: bool) -> Result<(), CliError> {
    let records: Vec<JsonRecord> = result
        .records
        .iter()
        .map(|r| JsonRecord::new(r, db.remap(), timing))
        .collect();

    let jsonl = dir.join("path.jsonl");
    let mut out = BufWriter::new(File::create(&jsonl).map_err(output_error(&jsonl))?);
    for r in &records {
        let line = serde_json::to_string(r).expect("serializable");
        writeln!(out, "{line}").map_err(output_error(&jsonl))?;
    }
    out.flush().map_err(output_error(&jsonl))?;

    let csv = dir.join("summary.csv");
    let mut out = BufWriter::new(File::create(&csv).map_err(output_error(&csv))?);
    writeln!(out, "{CSV_HEADER}").map_err(output_error(&csv))?;
    for r in &records {
        writeln!(out, "{}", csv_row(r)).map_err(output_error(&csv))?;
    }
    out.flush().map_err(output_error(&csv))?;

    write_json(&dir.join("items.json"), db.remap())
}
