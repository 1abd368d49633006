//! `adasplit` command-line tool.
//!
//! Exit codes: 0 success, 1 internal error, 2 input error, 3 config error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adasplit_core::io::{read_csv_path, write_trace_csv, CsvOptions};
use adasplit_core::simlab::{reproduce_table, run_method, simulate, Method, Replication, Scenario};
use adasplit_core::{partition_by_quantiles, AdaSplitConfig, AnalysisReport, Error};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "adasplit", version, about = "Adaptive sample splitting for subgroup randomization tests")]
struct Cli {
    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true, env = "ADASPLIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one dataset.
    Analyze(AnalyzeArgs),
    /// Run every method on replications of a synthetic scenario.
    Simulate(SimulateArgs),
    /// Regenerate one of the simulation tables.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV with columns `y`, `z`, covariates, and optionally `e`.
    #[arg(long)]
    data: PathBuf,
    /// JSON file overriding configuration defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Column holding integer subgroup labels.
    #[arg(long, conflicts_with_all = ["quantile_cuts", "on"])]
    subgroup_column: Option<String>,
    /// Comma-separated quantile cuts in (0,1) defining subgroups.
    #[arg(long, value_delimiter = ',', requires = "on")]
    quantile_cuts: Option<Vec<f64>>,
    /// Covariate the quantile cuts apply to.
    #[arg(long, requires = "quantile_cuts")]
    on: Option<String>,
    /// One of adasplit, random_split, rt.
    #[arg(long, default_value = "adasplit")]
    method: String,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// One of default, larger_n, high_noise, null, toy_fig3.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-replication CSV; the summary goes next to it as `<stem>.summary.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    table: u8,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::InvalidCuts
            | Error::KernelTooLarge { .. }
            | Error::InitialProportionTooLarge { .. }
            | Error::TooManyHypotheses { .. } => 3,
            Error::EmptyDataset
            | Error::NonBinaryAssignment { .. }
            | Error::NonFinite { .. }
            | Error::InvalidDesignProbability { .. }
            | Error::NoCovariates
            | Error::ColumnOutOfRange { .. }
            | Error::EmptySubgroup { .. }
            | Error::InvalidPartition(_)
            | Error::UnsupportedDesign(_)
            | Error::UnknownScenario(_)
            | Error::SingularDesign
            | Error::FoldTooSmall { .. }
            | Error::Csv(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<AdaSplitConfig> {
    let config = match path {
        None => AdaSplitConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::config(format!("invalid config {}: {e}", p.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()
        .map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct InputSummary<'a> {
    path: &'a Path,
    n: usize,
    d: usize,
    covariates: &'a [String],
    subgroups: usize,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema: u32,
    input: InputSummary<'a>,
    #[serde(flatten)]
    report: &'a AnalysisReport,
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let method: Method = args.method.parse().map_err(|e: Error| Failure::config(e.to_string()))?;

    let options = CsvOptions {
        subgroup_column: args.subgroup_column.clone().unwrap_or_else(|| "subgroup".into()),
        require_subgroup: args.subgroup_column.is_some(),
    };
    let input = read_csv_path(&args.data, &options)?;
    let dataset = &input.dataset;
    let partition = match (&args.quantile_cuts, &args.on) {
        (Some(cuts), Some(on)) => {
            let column = dataset
                .covariate_names()
                .iter()
                .position(|c| c == on)
                .ok_or_else(|| Failure::input(format!("unknown covariate `{on}`")))?;
            partition_by_quantiles(dataset, column, cuts)?
        }
        _ => match input.partition() {
            Some(p) => p?,
            None => adasplit_core::SubgroupPartition::single(dataset.n()),
        },
    };

    let report = run_method(method, dataset, &partition, &config)?;
    let file = ReportFile {
        schema: SCHEMA,
        input: InputSummary {
            path: &args.data,
            n: dataset.n(),
            d: dataset.d(),
            covariates: dataset.covariate_names(),
            subgroups: partition.k(),
        },
        report: &report,
    };
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| Failure::internal(e.to_string()))?;
    writeln!(w).map_err(|e| Failure::internal(e.to_string()))?;
    finish(w, &args.out)?;

    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        write_trace_csv(&mut w, &report.trace, partition.k())?;
        finish(w, path)?;
    }
    for (k, p) in report.pvalues.iter().enumerate() {
        let mark = if report.rejected.contains(k) { " *" } else { "" };
        println!("G{}\tp = {p:.4}{mark}", k + 1);
    }
    Ok(())
}

fn write_replications(path: &Path, runs: &[Replication], k: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["replication".to_string(), "method".to_string()];
    header.extend((1..=k).map(|g| format!("p_G{g}")));
    header.extend(["rejected".to_string(), "fraction_rejected".to_string()]);
    let err = |e: csv::Error| Failure::internal(format!("cannot write {}: {e}", path.display()));
    w.write_record(&header).map_err(err)?;
    for run in runs {
        for report in &run.reports {
            let mut rec = vec![run.index.to_string(), report.method.clone()];
            rec.extend(report.pvalues.iter().map(|p| p.to_string()));
            let rejected: Vec<String> = report.rejected.rejected.iter().map(|g| format!("G{}", g + 1)).collect();
            rec.push(rejected.join(";"));
            rec.push((report.rejected.rejected.len() as f64 / k as f64).to_string());
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Failure::internal(e.to_string()))
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "simulation".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref())?;
    let scenario = Scenario::named(&args.scenario)?;
    if args.reps == 0 {
        return Err(Failure::config("reps ≥ 1 required"));
    }
    let (runs, summary) = simulate(&scenario, args.reps, args.seed, &config)?;
    let k = runs.first().map_or(0, |r| r.reports[0].pvalues.len());
    write_replications(&args.out, &runs, k)?;
    let path = summary_path(&args.out);
    let mut w = create(&path)?;
    summary.write_summary_csv(&mut w)?;
    finish(w, &path)?;
    print!("{}", summary.render_text());
    Ok(())
}

fn run_reproduce(args: ReproduceArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref())?;
    let summary = reproduce_table(args.table, args.reps, args.seed, &config)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::internal(format!("cannot create {}: {e}", args.out.display())))?;
    let t = args.table;

    let path = args.out.join(format!("table{t}_summary.csv"));
    let mut w = create(&path)?;
    summary.write_summary_csv(&mut w)?;
    finish(w, &path)?;

    let path = args.out.join(format!("table{t}_raw.csv"));
    let mut w = create(&path)?;
    summary.write_raw_csv(&mut w)?;
    finish(w, &path)?;

    let text = summary.render_text();
    let path = args.out.join(format!("table{t}.txt"));
    let mut w = create(&path)?;
    w.write_all(text.as_bytes()).map_err(|e| Failure::internal(e.to_string()))?;
    finish(w, &path)?;

    let path = args.out.join(format!("table{t}_config.json"));
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &config).map_err(|e| Failure::internal(e.to_string()))?;
    finish(w, &path)?;

    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(3);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Reproduce(a) => run_reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
