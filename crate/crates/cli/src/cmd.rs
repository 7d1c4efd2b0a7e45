//! Subcommand implementations. Each returns the text for stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use artiskit::bundle::Bundle;
use artiskit::irgraph::dump;
use artiskit::mexfmt::Grant;
use artiskit::passes::{run_pipeline, PassPipeline};
use artiskit::runtime::{execute, RunOptions, RunReport};
use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchConfig};
use crate::corpus;
use crate::error::{read_file, write_file, CliError, EXIT_FAILURE};
use crate::load;

#[derive(Debug, Parser)]
#[command(name = "artiskit", version, about = "Compile, instrument and run MEX programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a program through a pass pipeline into a bundle.
    Instrument(InstrumentArgs),
    /// Execute a bundle.
    Run(RunArgs),
    /// Check every corpus case against its expected report.
    Corpus(CorpusArgs),
    /// Time baseline against instrumented builds.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct InstrumentArgs {
    #[arg(long = "in", value_name = "MEX")]
    pub input: PathBuf,
    /// Companion library merged into the program before compiling.
    #[arg(long)]
    pub merge: Option<PathBuf>,
    /// Pass to run; repeat in pipeline order.
    #[arg(long = "pass", value_name = "NAME")]
    pub passes: Vec<String>,
    #[arg(long)]
    pub taint_policy: Option<PathBuf>,
    #[arg(long)]
    pub perm_policy: Option<PathBuf>,
    #[arg(long)]
    pub dump_ir: bool,
    #[arg(long)]
    pub dump_slices: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Permission verdict overriding the bundle policy, as PERM=allow|deny.
    #[arg(long = "grant", value_name = "PERM=VERDICT", value_parser = parse_grant)]
    pub grants: Vec<(String, Grant)>,
    /// Write the structured run report to this path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the line protocol instead of bare program output.
    #[arg(long)]
    pub events: bool,
    /// Arguments for the entry method.
    #[arg(last = true)]
    pub args: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// Only run cases of this category.
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "micro")]
    pub suite: String,
    /// Paired runs per benchmark.
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    /// Loop trip count inside each benchmark program.
    #[arg(long, default_value_t = 2000)]
    pub trip: u32,
}

fn parse_grant(s: &str) -> Result<(String, Grant), String> {
    let (perm, verdict) = s.split_once('=').ok_or("expected PERM=allow|deny")?;
    let verdict = Grant::parse(verdict).ok_or_else(|| format!("bad verdict '{verdict}'"))?;
    if perm.is_empty() {
        return Err("empty permission name".into());
    }
    Ok((perm.to_string(), verdict))
}

/// Command output: text for stdout and the process exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub exit: i32,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Output {
            stdout,
            stderr: String::new(),
            exit: 0,
        }
    }
}

pub fn seed_from_env() -> Result<u64, CliError> {
    match std::env::var("ARTISKIT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::input("usage", format!("ARTISKIT_SEED must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(0),
    }
}

pub fn dispatch(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Instrument(a) => instrument(a),
        Command::Run(a) => run(a),
        Command::Corpus(a) => run_corpus(a),
        Command::Bench(a) => run_bench(a),
    }
}

pub fn instrument(a: &InstrumentArgs) -> Result<Output, CliError> {
    let program = load::verified_program(&a.input, a.merge.as_deref())?;
    let taint = a.taint_policy.as_deref().map(load::taint_policy).transpose()?;
    let perm = a.perm_policy.as_deref().map(load::perm_policy).transpose()?;
    let pipeline = PassPipeline::from_names(&a.passes, taint.as_ref(), perm.as_ref())
        .map_err(|e| CliError::input("pipeline", e.to_string()))?;
    let (bundle, report) = run_pipeline(&program, &pipeline).map_err(|e| CliError::failure("pipeline", e.to_string()))?;
    write_file(&a.out, &bundle.to_text())?;
    let mut out = String::new();
    if a.dump_ir {
        for g in &bundle.graphs {
            out.push_str(&dump(g));
            out.push('\n');
        }
    }
    out.push_str(&report.to_text(a.dump_slices));
    Ok(Output::ok(out))
}

pub fn load_bundle(path: &std::path::Path) -> Result<Bundle, CliError> {
    let text = read_file(path)?;
    Bundle::parse(&text).map_err(|e| CliError::input("bundle", format!("{}: {e}", path.display())))
}

pub fn run(a: &RunArgs) -> Result<Output, CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let opts = RunOptions {
        args: a.args.clone(),
        grants: a.grants.iter().cloned().collect::<BTreeMap<_, _>>(),
        ..Default::default()
    };
    let report = execute(&bundle, &opts).map_err(|e| CliError::input("runtime", e.to_string()))?;
    if let Some(path) = &a.report {
        write_file(path, &report.to_record_text())?;
    }
    Ok(run_output(&report, a.events))
}

fn run_output(report: &RunReport, events: bool) -> Output {
    let stdout = if events {
        report.to_lines()
    } else {
        report.prints().iter().map(|l| format!("{l}\n")).collect()
    };
    let stderr = match &report.error {
        Some(e) => format!("{}\n", CliError::failure("runtime", e.clone())),
        None => String::new(),
    };
    Output {
        stdout,
        stderr,
        exit: report.exit,
    }
}

pub fn run_corpus(a: &CorpusArgs) -> Result<Output, CliError> {
    if let Some(f) = &a.filter {
        if !corpus::CATEGORIES.contains(&f.as_str()) {
            return Err(CliError::input("usage", format!("unknown category '{f}'")));
        }
    }
    let cases = corpus::load_dir(&a.dir, a.filter.as_deref())?;
    let results = cases.iter().map(corpus::evaluate).collect::<Result<Vec<_>, _>>()?;
    let mut out = String::new();
    for r in &results {
        let _ = writeln!(out, "{:<6} {:<24} {}", r.status(), r.category, r.name);
        for m in &r.mismatches {
            let _ = writeln!(out, "         {m}");
        }
    }
    out.push('\n');
    out.push_str(&corpus::table(&results));
    let failures = results.iter().filter(|r| r.is_failure()).count();
    Ok(Output {
        stdout: out,
        stderr: if failures > 0 {
            format!("{}\n", CliError::failure("corpus", format!("{failures} case(s) mismatched")))
        } else {
            String::new()
        },
        exit: if failures > 0 { EXIT_FAILURE } else { 0 },
    })
}

pub fn run_bench(a: &BenchArgs) -> Result<Output, CliError> {
    if a.suite != "micro" {
        return Err(CliError::input("usage", format!("unknown suite '{}'", a.suite)));
    }
    let cfg = BenchConfig {
        runs: a.runs,
        trip: a.trip,
        seed: seed_from_env()?,
    };
    let rows = bench::run_micro(&cfg)?;
    Ok(Output::ok(bench::table(&rows)))
}
