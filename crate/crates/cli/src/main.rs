//! Command-line front end: single scenario runs, the comparison suite and
//! trace replay.
//!
//! Exit status is 0 when every requested check passes (or the suite matrix
//! matches the reference one), 1 on violations or a mismatching matrix, and
//! 2 when the input cannot be loaded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use permtx::checkers::{Criterion, Verdict};
use permtx::harness::report::Format;
use permtx::harness::suite::run_table2;
use permtx::harness::{replay_trace, run_scenario, HarnessError, ScenarioConfig};

const OUT_ENV: &str = "PERMTX_OUT";

#[derive(Parser)]
#[command(name = "permtx", version, about = "Replication-architecture simulator and transaction correctness checkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and check its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trace and verdicts.
        #[arg(long, env = OUT_ENV, default_value = "permtx-out")]
        out: PathBuf,
        /// `all` or a comma-separated subset of durability,atomicity,1cs,session.
        #[arg(long)]
        check: Option<String>,
    },
    /// Run the shipped scenarios of every column and build the matrix.
    Suite {
        #[arg(long, required = true)]
        table2: bool,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long, env = OUT_ENV, default_value = "permtx-out")]
        out: PathBuf,
    },
    /// Re-check a persisted trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "all")]
        check: String,
    },
}

/// Failure to load the input, as opposed to a run that found violations.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input<T>(r: Result<T, HarnessError>) -> Result<T> {
    r.map_err(|e| {
        if e.is_input_error() {
            InputError(e.to_string()).into()
        } else {
            anyhow::Error::new(e)
        }
    })
}

fn criteria(list: &str) -> Result<Vec<Criterion>> {
    Criterion::parse_list(list).map_err(|e| InputError(e).into())
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        if v.passed() {
            println!("{:<11} pass", v.criterion.name());
        } else {
            let first = &v.witnesses[0];
            println!(
                "{:<11} VIOLATED ({} witnesses; first: {} at records {:?})",
                v.criterion.name(),
                v.witnesses.len(),
                first.reason,
                first.events
            );
        }
        for w in &v.warnings {
            println!("{:<11} warning: {w}", "");
        }
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path, check: Option<String>) -> Result<ExitCode> {
    let text = fs::read_to_string(scenario)
        .map_err(|e| InputError(format!("reading {}: {e}", scenario.display())))?;
    let mut cfg = input(ScenarioConfig::from_json(&text))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(check) = check {
        criteria(&check)?;
        cfg.checks = check;
    }
    let result = input(run_scenario(&cfg))?;

    let stem = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let base = format!("{stem}-seed{}", cfg.seed);
    let trace = write(out, &format!("{base}.trace"), &result.trace.to_text())?;
    let verdicts = serde_json::to_string_pretty(&result.verdicts)?;
    write(out, &format!("{base}.verdicts.json"), &verdicts)?;
    println!("{} seed {} ({} records) -> {}", cfg.protocol, cfg.seed, result.trace.records.len(), trace.display());
    print_verdicts(&result.verdicts);
    Ok(status(result.passed()))
}

fn suite(runs: usize, seed_base: u64, format: Format, out: &Path) -> Result<ExitCode> {
    if runs == 0 {
        bail!(InputError("--runs must be at least 1".into()));
    }
    let start = Instant::now();
    let matrix = input(run_table2(runs, seed_base))?;
    let elapsed = start.elapsed();
    let text = matrix.export(format);
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = write(out, &format!("table2.{ext}"), &text)?;
    print!("{text}");
    eprintln!("{}", matrix.to_table());
    for col in &matrix.columns {
        if col.configs.len() > 1 {
            let verdicts: Vec<String> =
                col.configs.iter().map(|c| format!("{}={:?}", c.label, c.booleans())).collect();
            eprintln!("{}: {}", col.name, verdicts.join(" "));
        }
    }
    let diffs = matrix.mismatches();
    for d in &diffs {
        eprintln!("mismatch: {d}");
    }
    eprintln!(
        "{} runs per scenario in {:.1}s; matrix {}; written to {}",
        runs,
        elapsed.as_secs_f64(),
        if diffs.is_empty() { "matches" } else { "DIFFERS" },
        path.display()
    );
    Ok(status(diffs.is_empty()))
}

fn replay(trace: &Path, check: &str) -> Result<ExitCode> {
    let list = criteria(check)?;
    let text =
        fs::read_to_string(trace).map_err(|e| InputError(format!("reading {}: {e}", trace.display())))?;
    let verdicts = input(replay_trace(&text, &list))?;
    print_verdicts(&verdicts);
    Ok(status(verdicts.iter().all(Verdict::passed)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            check,
        } => run(&scenario, seed, &out, check),
        Command::Suite {
            table2: _,
            runs,
            seed_base,
            format,
            out,
        } => suite(runs, seed_base, format, &out),
        Command::Replay { trace, check } => replay(&trace, &check),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if e.downcast_ref::<InputError>().is_some() {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("internal error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
