//! Operator entry point: validate scenario files, run them, and write
//! the report and comparison artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 invariant violation
//! during a run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stampgate_core::metrics::{self, ComparisonTable};
use stampgate_core::netsim::{run, Scenario, SimError, SimReport};

#[derive(Parser)]
#[command(name = "stampgate", version, about = "Run anti-DoS gateway simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, report.csv, comparison.csv.
    Run {
        /// Scenario file (JSON).
        scenario: PathBuf,
        /// Output directory for the three artifacts.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, out, seed } => cmd_run(&scenario, &out, seed),
        Command::Validate { scenario } => cmd_validate(&scenario),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| format!("cannot parse {}: {e}", path.display()))?;
    scenario
        .validate()
        .map_err(|e| format!("invalid scenario {}: {e}", path.display()))?;
    Ok(scenario)
}

fn cmd_validate(path: &Path) -> ExitCode {
    match load_scenario(path) {
        Ok(scenario) => {
            println!("ok: scenario `{}` is valid", scenario.name);
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_run(path: &Path, out_dir: &Path, seed: Option<u64>) -> ExitCode {
    let mut scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let report = match run(&scenario) {
        Ok(report) => report,
        Err(SimError::Config(e)) => {
            eprintln!("error: invalid scenario: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(SimError::Invariant(msg)) => {
            eprintln!("error: run aborted, invariant violated: {msg}");
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    let params = metrics::params_from_report(&report);
    let comparison = match metrics::compare(&report, &params) {
        Ok(table) => table,
        Err(e) => {
            eprintln!("error: comparison setup: field `{}` mismatched", e.field);
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    if let Err(e) = write_artifacts(out_dir, &report, &comparison) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INVARIANT);
    }
    println!(
        "ran `{}`: {} datagrams processed, {} delivered, reports in {}",
        report.scenario,
        report.processed,
        report.deliveries.len(),
        out_dir.display()
    );
    ExitCode::SUCCESS
}

/// Write-temp-then-rename so partial artifacts never appear.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("cannot rename into {}: {e}", path.display()))
}

fn write_artifacts(
    out_dir: &Path,
    report: &SimReport,
    comparison: &ComparisonTable,
) -> Result<(), String> {
    fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_atomic(&out_dir.join("report.json"), json.as_bytes())?;

    let mut csv = String::from("tick,injected,processed,ca_served,units_used,queue_depth\n");
    for row in &report.per_tick {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.tick, row.injected, row.processed, row.ca_served, row.units_used, row.queue_depth
        ));
    }
    write_atomic(&out_dir.join("report.csv"), csv.as_bytes())?;

    let mut cmp = String::from("metric,predicted,measured,rel_error,within_tolerance\n");
    for row in &comparison.rows {
        cmp.push_str(&format!(
            "{},{},{},{},{}\n",
            row.metric,
            format_rat(&row.predicted),
            format_rat(&row.measured),
            format_rat(&row.rel_error),
            row.within_tolerance
        ));
    }
    write_atomic(&out_dir.join("comparison.csv"), cmp.as_bytes())
}

fn format_rat(r: &metrics::Rat) -> String {
    if r.denom() == &1 {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}
