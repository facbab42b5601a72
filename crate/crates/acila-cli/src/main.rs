//! Scenario runner CLI.
//!
//! Exit codes: 0 all checks pass, 1 validation or I/O failure, 2 an
//! analytic-vs-concrete cross-check mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use acila::fabric::FilterMode;
use acila_cli::report::Format;
use acila_cli::runner::{self, RunConfig};
use acila_cli::scenario::load_scenario;

#[derive(Parser, Debug)]
#[command(
    name = "acila",
    about = "Runs a workload-identity classification scenario and reports entry counts, \
             packet traces and plan diffs"
)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,

    /// Output format.
    #[arg(long, default_value = "human")]
    format: Format,

    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the generator's alpha (generator scenarios only).
    #[arg(long)]
    scale: Option<f64>,

    /// Seed for generator placement shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Where packet filtering is enforced.
    #[arg(long, default_value = "gateway", value_parser = parse_filter_mode)]
    filter_mode: FilterMode,

    /// Fail (exit 2) when analytic and concrete entry counts disagree.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    strict_crosscheck: bool,

    /// Perturb the named device's concrete count by one, to prove the
    /// cross-check trips (self-test).
    #[arg(long, hide = true)]
    inject_crosscheck_fault: Option<String>,
}

fn parse_filter_mode(s: &str) -> Result<FilterMode, String> {
    match s {
        "gateway" => Ok(FilterMode::PriorityOnly),
        "gateway+fabric" => Ok(FilterMode::PriorityAndFilter),
        other => Err(format!(
            "unknown filter mode {other:?} (expected gateway or gateway+fabric)"
        )),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();

    let scenario = match load_scenario(&args.scenario, args.scale, args.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let cfg = RunConfig {
        filter_mode: args.filter_mode,
        strict_crosscheck: args.strict_crosscheck,
        seed: args.seed,
        inject_fault: args.inject_crosscheck_fault,
    };
    let report = match runner::run(&scenario, &cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let rendered = report.emit(args.format);
    if let Some(path) = &args.out {
        if let Err(e) = std::fs::write(path, rendered.as_bytes()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
    } else {
        print!("{rendered}");
    }

    if args.strict_crosscheck && !runner::all_checks_pass(&report) {
        eprintln!("cross-check mismatches:");
        for c in report.failures() {
            eprintln!(
                "  {} {}: analytic {} vs concrete {}",
                c.device, c.metric, c.analytic, c.concrete
            );
        }
        for c in report.change_failures() {
            eprintln!(
                "  change {}: elu {:?}/{} esu {:?}/{}",
                c.label, c.elu_formula, c.elu_measured, c.esu_formula, c.esu_measured
            );
        }
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
