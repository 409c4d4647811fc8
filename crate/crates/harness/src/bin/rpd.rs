use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rpd_harness::record::RunRecord;
use rpd_harness::sweep::summary_csv;
use rpd_harness::{build_problem, compare, run_experiment, solve_reference, sweep, HarnessError, ProblemSpec};

/// Randomized block-coordinate primal-dual solvers: condition checks, runs,
/// comparisons and sweeps driven by JSON problem specs.
#[derive(Parser)]
#[command(name = "rpd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run seed; overrides RPD_SEED and the spec.
    #[arg(long, env = "RPD_SEED")]
    seed: Option<u64>,
    /// Run even when the step-size condition fails.
    #[arg(long)]
    force: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Print the step-size condition report.
    Check { spec: PathBuf },
    /// Run a spec and write `<stem>.csv` and `<stem>.json`.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Compare a stored record with the spec's reference solution.
    Compare { record: PathBuf, spec: PathBuf },
    /// Run a spec once per value of one field.
    Sweep {
        spec: PathBuf,
        /// Dotted field path, e.g. `schedule.p`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        args: RunArgs,
    },
}

/// Stopped at the iteration cap although a tolerance was set.
const EXIT_NOT_CONVERGED: u8 = 4;

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
}

fn load(path: &Path, args: Option<&RunArgs>) -> Result<ProblemSpec, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut spec = ProblemSpec::from_json(&text)?;
    if let Some(a) = args {
        if let Some(seed) = a.seed {
            spec.seed = seed;
        }
        spec.force |= a.force;
    }
    Ok(spec)
}

fn status(record: &RunRecord) -> u8 {
    if record.meta.stop_reason != "converged" && record.meta.spec.stop.tol > 0.0 {
        EXIT_NOT_CONVERGED
    } else {
        0
    }
}

fn execute(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Check { spec } => {
            let spec = load(&spec, None)?;
            let report = build_problem(&spec)?.condition(spec.alpha)?;
            println!("{}", report.summary());
            Ok(if report.passed { 0 } else { 2 })
        }
        Command::Run { spec: path, args } => {
            let spec = load(&path, Some(&args))?;
            let start = Instant::now();
            let record = run_experiment(&spec)?;
            let (csv_path, json_path) = record.write(&args.out, &stem(&path))?;
            println!(
                "{} {}: {} after {} iterations in {:.3}s{}",
                csv_path.display(),
                json_path.display(),
                record.meta.stop_reason,
                record.meta.iterations,
                start.elapsed().as_secs_f64(),
                if record.meta.condition_forced { " (condition forced)" } else { "" }
            );
            Ok(status(&record))
        }
        Command::Compare { record, spec } => {
            let spec = load(&spec, None)?;
            let record = RunRecord::read(&record)?;
            let reference = solve_reference(&spec)?;
            let summary = compare(&record, &reference)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Sweep { spec: path, param, values, args } => {
            let spec = load(&path, Some(&args))?;
            let entries = sweep(&spec, &param, &values)?;
            let base = stem(&path);
            for (i, e) in entries.iter().enumerate() {
                let tag: String = e
                    .value
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
                    .collect();
                e.record.write(&args.out, &format!("{base}-{i:03}-{tag}"))?;
            }
            let summary = args.out.join(format!("{base}-sweep.csv"));
            std::fs::write(&summary, summary_csv(&entries)?)?;
            println!("{}: {} runs", summary.display(), entries.len());
            Ok(entries.iter().map(|e| status(&e.record)).max().unwrap_or(0))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("rpd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
