use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resin_bench::config::ScenarioConfig;
use resin_bench::output::Manifest;
use resin_bench::sweep::{read_summary, report, sweep, write_rows, REPORT_FILE};
use resin_bench::{emit_outputs, run_scenario, PlannerKind, Result};

#[derive(Parser)]
#[command(name = "resin", version, about = "Run sensor-network tracking scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its outputs.
    Run {
        #[command(flatten)]
        source: Source,
        /// Replay the run recorded in a manifest.toml.
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        planner: Option<PlannerKind>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run every planner × seed combination and summarize.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Comma-separated planners.
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = PlannerKind::ALL)]
        planners: Vec<PlannerKind>,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Aggregate a sweep summary into mean ± std per planner.
    Report {
        /// summary.csv written by `sweep`.
        summary: PathBuf,
        /// Defaults to report.csv beside the summary.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped scenario: stationary or mobile.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Option<ScenarioConfig>> {
        match (&self.config, &self.preset) {
            (Some(p), _) => ScenarioConfig::load(p).map(Some),
            (None, Some(name)) => ScenarioConfig::preset(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

fn missing_source() -> resin_bench::BenchError {
    resin_bench::BenchError::Config("one of --config, --preset or --manifest is required".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            source,
            manifest,
            seed,
            planner,
            out,
        } => {
            let mut cfg = match manifest {
                Some(path) => Manifest::load(&path)?.config,
                None => source.load()?.ok_or_else(missing_source)?,
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = planner {
                cfg.planner = p;
            }
            let result = run_scenario(&cfg)?;
            for path in emit_outputs(&result, &out)? {
                println!("wrote {}", path.display());
            }
            println!("{} seed {}: mean error {:.6}", cfg.planner, cfg.seed, result.mean_error());
        }
        Command::Sweep {
            source,
            planners,
            first_seed,
            seeds,
            out,
        } => {
            let cfg = source.load()?.ok_or_else(missing_source)?;
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let rows = sweep(&cfg, &planners, &seeds, Some(&out))?;
            print_report(&report(&rows));
            let path = out.join(REPORT_FILE);
            write_rows(&path, &report(&rows))?;
            println!("wrote {}", path.display());
        }
        Command::Report { summary, out } => {
            let rows = report(&read_summary(&summary)?);
            print_report(&rows);
            let path = out.unwrap_or_else(|| summary.parent().unwrap_or(Path::new(".")).join(REPORT_FILE));
            write_rows(&path, &rows)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_report(rows: &[resin_bench::sweep::ReportRow]) {
    println!("{:<12} {:>5} {:>12} {:>12}", "planner", "runs", "mean", "std");
    for r in rows {
        println!("{:<12} {:>5} {:>12.6} {:>12.6}", r.planner.as_str(), r.runs, r.mean_error, r.std_error);
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
