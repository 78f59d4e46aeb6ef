use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lds_explore::harness::{
    compare, fit_slope, format_audit, read_summary, run_experiment, spanner_audit, verify_cell, ExperimentConfig, Metric,
    RunRecord, SlopeOptions,
};
use lds_explore::Error;
use rand::Rng;

#[derive(Parser)]
#[command(name = "lds-explore", version, about = "Regret experiments for online control of unknown linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Realized,
    Avg,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Realized => Metric::Realized,
            MetricArg::Avg => Metric::Average,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every (controller, horizon, seed) cell of an experiment document.
    Run {
        config: PathBuf,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit the log-log slope of regret against the horizon.
    Slope {
        summary: PathBuf,
        #[arg(long)]
        controller: String,
        #[arg(long, value_enum, default_value = "realized")]
        metric: MetricArg,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 5)]
        min_seeds: usize,
        #[arg(long)]
        json: bool,
    },
    /// Mean ± stderr per controller and horizon, and pairwise win rates.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "realized")]
        metric: MetricArg,
        /// Print the long-format table as CSV instead of text.
        #[arg(long)]
        csv: bool,
    },
    /// Recompute one recorded cell and diff it against the stored CSV.
    Verify {
        record: PathBuf,
        /// Cell index in the record (random when omitted).
        #[arg(long)]
        cell: Option<usize>,
    },
    /// Per-epoch spanner and elimination log of a run.
    SpannerAudit {
        record: PathBuf,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn run(command: Command) -> lds_explore::Result<ExitCode> {
    match command {
        Command::Run { config, threads } => {
            let cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
            let (dir, record) = run_experiment(cfg)?;
            println!("config {}", record.config_hash);
            println!("{} cells written to {}", record.cells.len() - record.failed(), dir.display());
            if record.failed() > 0 {
                eprintln!("{} cells failed; see {}", record.failed(), dir.join("record.json").display());
                return Ok(ExitCode::from(3));
            }
        }
        Command::Slope { summary, controller, metric, resamples, min_seeds, json } => {
            let rows = read_summary(&summary)?;
            let opts = SlopeOptions { metric: metric.into(), resamples, min_seeds, ..SlopeOptions::default() };
            let fit = fit_slope(&rows, &controller, &opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&fit)?);
            } else {
                for (t, mean, n) in &fit.points {
                    println!("T={t:<8} mean={mean:.4} seeds={n}");
                }
                for t in &fit.excluded {
                    println!("T={t:<8} excluded (nonpositive mean)");
                }
                println!("slope {:.4}  95% CI [{:.4}, {:.4}]", fit.slope, fit.ci.0, fit.ci.1);
            }
        }
        Command::Compare { files, metric, csv } => {
            let mut rows = Vec::new();
            for f in &files {
                rows.extend(read_summary(f)?);
            }
            let table = compare(&rows, metric.into());
            if csv {
                print!("{}", table.to_csv()?);
            } else {
                print!("{}", table.to_text());
            }
        }
        Command::Verify { record, cell } => {
            let n = RunRecord::load(&record)?.cells.len();
            if n == 0 {
                return Err(Error::InvalidArgument("record has no cells".into()));
            }
            let index = cell.unwrap_or_else(|| rand::rng().random_range(0..n));
            let v = verify_cell(&record, index)?;
            match v.first_difference {
                None => println!("cell {index} ({} T={} seed={}): identical", v.controller, v.horizon, v.seed),
                Some((line, stored, fresh)) => {
                    println!("cell {index} ({} T={} seed={}): differs at line {line}", v.controller, v.horizon, v.seed);
                    println!("  stored:     {stored}");
                    println!("  recomputed: {fresh}");
                    return Ok(ExitCode::from(3));
                }
            }
        }
        Command::SpannerAudit { record, controller, json } => {
            let rec = RunRecord::load(&record)?;
            let rows = spanner_audit(&rec, controller.as_deref());
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else if rows.is_empty() {
                println!("no epoch logs in {}", record.display());
            } else {
                print!("{}", format_audit(&rows));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
