//! Run an experiment document end to end: every (controller, horizon, seed)
//! cell in parallel, then slope fits and the comparison table from the
//! summary that was written to disk.
//!
//!     cargo run --release --example harness_run -- [config.json]

use std::path::PathBuf;

use lds_explore::harness::{compare, fit_slope, read_summary, run_experiment, ExperimentConfig, Metric, SlopeOptions};

fn main() -> lds_explore::Result<()> {
    env_logger::init();
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/benchmark.json"));
    let mut config = ExperimentConfig::load(&path)?;
    if config.output_dir.is_relative() {
        config.output_dir = std::env::temp_dir().join(&config.output_dir);
    }
    println!("config {} (hash {})", path.display(), &config.hash()[..12]);

    let (dir, record) = run_experiment(config.clone())?;
    println!("wrote {} ({} failed cells)", dir.display(), record.failed());

    let rows = read_summary(&dir.join("summary.csv"))?;
    for c in &config.controllers {
        let label = c.label();
        for metric in [Metric::Realized, Metric::Average] {
            match fit_slope(&rows, &label, &SlopeOptions { metric, ..SlopeOptions::default() }) {
                Ok(fit) => println!(
                    "{label:>12} {metric:?}: slope {:.3} [{:.3}, {:.3}]",
                    fit.slope, fit.ci.0, fit.ci.1
                ),
                Err(e) => println!("{label:>12} {metric:?}: {e}"),
            }
        }
    }
    print!("{}", compare(&rows, Metric::Realized).to_text());
    Ok(())
}
