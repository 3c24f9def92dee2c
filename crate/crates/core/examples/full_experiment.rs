//! End-to-end run from a config file, writing the standard output files.
//!
//! `cargo run --example full_experiment -- examples/default.cfg out/demo`

use std::path::PathBuf;

use protofed::experiment::{run_experiment, write_outputs, ExperimentConfig};

fn main() -> protofed::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let result = run_experiment(&cfg)?;
    for r in result.records.iter().step_by(5) {
        println!(
            "round {:>2}: accuracy {:.3} ± {:.3}, objective {:.4}, filtered {:?}",
            r.round, r.mean_accuracy, r.std_accuracy, r.global_objective, r.filtered
        );
    }
    write_outputs(&cfg, &result, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
