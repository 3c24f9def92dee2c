//! How tightly the uploaded prototypes cluster by class, with and without
//! pooling, plus the upload size each variant costs.

use protofed::analysis::{comm_params, silhouette};
use protofed::experiment::{run_experiment, ExperimentConfig};

fn main() -> protofed::Result<()> {
    for (label, k) in [("softpool 2x2", 2), ("no pooling", 1)] {
        let cfg = ExperimentConfig { k_hat: k, stride: k, write_trace: false, ..Default::default() };
        let result = run_experiment(&cfg)?;
        let points: Vec<(usize, Vec<f64>)> = result
            .final_submissions
            .iter()
            .flat_map(|s| s.protos.classes.iter().map(|(j, p)| (*j, p.values.clone())))
            .collect();
        let held: usize = result.final_submissions.iter().map(|s| s.protos.len()).sum();
        println!(
            "{label:<13} silhouette {:.4}, {} scalars uploaded per round",
            silhouette(&points)?,
            comm_params(held, cfg.proto_rows, cfg.proto_cols, cfg.kernel())?
        );
    }
    Ok(())
}
