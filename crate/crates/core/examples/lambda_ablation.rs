//! Final accuracy as the prototype-alignment weight varies.

use protofed::experiment::{run_experiment, ExperimentConfig};

fn main() -> protofed::Result<()> {
    for lambda in [0.0, 0.1, 0.5, 1.0] {
        let mut total = 0.0;
        for seed in 1..=3 {
            let cfg = ExperimentConfig { seed, lambda, write_trace: false, ..Default::default() };
            total += run_experiment(&cfg)?.final_accuracy().unwrap();
        }
        println!("lambda = {lambda:<4} final accuracy {:.2}%", 100.0 * total / 3.0);
    }
    Ok(())
}
