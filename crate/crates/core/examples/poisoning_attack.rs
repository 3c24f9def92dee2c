//! Two poisoning clients over five seeds, with and without filtering.

use protofed::experiment::{run_experiment, ExperimentConfig};

fn main() -> protofed::Result<()> {
    for (label, zeta, psi) in [("clean", 0, 0), ("attacked, psi = 0", 2, 0), ("attacked, psi = 2", 2, 2)] {
        let mut accs = Vec::new();
        let mut caught = 0;
        for seed in 1..=5 {
            let cfg = ExperimentConfig { seed, zeta, psi, write_trace: false, ..Default::default() };
            let result = run_experiment(&cfg)?;
            accs.push(result.final_accuracy().unwrap());
            let last = result.records.last().unwrap();
            caught += result.attackers.iter().filter(|a| last.filtered.contains(a)).count();
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{label:<18} final accuracy {:.2}%, attackers filtered in last round: {caught}/{}", 100.0 * mean, 5 * zeta);
    }
    Ok(())
}
