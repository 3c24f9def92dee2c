use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use protofed::experiment::{
    partition_stats, run_experiment, sweep_security, write_outputs, write_security_csv, ExperimentConfig,
};
use protofed::Error;

#[derive(Parser)]
#[command(version, about = "Pooled-prototype federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Transmit unpooled prototypes.
        #[arg(long)]
        no_softpool: bool,
        #[arg(long)]
        psi: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the security probability over a grid of N and p_m.
    SecurityProb {
        #[arg(long)]
        n_min: usize,
        #[arg(long)]
        n_max: usize,
        /// Comma-separated list of per-server fault probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        pm: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print realized class-count statistics of a config's partition.
    PartitionStats {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, no_softpool, psi, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if no_softpool {
                cfg.k_hat = 1;
                cfg.stride = 1;
            }
            if let Some(psi) = psi {
                cfg.psi = psi;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let result = run_experiment(&cfg)?;
            write_outputs(&cfg, &result, &cfg.output_dir)?;
            if let Some(acc) = result.final_accuracy() {
                println!("final mean accuracy {acc:.4} after {} rounds", result.records.len());
            }
            if result.all_aborted() {
                eprintln!("consensus aborted in every round");
                return Ok(ExitCode::from(3));
            }
        }
        Command::SecurityProb { n_min, n_max, pm, out } => {
            let rows = sweep_security(n_min, n_max, &pm)?;
            write_security_csv(BufWriter::new(File::create(&out)?), &rows)?;
        }
        Command::PartitionStats { config } => {
            let stats = partition_stats(&ExperimentConfig::load(&config)?)?;
            println!("class_count_mean = {}", stats.class_count_mean);
            println!("class_count_std = {}", stats.class_count_std);
            println!("total_train_samples = {}", stats.total_samples);
            for (class, holders) in &stats.coverage {
                println!("class {class}: {} clients, {} samples", holders.len(), stats.class_totals[class]);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
