//! Label-skewed partition of a synthetic dataset, written as CSV.

use protofed::data::{generate_synthetic, partition_non_iid, shard_stats, write_shards_csv, PartitionSpec};

fn main() -> protofed::Result<()> {
    let ds = generate_synthetic(10, 16, 200, 1.0, 4.0, 11)?;
    let spec = PartitionSpec { avg: 3, std: 2, samples_per_class: 20, replacement: true };
    let shards = partition_non_iid(&ds, 20, &spec, 11)?;
    for s in shards.iter().take(5) {
        println!("client {:>2}: classes {:?}, {} train / {} test", s.client_id, s.classes, s.train.len(), s.test.len());
    }
    let stats = shard_stats(&shards)?;
    println!("class count mean {:.2}, std {:.2}", stats.class_count_mean, stats.class_count_std);

    let mut csv = Vec::new();
    write_shards_csv(&mut csv, &shards[..2])?;
    print!("{}", String::from_utf8_lossy(&csv).lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
