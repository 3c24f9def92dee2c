//! Discrepancy-based filtering: a client whose prototypes sit far from the
//! provisional aggregate is dropped before the global set is formed.

use protofed::aggregation::{global_calculate, quality_detect, stats_of, AggregationMode};
use protofed::{PrototypeSet, Submission};

fn client(id: usize, offset: f64) -> Submission {
    let mut protos = PrototypeSet::new();
    protos.insert(0, vec![1.0 + offset, 0.0], 10);
    protos.insert(1, vec![0.0, 1.0 + offset], 10);
    Submission { client_id: id, protos }
}

fn main() -> protofed::Result<()> {
    let mut subs: Vec<Submission> = (0..5).map(|id| client(id, 0.05 * id as f64)).collect();
    subs.push(client(5, 25.0));
    let stats = stats_of(&subs);

    let report = quality_detect(&subs, &stats, 1, AggregationMode::Normalized)?;
    for (id, d) in &report.discrepancies {
        println!("client {id}: d = {d:.3}");
    }
    println!("filtered: {:?}", report.filtered);

    let naive = protofed::aggregation::aggregate(&subs, &stats, AggregationMode::Normalized)?;
    let robust = global_calculate(&subs, &report, &stats, AggregationMode::Normalized)?;
    println!("class 0 without filtering: {:?}", naive.get(0).unwrap().values);
    println!("class 0 with filtering:    {:?}", robust.get(0).unwrap().values);
    Ok(())
}
