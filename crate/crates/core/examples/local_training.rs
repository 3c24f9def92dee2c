//! One client training locally, first without a global prototype set and
//! then pulled toward one.

use protofed::client::{ClientState, TrainingConfig};
use protofed::data::{generate_synthetic, partition_non_iid, PartitionSpec};
use protofed::numeric::ModelParams;
use protofed::seeding::{substream, STREAM_INIT, STREAM_TRAIN};
use protofed::softpool::KernelSpec;
use protofed::PrototypeSet;

fn main() -> protofed::Result<()> {
    let seed = 3;
    let ds = generate_synthetic(10, 16, 200, 1.0, 4.0, seed)?;
    let spec = PartitionSpec { avg: 3, std: 2, samples_per_class: 40, replacement: true };
    let shard = partition_non_iid(&ds, 8, &spec, seed)?
        .into_iter()
        .max_by_key(|s| s.classes.len())
        .expect("eight shards");
    println!("client holds classes {:?}", shard.classes);

    let params = ModelParams::random(16, 4, 4, 10, &mut substream(seed, &[STREAM_INIT, 0]));
    let mut client = ClientState::new(shard, params, true);
    let kernel = KernelSpec::square(2);
    let cfg = TrainingConfig { local_iters: 20, ..Default::default() };
    let mut rng = substream(seed, &[STREAM_TRAIN, 0]);

    let report = client.local_round(&PrototypeSet::new(), &cfg, kernel, &mut rng)?;
    println!("round 0 loss {:.4} -> {:.4}", report.losses[0], report.losses.last().unwrap());
    println!("test accuracy {:.3}", client.evaluate()?);

    // Pretend the server returned this client's own prototypes shrunk toward 0.
    let mut global = client.prototype_average(kernel)?;
    for p in global.classes.values_mut() {
        p.values.iter_mut().for_each(|v| *v *= 0.5);
    }
    let report = client.local_round(&global, &cfg, kernel, &mut rng)?;
    println!(
        "round 1 prototype term {:.4} -> {:.4}",
        report.prototype[0],
        report.prototype.last().unwrap()
    );
    println!("test accuracy {:.3}", client.evaluate()?);
    Ok(())
}
