//! SoftPool on a 4x4 map: forward values, the gradient it routes back, and
//! the Lipschitz bound it obeys.

use protofed::numeric::FeatureMap;
use protofed::softpool::{lipschitz_constant, region_weights, softpool, softpool_backward, KernelSpec};

fn main() -> protofed::Result<()> {
    let map = FeatureMap::new(
        4,
        4,
        vec![
            0.0, 1.0, 2.0, 0.5, //
            3.0, 0.2, 0.1, 0.0, //
            -1.0, 4.0, 0.3, 0.3, //
            0.0, 0.0, 0.3, 0.3,
        ],
    )?;
    let spec = KernelSpec::square(2);
    let pooled = softpool(&map, spec)?;
    println!("pooled 2x2: {:?}", pooled.values);
    println!("weights of the top-left region: {:?}", region_weights(&[0.0, 1.0, 3.0, 0.2]));

    let upstream = FeatureMap::new(2, 2, vec![1.0; 4])?;
    let grad = softpool_backward(&map, spec, &upstream)?;
    println!("d(sum of outputs)/d(input): {:?}", grad.values);

    for k in [1, 2, 3] {
        println!("k_hat = {k}: Lipschitz bound {}", lipschitz_constant(KernelSpec::square(k)));
    }
    Ok(())
}
