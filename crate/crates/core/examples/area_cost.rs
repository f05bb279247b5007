//! MZI counts and area ratios of the published structures, plus the block
//! approximation of a single weight matrix.
//!
//! ```text
//! cargo run --example area_cost
//! ```

use nalgebra::DMatrix;
use optinc::harness::preset;
use optinc::photonic::approx::{approximate_layer, assemble};
use optinc::photonic::mzi_cost;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> optinc::Result<()> {
    for (name, published) in [("table1-row1", 39.3), ("table1-row2", 40.9), ("table1-row3", 40.4), ("table1-row4", 49.3)] {
        let rc = preset(name)?;
        let cfg = rc.system_config()?;
        let spec = rc.onn_spec(&cfg)?;
        let r = mzi_cost(&spec.layer_dims, &spec.approx_layers);
        println!(
            "{name}: {:>7} -> {:>7} MZIs, area {:.2}% (published {published}%)",
            r.total_full,
            r.total_deployed,
            100.0 * r.area_ratio
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = DMatrix::from_fn(64, 4, |_, _| rng.random_range(-1.0..1.0));
    let factors = approximate_layer(&w)?;
    let approx = assemble(64, 4, &factors)?;
    println!(
        "\n64x4 layer: {} blocks of 4x4, relative error of the approximation {:.3}",
        factors.len(),
        (&w - &approx).norm() / w.norm()
    );
    Ok(())
}
