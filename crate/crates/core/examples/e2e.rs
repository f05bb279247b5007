//! Data-parallel training of a toy classifier whose gradients are averaged
//! exactly, by ring all-reduce, or by an 8-bit in-network unit.
//!
//! ```text
//! cargo run --release --example e2e
//! ```

use optinc::topo::{e2e_toy_training, Aggregation, E2eConfig, E2eCurve};

fn main() -> optinc::Result<()> {
    let cfg = E2eConfig::default();
    let mut curves = Vec::new();
    for agg in [Aggregation::ExactMean, Aggregation::Ring, Aggregation::OptincOracle] {
        let c = e2e_toy_training(&cfg, &agg)?;
        let (_, loss, acc) = *c.points.last().expect("at least one step");
        println!("{:>14}: loss {loss:.4} accuracy {acc:.4}", c.mode);
        curves.push(c);
    }
    println!("ring reproduces exact mean bit for bit: {}", curves[0].final_params == curves[1].final_params);

    // 4-bit words make the quantization floor visible.
    let coarse = E2eConfig { bit_width: 4, ..cfg };
    let c = e2e_toy_training(&coarse, &Aggregation::OptincOracle)?;
    println!("4-bit in-network aggregation: accuracy {:.4}", c.final_accuracy());
    let csv = E2eCurve::to_csv(&curves);
    println!("\n{} curve rows, first: {}", csv.lines().count() - 1, csv.lines().nth(1).unwrap_or(""));
    Ok(())
}
