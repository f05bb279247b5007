//! Communication rounds of ring all-reduce against one in-network pass.
//!
//! ```text
//! cargo run --example ring_vs_optinc
//! ```

use optinc::topo::{overhead_report, ring_allreduce};

fn main() -> optinc::Result<()> {
    println!("{:>4} {:>6} {:>7} {:>9}", "N", "ring", "optinc", "overhead");
    for n in [2u64, 4, 8, 16, 64] {
        let r = overhead_report(n)?;
        println!("{:>4} {:>6} {:>7} {:>8.1}%", n, r.ring_rounds, r.optinc_rounds, 100.0 * r.relative_overhead);
    }

    // The four-server, four-chunk walk-through.
    let vectors: Vec<Vec<f64>> = (0..4).map(|s| (0..4).map(|c| (10 * s + c) as f64).collect()).collect();
    let out = ring_allreduce(&vectors)?;
    println!("\nafter {} rounds every server holds {:?}", out.rounds, out.vectors[0]);
    println!("each server sent {} bytes", out.bytes_per_server);
    Ok(())
}
