//! Two-level cascade serving N^2 servers, with and without carry correction.
//!
//! ```text
//! cargo run --release --example cascade
//! ```

use optinc::codec::{GradientWord, Quantizer, SystemConfig};
use optinc::topo::{cascade_sweep_exhaustive, cascade_sweep_sampled, global_quantized_mean, CascadeTopology};

fn main() -> optinc::Result<()> {
    let cfg = SystemConfig::new(4, 2, 2, Quantizer::Floor)?;
    let topo = CascadeTopology::oracle(cfg)?;

    let words = [2, 1, 1, 0].map(GradientWord);
    let frames = topo.level1_frames(&words, true)?;
    for (i, f) in frames.iter().enumerate() {
        println!("level-1 unit {i}: symbols {:?} carry {}/{}", f.frame.symbols(), f.carry_num, f.carry_den);
    }
    println!(
        "uncorrected {} / corrected {} / exact {}",
        topo.aggregate(&words, false)?.code(),
        topo.aggregate(&words, true)?.code(),
        global_quantized_mean(&words, &cfg)?.code()
    );

    let sweep = cascade_sweep_exhaustive(&topo, 1 << 20)?;
    println!(
        "all {} inputs: corrected mismatches {}, uncorrected mismatches {}",
        sweep.cases, sweep.corrected_mismatches, sweep.uncorrected_mismatches
    );

    // 16 servers behind two levels of 4-port units, 8-bit words.
    let wide = CascadeTopology::oracle(SystemConfig::new(8, 4, 4, Quantizer::Floor)?)?;
    let s = cascade_sweep_sampled(&wide, 20_000, 1)?;
    println!("N=4, B=8, {} random inputs: corrected {} vs uncorrected {} mismatches", s.cases, s.corrected_mismatches, s.uncorrected_mismatches);
    println!("13 live servers padded to 16: {}", wide.aggregate_partial(&[GradientWord(200); 13], true)?.code());
    Ok(())
}
