//! The exact aggregation function a network must learn, and its datasets.
//!
//! ```text
//! cargo run --example dataset
//! ```

use optinc::codec::{GradientWord, Quantizer, SystemConfig};
use optinc::dataset::{
    dataset_size, expected_outputs, generate_cascade_datasets, generate_dataset, quantized_average, GenerationMode,
};

fn main() -> optinc::Result<()> {
    let cfg = SystemConfig::new(8, 4, 4, Quantizer::Floor)?;
    let words = [10, 11, 12, 14].map(GradientWord);
    let avg = quantized_average(&words, &cfg)?;
    let t = expected_outputs(&words, &cfg, false)?;
    println!("floor(mean of {:?}) = {} with target symbols {:?}", words.map(|w| w.code()), avg.code(), t.units);

    for (b, n, k) in [(4, 2, 2), (8, 4, 4), (8, 4, 2), (8, 8, 4), (16, 4, 4)] {
        let c = SystemConfig::new(b, n, k, Quantizer::Floor)?;
        println!("B={b:2} N={n:2} K={k}: {} distinct inputs", dataset_size(&c)?);
    }

    let row1 = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 24)?;
    let s = &row1.samples[1234];
    println!("row-1 grid has {} samples; sample 1234: inputs {:?} -> word {}", row1.len(), s.inputs.values(), s.targets.word.code());

    let toy = SystemConfig::new(4, 2, 2, Quantizer::Floor)?;
    let (l1, l2) = generate_cascade_datasets(&toy, GenerationMode::Exhaustive, 0, 1 << 20)?;
    let carrying = l1.samples.iter().filter(|s| s.targets.carry_num > 0).count();
    println!("cascade: level 1 has {} samples ({carrying} with a carry), level 2 has {}", l1.len(), l2.len());
    Ok(())
}
