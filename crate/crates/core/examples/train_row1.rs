//! Reproduces the first published configuration: B=8, N=4, structure
//! 4-64-128-256-128-64-4 with every layer approximated, trained on the full
//! 28561-point grid. Takes about twelve minutes on one core.
//!
//! ```text
//! cargo run --release --example train_row1 -- [out_dir]
//! ```

use std::path::PathBuf;

use optinc::artifact::atomic_write;
use optinc::dataset::{generate_dataset, GenerationMode};
use optinc::harness::preset;
use optinc::onn::evaluate;
use optinc::photonic::mzi_cost;
use optinc::trainer::train;

fn main() -> optinc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/row1".into()));
    let rc = preset("table1-row1")?;
    let cfg = rc.system_config()?;
    let spec = rc.onn_spec(&cfg)?;
    let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 24)?;
    let (model, report) = train(&spec, &ds, &rc.train_config(&cfg)?)?;

    let eval = evaluate(&model, &ds)?;
    let cost = mzi_cost(&spec.layer_dims, &spec.approx_layers);
    println!("accuracy {:.6} ({}/{}) in {:.0} s", eval.accuracy, eval.exact_matches, eval.samples, report.wall_clock_secs);
    println!("symbol error rates {:?}", eval.symbol_error_rate);
    println!("area ratio {:.2}%", 100.0 * cost.area_ratio);

    model.save(&out.join("row1.onn"))?;
    atomic_write(&out.join("train_report.csv"), report.to_csv().as_bytes())?;
    Ok(())
}
