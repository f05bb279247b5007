//! Trains the smallest exhaustive configuration (B=4, N=2) with every layer
//! approximated, then checks the network on the whole grid.
//!
//! ```text
//! cargo run --release --example train_toy
//! ```

use optinc::codec::GradientWord;
use optinc::dataset::{generate_dataset, GenerationMode};
use optinc::harness::preset;
use optinc::onn::evaluate;
use optinc::topo::{CarryMode, OptIncUnit};
use optinc::trainer::train;

fn main() -> optinc::Result<()> {
    env_logger::init();
    let rc = preset("toy")?;
    let cfg = rc.system_config()?;
    let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 20)?;
    let (model, report) = train(&rc.onn_spec(&cfg)?, &ds, &rc.train_config(&cfg)?)?;
    println!("{} epochs in {:.2} s, {} projections", report.epochs.len(), report.wall_clock_secs, report.projection_events());

    let eval = evaluate(&model, &ds)?;
    println!("exact-match accuracy {:.4} ({}/{})", eval.accuracy, eval.exact_matches, eval.samples);

    let unit = OptIncUnit::with_model(cfg, model, CarryMode::None)?;
    let words = [GradientWord(13), GradientWord(6)];
    println!("servers send 13 and 6; each receives {:?}", unit.aggregate_once(&words)?);
    Ok(())
}
