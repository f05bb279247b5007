use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optinc::codec::Quantizer;
use optinc::harness::{self, RunConfig};
use optinc::onn::Activation;
use optinc::{OptincError, Result};

#[derive(Parser)]
#[command(name = "optinc", version, about = "Optical in-network gradient aggregation simulator")]
struct Cli {
    /// TOML run configuration (may name a preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset, e.g. table1-row1 or toy.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Refuse exhaustive datasets and sweeps larger than this.
    #[arg(long, global = true)]
    max_size: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct SystemArgs {
    /// Bit width B.
    #[arg(long = "B", alias = "bit-width")]
    bit_width: Option<u32>,
    /// Server count N.
    #[arg(long = "N", alias = "servers")]
    servers: Option<u64>,
    /// Network inputs K.
    #[arg(long = "K", alias = "inputs")]
    inputs: Option<usize>,
    #[arg(long)]
    quantizer: Option<Quantizer>,
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Layer widths such as 4-64-128-4.
    #[arg(long)]
    structure: Option<String>,
    #[arg(long)]
    activation: Option<Activation>,
    /// Comma-separated 1-based layers to approximate.
    #[arg(long, value_delimiter = ',')]
    approx: Option<Vec<usize>>,
    #[arg(long)]
    approx_all: bool,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an exhaustive or sampled aggregation dataset.
    GenDataset {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        cascade: bool,
        #[arg(long)]
        sampled: Option<usize>,
        #[arg(long)]
        csv: bool,
    },
    /// Train a network and write its checkpoint and report.
    Train {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        stage_switch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        projection_period: Option<usize>,
    },
    /// Report exact-match accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// MZI counts and area ratio.
    Cost {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compile a checkpoint's layers into MZI mesh programs.
    Decompose {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compare corrected and uncorrected cascades against the global mean.
    CascadeSim {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        level1: Option<PathBuf>,
        #[arg(long)]
        level2: Option<PathBuf>,
    },
    /// Ring all-reduce rounds against a single in-network pass.
    Rounds {
        #[arg(long = "N", alias = "servers", value_delimiter = ',', default_value = "2,4,8,16")]
        servers: Vec<u64>,
    },
    /// Toy data-parallel training under several aggregation paths.
    E2e {
        #[command(flatten)]
        system: SystemArgs,
        /// exact_mean, ring, optinc_oracle or optinc_trained (comma-separated).
        #[arg(long, value_delimiter = ',')]
        agg: Option<Vec<String>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn apply_system(rc: &mut RunConfig, s: &SystemArgs) {
    if let Some(b) = s.bit_width {
        rc.system.bit_width = b;
        if s.inputs.is_none() {
            rc.system.onn_inputs = None;
        }
    }
    if let Some(n) = s.servers {
        rc.system.servers = n;
    }
    if let Some(k) = s.inputs {
        rc.system.onn_inputs = Some(k);
    }
    if let Some(q) = s.quantizer {
        rc.system.quantizer = q;
    }
}

fn apply_model(rc: &mut RunConfig, m: &ModelArgs) {
    if let Some(s) = &m.structure {
        rc.onn.structure = Some(s.clone());
    }
    if let Some(a) = m.activation {
        rc.onn.activation = a;
    }
    if let Some(l) = &m.approx {
        rc.onn.approx_layers = l.clone();
        rc.onn.approx_all = false;
    }
    if m.approx_all {
        rc.onn.approx_all = true;
    }
    if m.dataset.is_some() {
        rc.paths.dataset = m.dataset.clone();
    }
    if m.checkpoint.is_some() {
        rc.paths.checkpoint = m.checkpoint.clone();
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut rc = match (&cli.config, &cli.preset) {
        (Some(path), name) => RunConfig::load(path, name.as_deref())?,
        (None, Some(name)) => harness::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        rc.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        rc.paths.out_dir = dir.clone();
    }
    if let Some(m) = cli.max_size {
        rc.max_size = m;
    }
    if cli.threads.is_some() {
        rc.threads = cli.threads;
    }
    Ok(rc)
}

fn run(cli: Cli) -> Result<()> {
    let mut rc = load_config(&cli)?;
    match &cli.command {
        Command::GenDataset { system, cascade, sampled, csv } => {
            apply_system(&mut rc, system);
            rc.dataset.cascade |= *cascade;
            rc.dataset.csv |= *csv;
            if sampled.is_some() {
                rc.dataset.sampled = *sampled;
            }
        }
        Command::Train { system, model, epochs, stage_switch, lr, batch_size, projection_period } => {
            apply_system(&mut rc, system);
            apply_model(&mut rc, model);
            if let Some(e) = epochs {
                rc.train.epochs = *e;
            }
            if stage_switch.is_some() {
                rc.train.stage_switch = *stage_switch;
                rc.train.finetune = true;
            }
            if let Some(v) = lr {
                rc.train.learning_rate = *v;
            }
            if let Some(v) = batch_size {
                rc.train.batch_size = *v;
            }
            if let Some(v) = projection_period {
                rc.train.projection_period = *v;
            }
        }
        Command::Eval { system, model } | Command::Cost { system, model } => {
            apply_system(&mut rc, system);
            apply_model(&mut rc, model);
        }
        Command::Decompose { model } => apply_model(&mut rc, model),
        Command::CascadeSim { system, oracle, exhaustive, samples, level1, level2 } => {
            apply_system(&mut rc, system);
            if *oracle {
                rc.cascade.oracle = true;
            }
            if level1.is_some() || level2.is_some() {
                rc.cascade.oracle = *oracle;
                rc.cascade.level1_checkpoint = level1.clone();
                rc.cascade.level2_checkpoint = level2.clone();
            }
            if let Some(s) = samples {
                rc.cascade.samples = *s;
                rc.cascade.exhaustive = *exhaustive;
            }
        }
        Command::Rounds { .. } => {}
        Command::E2e { system, agg, steps, checkpoint } => {
            apply_system(&mut rc, system);
            if let Some(a) = agg {
                rc.e2e.aggregations = a.clone();
            }
            if let Some(s) = steps {
                rc.e2e.steps = *s;
            }
            if checkpoint.is_some() {
                rc.paths.checkpoint = checkpoint.clone();
            }
        }
    }
    rc.validate()?;
    if let Some(t) = rc.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| OptincError::Config(e.to_string()))?;
    }

    match &cli.command {
        Command::GenDataset { .. } => {
            let cfg = rc.system_config()?;
            println!("dataset_size {}", optinc::dataset::dataset_size(&cfg)?);
            let s = harness::gen_dataset(&rc)?;
            for (path, n) in s.files {
                println!("wrote {} ({n} samples)", path.display());
            }
        }
        Command::Train { .. } => {
            let s = harness::train_cmd(&rc)?;
            println!(
                "final accuracy {:.6} after {} epochs ({:.1} s); checkpoint {}",
                s.report.final_accuracy,
                s.report.epochs.len(),
                s.report.wall_clock_secs,
                s.checkpoint.display()
            );
        }
        Command::Eval { .. } => {
            let r = harness::eval_cmd(&rc)?;
            println!("accuracy {:.6} ({}/{})", r.accuracy, r.exact_matches, r.samples);
            for (i, e) in r.symbol_error_rate.iter().enumerate() {
                println!("symbol {i} error rate {e:.6}");
            }
        }
        Command::Cost { .. } => {
            let r = harness::cost_cmd(&rc)?;
            print!("{}", r.to_csv());
        }
        Command::Decompose { .. } => {
            let s = harness::decompose_cmd(&rc)?;
            println!("{} meshes, {} MZIs, max round-trip error {:.3e}", s.meshes, s.total_mzis, s.max_roundtrip_error);
        }
        Command::CascadeSim { .. } => {
            let s = harness::cascade_cmd(&rc)?;
            println!("cases {}", s.cases);
            println!("corrected mismatches {}", s.corrected_mismatches);
            println!("uncorrected mismatches {}", s.uncorrected_mismatches);
        }
        Command::Rounds { servers } => {
            for r in harness::rounds_cmd(&rc, servers)? {
                println!("N={} ring {} optinc {} overhead {}", r.servers, r.ring_rounds, r.optinc_rounds, r.relative_overhead);
            }
        }
        Command::E2e { .. } => {
            for c in harness::e2e_cmd(&rc)? {
                let (_, loss, acc) = c.points.last().copied().unwrap_or((0, f64::NAN, 0.0));
                println!("{}: final loss {loss:.6} accuracy {acc:.4}", c.mode);
                for w in &c.warnings {
                    println!("  warning: {w}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
