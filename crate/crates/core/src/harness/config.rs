//! Run configuration: a TOML file, optionally layered over a named preset,
//! then overridden field by field from the command line.
//!
//! ```toml
//! preset = "table1-row1"   # optional; the rest of the file overrides it
//! seed = 7
//!
//! [system]
//! bit_width = 8
//! servers = 4
//!
//! [onn]
//! structure = "4-64-128-256-128-64-4"
//! approx_all = true
//!
//! [train]
//! epochs = 600
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{Quantizer, SystemConfig};
use crate::dataset::GenerationMode;
use crate::error::{OptincError, Result};
use crate::onn::{parse_structure, Activation, OnnSpec};
use crate::trainer::{place_value_weights, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: u64,
    /// Largest exhaustive dataset or sweep that may be generated.
    pub max_size: u64,
    pub threads: Option<usize>,
    pub system: SystemSection,
    pub onn: OnnSection,
    pub train: TrainSection,
    pub dataset: DatasetSection,
    pub cascade: CascadeSection,
    pub e2e: E2eSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            seed: 0,
            max_size: 1 << 24,
            threads: None,
            system: SystemSection::default(),
            onn: OnnSection::default(),
            train: TrainSection::default(),
            dataset: DatasetSection::default(),
            cascade: CascadeSection::default(),
            e2e: E2eSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub bit_width: u32,
    pub servers: u64,
    /// Network inputs `K`; defaults to one per PAM4 segment.
    pub onn_inputs: Option<usize>,
    pub quantizer: Quantizer,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection { bit_width: 8, servers: 4, onn_inputs: None, quantizer: Quantizer::Floor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnnSection {
    /// Layer widths such as `4-64-128-4`; defaults to `K-64-M`.
    pub structure: Option<String>,
    pub activation: Activation,
    /// 1-based weight layers built from block factors.
    pub approx_layers: Vec<usize>,
    /// Approximate every layer, overriding `approx_layers`.
    pub approx_all: bool,
    pub use_bias: bool,
}

impl Default for OnnSection {
    fn default() -> Self {
        OnnSection { structure: None, activation: Activation::Relu, approx_layers: Vec::new(), approx_all: false, use_bias: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BitWeighting {
    #[default]
    PlaceValue,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Defaults to 80% of `epochs`.
    pub stage_switch: Option<usize>,
    /// Run the reconstruction stage at all. When false every epoch uses the symbol loss.
    pub finetune: bool,
    pub bit_weighting: BitWeighting,
    /// Explicit weights; take precedence over `bit_weighting`.
    pub bit_weights: Option<Vec<f64>>,
    pub projection_period: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub ste: bool,
    pub eval_every: usize,
    pub target_accuracy: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            stage_switch: None,
            finetune: true,
            bit_weighting: BitWeighting::PlaceValue,
            bit_weights: None,
            projection_period: 10,
            learning_rate: 1e-3,
            lr_floor: 0.0,
            batch_size: 64,
            ste: true,
            eval_every: 0,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Draw this many grid points instead of enumerating the grid.
    pub sampled: Option<usize>,
    pub cascade: bool,
    pub csv: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { sampled: None, cascade: false, csv: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    /// Replace both levels' networks by the exact oracle.
    pub oracle: bool,
    pub exhaustive: bool,
    /// Random word tuples checked when not exhaustive.
    pub samples: u64,
    pub level1_checkpoint: Option<PathBuf>,
    pub level2_checkpoint: Option<PathBuf>,
}

impl Default for CascadeSection {
    fn default() -> Self {
        CascadeSection { oracle: true, exhaustive: true, samples: 10_000, level1_checkpoint: None, level2_checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2eSection {
    /// Any of `exact_mean`, `ring`, `optinc_oracle`, `optinc_trained`.
    pub aggregations: Vec<String>,
    pub steps: usize,
    pub hidden: usize,
    pub samples: usize,
    pub batch_per_server: usize,
    pub learning_rate: f64,
}

impl Default for E2eSection {
    fn default() -> Self {
        E2eSection {
            aggregations: vec!["exact_mean".into(), "ring".into(), "optinc_oracle".into()],
            steps: 300,
            hidden: 16,
            samples: 600,
            batch_per_server: 16,
            learning_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: PathBuf,
    /// Existing dataset to train or evaluate on; generated in memory if unset.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { out_dir: PathBuf::from("out"), dataset: None, checkpoint: None }
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = ["table1-row1", "table1-row2", "table1-row3", "table1-row4", "toy"];

/// The four published configurations plus the small exhaustive toy.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut rc = RunConfig { preset: Some(name.to_string()), ..RunConfig::default() };
    let (bits, servers, structure, approx): (u32, u64, &str, Vec<usize>) = match name {
        "table1-row1" => (8, 4, "4-64-128-256-128-64-4", (1..=6).collect()),
        "table1-row2" => (8, 8, "4-64-128-256-512-256-128-64-4", (2..=7).collect()),
        "table1-row3" => (8, 16, "4-64-128-256-512-1024-512-256-128-64-4", (2..=9).collect()),
        "table1-row4" => (16, 4, "4-64-128-256-512-256-128-64-8", (4..=6).collect()),
        "toy" => (4, 2, "2-32-32-2", (1..=3).collect()),
        _ => return Err(OptincError::Config(format!("unknown preset {name:?}; expected one of {PRESETS:?}"))),
    };
    rc.system.bit_width = bits;
    rc.system.servers = servers;
    rc.system.onn_inputs = Some(structure.split('-').next().and_then(|s| s.parse().ok()).expect("literal structure"));
    rc.onn.structure = Some(structure.to_string());
    rc.onn.approx_layers = approx;
    if name == "toy" {
        rc.onn.activation = Activation::Tanh;
        rc.train = TrainSection {
            epochs: 4000,
            projection_period: 5,
            learning_rate: 3e-2,
            batch_size: 49,
            ..TrainSection::default()
        };
    } else {
        rc.train = row_recipe();
    }
    Ok(rc)
}

/// Training recipe for the published structures.
fn row_recipe() -> TrainSection {
    TrainSection {
        epochs: 300,
        stage_switch: None,
        finetune: false,
        bit_weighting: BitWeighting::Uniform,
        bit_weights: None,
        projection_period: 2,
        learning_rate: 3e-3,
        lr_floor: 0.0,
        batch_size: 128,
        ste: true,
        eval_every: 20,
        target_accuracy: None,
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses TOML text, layering it over its `preset` when one is named.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_preset(text, None)
    }

    /// Like [`from_toml`](Self::from_toml) with `preset_override` replacing
    /// the file's `preset` key.
    pub fn from_toml_with_preset(text: &str, preset_override: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| OptincError::Config(e.to_string()))?;
        if let Some(name) = preset_override {
            table.insert("preset".into(), toml::Value::String(name.into()));
        }
        let rc: RunConfig = match table.get("preset").and_then(|p| p.as_str()) {
            Some(name) => {
                let base = preset(name)?;
                let mut merged = toml::Table::try_from(&base).map_err(|e| OptincError::Config(e.to_string()))?;
                merge_tables(&mut merged, table);
                merged.try_into().map_err(|e: toml::de::Error| OptincError::Config(e.to_string()))?
            }
            None => table.try_into().map_err(|e: toml::de::Error| OptincError::Config(e.to_string()))?,
        };
        rc.validate()?;
        Ok(rc)
    }

    pub fn load(path: &Path, preset_override: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OptincError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_preset(&text, preset_override)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// Cross-field checks of every embedded type.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.system_config()?;
        self.onn_spec(&cfg)?;
        self.train_config(&cfg)?.validate(&cfg)?;
        if let Some(path) = &self.paths.dataset {
            if !path.exists() {
                return Err(OptincError::Config(format!("dataset {} does not exist", path.display())));
            }
        }
        for a in &self.e2e.aggregations {
            if !["exact_mean", "ring", "optinc_oracle", "optinc_trained"].contains(&a.as_str()) {
                return Err(OptincError::Config(format!("unknown aggregation {a:?}")));
            }
        }
        Ok(())
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        let s = &self.system;
        let k = s.onn_inputs.unwrap_or(s.bit_width as usize / 2);
        SystemConfig::new(s.bit_width, s.servers, k, s.quantizer).map_err(|e| OptincError::Config(e.to_string()))
    }

    pub fn layer_dims(&self, cfg: &SystemConfig) -> Result<Vec<usize>> {
        match &self.onn.structure {
            Some(s) => parse_structure(s).map_err(|e| OptincError::Config(e.to_string())),
            None => Ok(vec![cfg.onn_inputs(), 64, cfg.segments()]),
        }
    }

    pub fn approx_layers(&self, num_layers: usize) -> BTreeSet<usize> {
        if self.onn.approx_all {
            (1..=num_layers).collect()
        } else {
            self.onn.approx_layers.iter().copied().collect()
        }
    }

    pub fn onn_spec(&self, cfg: &SystemConfig) -> Result<OnnSpec> {
        let dims = self.layer_dims(cfg)?;
        let approx = self.approx_layers(dims.len().saturating_sub(1));
        let mut spec = OnnSpec::new(dims, self.onn.activation, approx, cfg).map_err(|e| OptincError::Config(e.to_string()))?;
        spec.use_bias = self.onn.use_bias;
        spec.check_against(cfg).map_err(|e| OptincError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self, cfg: &SystemConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let mut tc = TrainConfig::new(t.epochs, cfg);
        match (t.stage_switch, t.finetune) {
            (Some(_), false) => return Err(OptincError::Config("stage_switch is set but finetune = false".into())),
            (Some(e1), true) => tc.stage_switch = e1,
            (None, false) => tc.stage_switch = t.epochs,
            (None, true) => {}
        }
        tc.bit_weights = match (&t.bit_weights, t.bit_weighting) {
            (Some(w), _) => w.clone(),
            (None, BitWeighting::PlaceValue) => place_value_weights(cfg.segments()),
            (None, BitWeighting::Uniform) => vec![1.0 / cfg.segments() as f64; cfg.segments()],
        };
        tc.projection_period = t.projection_period;
        tc.learning_rate = t.learning_rate;
        tc.lr_floor = t.lr_floor;
        tc.batch_size = t.batch_size;
        tc.seed = self.seed;
        tc.ste_enabled = t.ste;
        tc.eval_every = t.eval_every;
        tc.target_accuracy = t.target_accuracy;
        tc.validate(cfg)?;
        Ok(tc)
    }

    pub fn generation_mode(&self) -> GenerationMode {
        match self.dataset.sampled {
            Some(count) => GenerationMode::Sampled { count },
            None => GenerationMode::Exhaustive,
        }
    }
}
