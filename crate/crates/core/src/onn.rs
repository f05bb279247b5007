//! Feed-forward surrogate of the optical network inside an aggregation unit.
//!
//! Inputs are divided by `input_range` (`4^g - 1`) so that signals sit in
//! roughly `[0, 1]`; outputs are multiplied by `output_range` (3) so they
//! come out in PAM4 level units. Hidden layers are affine maps followed by
//! the activation; the last layer is affine only. Layers selected for
//! approximation may hold block factors `diag(d) * U`, in which case the
//! stored weight is exactly their assembly.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact::atomic_write;
use crate::codec::{decode_pam4, snap_to_grid, AnalogFrame, SystemConfig};
use crate::dataset::{AggregationDataset, AggregationSample, PreprocessedVector};
use crate::error::{OptincError, Result};
use crate::photonic::approx::{approximate_layer, ApproxFactor};

pub use crate::photonic::approx::assemble as assemble_effective_weight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Gelu => {
                let u = GELU_C * (z + 0.044715 * z * z * z);
                0.5 * z * (1.0 + u.tanh())
            }
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Gelu => {
                let u = GELU_C * (z + 0.044715 * z * z * z);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * z * z);
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Gelu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Gelu),
            2 => Ok(Activation::Tanh),
            _ => Err(OptincError::Format(format!("unknown activation tag {t}"))),
        }
    }
}

impl FromStr for Activation {
    type Err = OptincError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(OptincError::Config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnnSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// 1-based indices of weight layers constrained to block factors.
    pub approx_layers: BTreeSet<usize>,
    pub use_bias: bool,
    pub input_range: f64,
    pub output_range: f64,
}

impl OnnSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, approx_layers: BTreeSet<usize>, cfg: &SystemConfig) -> Result<Self> {
        let spec = OnnSpec {
            layer_dims,
            activation,
            approx_layers,
            use_bias: true,
            input_range: cfg.group_max() as f64,
            output_range: 3.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(OptincError::domain(format!("invalid layer dims {:?}", self.layer_dims)));
        }
        let layers = self.num_layers();
        if let Some(bad) = self.approx_layers.iter().find(|&&l| l == 0 || l > layers) {
            return Err(OptincError::domain(format!("approximated layer {bad} outside 1..={layers}")));
        }
        if !(self.input_range > 0.0 && self.output_range > 0.0) {
            return Err(OptincError::domain("signal ranges must be positive"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn check_against(&self, cfg: &SystemConfig) -> Result<()> {
        if self.inputs() != cfg.onn_inputs() || self.outputs() != cfg.segments() {
            return Err(OptincError::domain(format!(
                "network maps {} -> {}, configuration needs {} -> {}",
                self.inputs(),
                self.outputs(),
                cfg.onn_inputs(),
                cfg.segments()
            )));
        }
        Ok(())
    }

    /// Structure string such as `4-64-128-4`.
    pub fn structure(&self) -> String {
        self.layer_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Parses `4-64-128-4` style structures.
pub fn parse_structure(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|p| p.trim().parse::<usize>().map_err(|_| OptincError::Config(format!("bad structure {s:?}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub factors: Option<Vec<ApproxFactor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnnModel {
    pub spec: OnnSpec,
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Intermediate values of a batched forward pass (samples are columns).
pub struct ForwardCache {
    /// Layer inputs: `inputs[0]` is the normalized network input.
    pub inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every layer.
    pub pre: Vec<DMatrix<f64>>,
}

impl OnnModel {
    /// He-initialized weights (Xavier for `tanh`), zero biases.
    pub fn new(spec: OnnSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let var = match spec.activation {
                    Activation::Tanh => 1.0 / fan_in as f64,
                    _ => 2.0 / fan_in as f64,
                };
                let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
                Layer {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(&mut rng)),
                    bias: DVector::zeros(fan_out),
                    factors: None,
                }
            })
            .collect();
        Ok(OnnModel { spec, layers })
    }

    pub fn zeros(spec: OnnSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| Layer { weight: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]), factors: None })
            .collect();
        Ok(OnnModel { spec, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + if self.spec.use_bias { l.bias.len() } else { 0 }).sum()
    }

    /// Columns of normalized inputs for a batch of preprocessed vectors.
    pub fn input_matrix(&self, inputs: &[&PreprocessedVector]) -> Result<DMatrix<f64>> {
        let k = self.spec.inputs();
        let mut x = DMatrix::zeros(k, inputs.len());
        for (c, v) in inputs.iter().enumerate() {
            if v.len() != k {
                return Err(OptincError::domain(format!("input has {} values, network expects {k}", v.len())));
            }
            for (r, val) in v.values().into_iter().enumerate() {
                x[(r, c)] = val / self.spec.input_range;
            }
        }
        Ok(x)
    }

    /// Batched forward pass on normalized inputs, returning raw outputs in
    /// PAM4 units together with the cache needed for backpropagation.
    pub fn forward_cached(&self, x: DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &h;
            if self.spec.use_bias {
                for mut col in z.column_iter_mut() {
                    col += &layer.bias;
                }
            }
            let next = if i == last { z.clone() } else { z.map(|v| self.spec.activation.apply(v)) };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        (h * self.spec.output_range, ForwardCache { inputs, pre })
    }

    pub fn forward_batch(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &h;
            if self.spec.use_bias {
                for mut col in z.column_iter_mut() {
                    col += &layer.bias;
                }
            }
            if i != last {
                z.apply(|v| *v = self.spec.activation.apply(*v));
            }
            h = z;
        }
        h * self.spec.output_range
    }

    /// Gradients of a scalar loss given `d_out = dL/d(raw outputs)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Gradients {
        let n = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); n];
        let mut biases = vec![DVector::zeros(0); n];
        let mut delta = d_out * self.spec.output_range;
        for i in (0..n).rev() {
            if i != n - 1 {
                let act = self.spec.activation;
                delta.zip_apply(&cache.pre[i], |d, z| *d *= act.derivative(z));
            }
            weights[i] = &delta * cache.inputs[i].transpose();
            biases[i] = if self.spec.use_bias { delta.column_sum() } else { DVector::zeros(delta.nrows()) };
            if i > 0 {
                delta = self.layers[i].weight.transpose() * &delta;
            }
        }
        Gradients { weights, biases }
    }

    pub fn forward(&self, x: &PreprocessedVector) -> Result<AnalogFrame> {
        let out = self.forward_batch(self.input_matrix(&[x])?);
        Ok(AnalogFrame::new(out.column(0).iter().cloned().collect()))
    }

    /// Replaces every selected layer by the assembly of its block factors.
    pub fn project(&mut self) -> Result<()> {
        for idx in self.spec.approx_layers.clone() {
            let layer = &mut self.layers[idx - 1];
            let (rows, cols) = layer.weight.shape();
            let factors = approximate_layer(&layer.weight)?;
            layer.weight = assemble_effective_weight(rows, cols, &factors)?;
            layer.factors = Some(factors);
        }
        Ok(())
    }

    /// Drops stored factors after weights moved away from them.
    pub fn clear_factors(&mut self) {
        for l in &mut self.layers {
            l.factors = None;
        }
    }

    /// Largest `|W - assemble(factors)|` over projected layers.
    pub fn projection_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in &self.layers {
            if let Some(f) = &l.factors {
                let (r, c) = l.weight.shape();
                worst = worst.max((&l.weight - assemble_effective_weight(r, c, f)?).amax());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub samples: usize,
    pub exact_matches: usize,
    pub accuracy: f64,
    /// Fraction of samples whose snapped channel differs from the target, per channel.
    pub symbol_error_rate: Vec<f64>,
    /// Per channel, `confusion[target][predicted]` over the integer PAM4 digit.
    pub confusion: Vec<[[u64; 4]; 4]>,
}

/// Snaps a batch of raw outputs and compares them with the targets.
pub fn score_outputs(outputs: &DMatrix<f64>, samples: &[&AggregationSample], divisions: u64, cfg: &SystemConfig, report: &mut AccuracyReport) -> Result<()> {
    let m = cfg.segments();
    for (c, s) in samples.iter().enumerate() {
        let analog = AnalogFrame::with_last_step(outputs.column(c).iter().cloned().collect(), divisions);
        let snapped = snap_to_grid(&analog, cfg)?;
        let got_units: Vec<u64> = {
            let mut u: Vec<u64> = snapped.frame.symbols().iter().map(|&d| d as u64 * s.targets.den).collect();
            // rescale the carry to the target denominator
            u[m - 1] += snapped.carry_num * s.targets.den / snapped.carry_den;
            u
        };
        let word = decode_pam4(&snapped.frame, cfg)?;
        let mut all = word == s.targets.word;
        for i in 0..m {
            let want = s.targets.units[i];
            let digit_want = (want / s.targets.den).min(3) as usize;
            let digit_got = snapped.frame.symbols()[i] as usize;
            report.confusion[i][digit_want][digit_got] += 1;
            if got_units[i] != want {
                report.symbol_error_rate[i] += 1.0;
                all = false;
            }
        }
        if all {
            report.exact_matches += 1;
        }
        report.samples += 1;
    }
    Ok(())
}

/// Exact-match accuracy of `snap(forward(x))` against every sample's targets.
pub fn evaluate(model: &OnnModel, ds: &AggregationDataset) -> Result<AccuracyReport> {
    let cfg = &ds.cfg;
    model.spec.check_against(cfg)?;
    let m = cfg.segments();
    let mut report = AccuracyReport {
        samples: 0,
        exact_matches: 0,
        accuracy: 0.0,
        symbol_error_rate: vec![0.0; m],
        confusion: vec![[[0; 4]; 4]; m],
    };
    let divisions = ds.kind.output_divisions(cfg);
    for chunk in ds.samples.chunks(2048) {
        let refs: Vec<&AggregationSample> = chunk.iter().collect();
        let inputs: Vec<&PreprocessedVector> = chunk.iter().map(|s| &s.inputs).collect();
        let out = model.forward_batch(model.input_matrix(&inputs)?);
        score_outputs(&out, &refs, divisions, cfg, &mut report)?;
    }
    if report.samples > 0 {
        report.accuracy = report.exact_matches as f64 / report.samples as f64;
        for e in &mut report.symbol_error_rate {
            *e /= report.samples as f64;
        }
    }
    Ok(report)
}

const MAGIC: &[u8; 8] = b"OPTINNM1";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

impl OnnModel {
    /// Checkpoint layout (little-endian):
    ///
    /// ```text
    /// "OPTINNM1" | n_dims u32 | dims u32.. | activation u8 | use_bias u8
    ///            | input_range f64 | output_range f64 | n_approx u32 | approx u32..
    /// per layer: rows u32 | cols u32 | weight f64 row-major | bias f64.. | projected u8
    ///            [ n_blocks u32 | per block: row_blk u32 | col_blk u32 | s u32 | d f64.. | U f64 row-major ]
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, self.spec.layer_dims.len());
        for &d in &self.spec.layer_dims {
            put_u32(&mut b, d);
        }
        b.push(self.spec.activation.tag());
        b.push(self.spec.use_bias as u8);
        put_f64(&mut b, self.spec.input_range);
        put_f64(&mut b, self.spec.output_range);
        put_u32(&mut b, self.spec.approx_layers.len());
        for &l in &self.spec.approx_layers {
            put_u32(&mut b, l);
        }
        for layer in &self.layers {
            let (rows, cols) = layer.weight.shape();
            put_u32(&mut b, rows);
            put_u32(&mut b, cols);
            for r in 0..rows {
                for c in 0..cols {
                    put_f64(&mut b, layer.weight[(r, c)]);
                }
            }
            for &v in layer.bias.iter() {
                put_f64(&mut b, v);
            }
            match &layer.factors {
                None => b.push(0),
                Some(fs) => {
                    b.push(1);
                    put_u32(&mut b, fs.len());
                    for f in fs {
                        put_u32(&mut b, f.block_pos.0);
                        put_u32(&mut b, f.block_pos.1);
                        put_u32(&mut b, f.d.len());
                        for &d in &f.d {
                            put_f64(&mut b, d);
                        }
                        for r in 0..f.u.nrows() {
                            for c in 0..f.u.ncols() {
                                put_f64(&mut b, f.u[(r, c)]);
                            }
                        }
                    }
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(OptincError::Format("not a model checkpoint".into()));
        }
        let n_dims = r.u32()?;
        if n_dims > 1 << 16 {
            return Err(OptincError::Format("implausible layer count".into()));
        }
        let layer_dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_tag(r.u8()?)?;
        let use_bias = r.u8()? != 0;
        let input_range = r.f64()?;
        let output_range = r.f64()?;
        let n_approx = r.u32()?;
        let approx_layers = (0..n_approx).map(|_| r.u32()).collect::<Result<BTreeSet<_>>>()?;
        let spec = OnnSpec { layer_dims, activation, approx_layers, use_bias, input_range, output_range };
        spec.validate().map_err(|e| OptincError::Format(e.to_string()))?;
        let mut layers = Vec::new();
        for w in spec.layer_dims.clone().windows(2) {
            let (rows, cols) = (r.u32()?, r.u32()?);
            if (rows, cols) != (w[1], w[0]) {
                return Err(OptincError::Format("layer shape disagrees with structure".into()));
            }
            let weight = DMatrix::from_row_iterator(rows, cols, r.f64s(rows * cols)?);
            let bias = DVector::from_iterator(rows, r.f64s(rows)?);
            let factors = if r.u8()? == 1 {
                let nb = r.u32()?;
                let mut fs = Vec::with_capacity(nb);
                for _ in 0..nb {
                    let pos = (r.u32()?, r.u32()?);
                    let s = r.u32()?;
                    let d: Vec<f64> = r.f64s(s)?.collect();
                    let u = DMatrix::from_row_iterator(s, s, r.f64s(s * s)?);
                    fs.push(ApproxFactor { d, u, block_pos: pos });
                }
                Some(fs)
            } else {
                None
            };
            layers.push(Layer { weight, bias, factors });
        }
        if r.pos != bytes.len() {
            return Err(OptincError::Format("trailing bytes in checkpoint".into()));
        }
        let model = OnnModel { spec, layers };
        if model.projection_residual()? != 0.0 {
            return Err(OptincError::Format("stored weights differ from their block factors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        OnnModel::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| OptincError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<impl Iterator<Item = f64> + 'a> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| OptincError::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))))
    }
}
