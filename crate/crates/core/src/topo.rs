//! System-level simulation: a single aggregation unit with its broadcast
//! splitter, the two-level cascade, the ring all-reduce baseline, and a toy
//! data-parallel training loop that exercises them end to end.
//!
//! Everything here is functional: rounds and bytes are counted from the
//! algorithm, not scheduled on a clock.

use std::fmt::Write as _;
use std::ops::AddAssign;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::codec::{
    code_to_real, decode_pam4, encode_pam4, real_to_word, snap_to_grid, AnalogFrame, CarryFrame, FixedPointScale,
    GradientWord, Quantizer, SystemConfig,
};
use crate::dataset::{generate_dataset, preprocess_carry, quantized_average, reconstruct_mean, GenerationMode, PreprocessedVector};
use crate::error::{OptincError, Result};
use crate::onn::{evaluate, OnnModel};

/// How a unit treats the fraction that floor quantization discards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CarryMode {
    #[default]
    None,
    /// Output the fraction on the last channel with grid step `1/N`.
    EmitCarry,
    /// Accept inputs whose last channel has grid step `1/N`.
    AcceptCarry,
}

/// What computes the averaged symbols inside a unit.
#[derive(Debug, Clone)]
pub enum Engine {
    /// Exact rational arithmetic, for isolating the system from the network.
    Oracle,
    Model(OnnModel),
}

/// Preprocessing unit, network, and broadcast splitter as one device.
#[derive(Debug, Clone)]
pub struct OptIncUnit {
    cfg: SystemConfig,
    engine: Engine,
    carry_mode: CarryMode,
}

impl OptIncUnit {
    pub fn oracle(cfg: SystemConfig, carry_mode: CarryMode) -> Result<Self> {
        check_carry_mode(&cfg, carry_mode)?;
        Ok(OptIncUnit { cfg, engine: Engine::Oracle, carry_mode })
    }

    pub fn with_model(cfg: SystemConfig, model: OnnModel, carry_mode: CarryMode) -> Result<Self> {
        check_carry_mode(&cfg, carry_mode)?;
        model.spec.check_against(&cfg)?;
        Ok(OptIncUnit { cfg, engine: Engine::Model(model), carry_mode })
    }

    pub fn cfg(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn carry_mode(&self) -> CarryMode {
        self.carry_mode
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn output_divisions(&self) -> u64 {
        if self.carry_mode == CarryMode::EmitCarry {
            self.cfg.servers()
        } else {
            1
        }
    }

    fn check_frames(&self, frames: &[CarryFrame]) -> Result<()> {
        let allowed = if self.carry_mode == CarryMode::AcceptCarry { self.cfg.servers() } else { 1 };
        if let Some(f) = frames.iter().find(|f| f.carry_num > 0 && f.carry_den != allowed) {
            return Err(OptincError::domain(format!(
                "input carry {}/{} not accepted by a unit in {:?} mode",
                f.carry_num, f.carry_den, self.carry_mode
            )));
        }
        Ok(())
    }

    /// Normalizes mixed plain and carrying frames to one carry denominator.
    fn align(&self, frames: &[CarryFrame]) -> Vec<CarryFrame> {
        let den = frames.iter().map(|f| f.carry_den).max().unwrap_or(1);
        frames
            .iter()
            .map(|f| {
                let scale = den / f.carry_den.max(1);
                CarryFrame { frame: f.frame.clone(), carry_num: f.carry_num * scale, carry_den: den }
            })
            .collect()
    }

    fn preprocess(&self, frames: &[CarryFrame]) -> Result<PreprocessedVector> {
        self.check_frames(frames)?;
        preprocess_carry(&self.align(frames), &self.cfg)
    }

    fn oracle_frame(&self, inputs: &PreprocessedVector) -> Result<CarryFrame> {
        let (num, den) = reconstruct_mean(inputs, &self.cfg);
        let word = GradientWord(self.cfg.quantizer().apply(num, den));
        let frame = encode_pam4(word, &self.cfg)?;
        if self.carry_mode == CarryMode::EmitCarry {
            // den == N here because inputs are plain frames
            let n = self.cfg.servers();
            Ok(CarryFrame { frame, carry_num: (num - word.0 * den) * n / den, carry_den: n })
        } else {
            Ok(CarryFrame::plain(frame))
        }
    }

    /// One pass through preprocessing, the engine, and the transceiver snap.
    pub fn combine(&self, frames: &[CarryFrame]) -> Result<CarryFrame> {
        Ok(self.combine_many(&[frames.to_vec()])?.remove(0))
    }

    /// Batched [`combine`](Self::combine); the network runs once over all sets.
    pub fn combine_many(&self, frame_sets: &[Vec<CarryFrame>]) -> Result<Vec<CarryFrame>> {
        let inputs = frame_sets.iter().map(|f| self.preprocess(f)).collect::<Result<Vec<_>>>()?;
        match &self.engine {
            Engine::Oracle => inputs.iter().map(|x| self.oracle_frame(x)).collect(),
            Engine::Model(model) => {
                if inputs.is_empty() {
                    return Ok(Vec::new());
                }
                let refs: Vec<&PreprocessedVector> = inputs.iter().collect();
                let out = model.forward_batch(model.input_matrix(&refs)?);
                let div = self.output_divisions();
                out.column_iter()
                    .map(|col| snap_to_grid(&AnalogFrame::with_last_step(col.iter().cloned().collect(), div), &self.cfg))
                    .collect()
            }
        }
    }

    /// Aggregates one word from each of the `N` servers and broadcasts the
    /// result; returns the word each server decodes.
    pub fn aggregate_once(&self, words: &[GradientWord]) -> Result<Vec<GradientWord>> {
        let frame = self.combine(&self.frames_for(words)?)?;
        broadcast(&frame, self.cfg.servers() as usize, &self.cfg)
    }

    /// Aggregated word for many independent word sets (one per element).
    pub fn aggregate_many(&self, word_sets: &[Vec<GradientWord>]) -> Result<Vec<GradientWord>> {
        let frames = word_sets.iter().map(|w| self.frames_for(w)).collect::<Result<Vec<_>>>()?;
        self.combine_many(&frames)?.iter().map(|f| decode_pam4(&f.frame, &self.cfg)).collect()
    }

    fn frames_for(&self, words: &[GradientWord]) -> Result<Vec<CarryFrame>> {
        if words.len() as u64 != self.cfg.servers() {
            return Err(OptincError::domain(format!("expected {} words, got {}", self.cfg.servers(), words.len())));
        }
        words.iter().map(|&w| Ok(CarryFrame::plain(encode_pam4(w, &self.cfg)?))).collect()
    }
}

fn check_carry_mode(cfg: &SystemConfig, mode: CarryMode) -> Result<()> {
    if mode != CarryMode::None && cfg.quantizer() != Quantizer::Floor {
        return Err(OptincError::domain("carry propagation requires the floor quantizer"));
    }
    Ok(())
}

/// The splitter copies one optical frame to every server, each of which
/// decodes it independently.
fn broadcast(frame: &CarryFrame, servers: usize, cfg: &SystemConfig) -> Result<Vec<GradientWord>> {
    (0..servers).map(|_| decode_pam4(&frame.frame.clone(), cfg)).collect()
}

/// Two levels of units with fan-in `N`, serving up to `N^2` servers.
#[derive(Debug, Clone)]
pub struct CascadeTopology {
    cfg: SystemConfig,
    level1: Vec<OptIncUnit>,
    level2: OptIncUnit,
}

impl CascadeTopology {
    pub fn oracle(cfg: SystemConfig) -> Result<Self> {
        let level1 = (0..cfg.servers()).map(|_| OptIncUnit::oracle(cfg, CarryMode::EmitCarry)).collect::<Result<_>>()?;
        Ok(CascadeTopology { cfg, level1, level2: OptIncUnit::oracle(cfg, CarryMode::AcceptCarry)? })
    }

    /// All level-1 units share `level1_model`.
    pub fn with_models(cfg: SystemConfig, level1_model: OnnModel, level2_model: OnnModel) -> Result<Self> {
        let level1 = (0..cfg.servers())
            .map(|_| OptIncUnit::with_model(cfg, level1_model.clone(), CarryMode::EmitCarry))
            .collect::<Result<_>>()?;
        Ok(CascadeTopology { cfg, level1, level2: OptIncUnit::with_model(cfg, level2_model, CarryMode::AcceptCarry)? })
    }

    pub fn cfg(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn capacity(&self) -> usize {
        (self.cfg.servers() * self.cfg.servers()) as usize
    }

    /// Level-1 outputs for `N^2` words, optionally with carries dropped.
    pub fn level1_frames(&self, words: &[GradientWord], corrected: bool) -> Result<Vec<CarryFrame>> {
        if words.len() != self.capacity() {
            return Err(OptincError::domain(format!("cascade expects {} words, got {}", self.capacity(), words.len())));
        }
        let n = self.cfg.servers() as usize;
        self.level1
            .iter()
            .zip(words.chunks(n))
            .map(|(unit, group)| {
                let mut f = unit.combine(&unit.frames_for(group)?)?;
                if !corrected {
                    f.carry_num = 0;
                    f.carry_den = 1;
                }
                Ok(f)
            })
            .collect()
    }

    /// The cascade's final word for exactly `N^2` server words.
    pub fn aggregate(&self, words: &[GradientWord], corrected: bool) -> Result<GradientWord> {
        let frames = self.level1_frames(words, corrected)?;
        decode_pam4(&self.level2.combine(&frames)?.frame, &self.cfg)
    }

    /// Fewer than `N^2` servers: unused inputs are tied to the zero word and
    /// still count toward the divisor.
    pub fn aggregate_partial(&self, words: &[GradientWord], corrected: bool) -> Result<GradientWord> {
        if words.len() > self.capacity() {
            return Err(OptincError::domain(format!("{} words exceed the cascade's {} inputs", words.len(), self.capacity())));
        }
        let mut padded = words.to_vec();
        padded.resize(self.capacity(), GradientWord(0));
        self.aggregate(&padded, corrected)
    }
}

pub fn cascade_aggregate(topo: &CascadeTopology, words: &[GradientWord], corrected: bool) -> Result<GradientWord> {
    topo.aggregate(words, corrected)
}

/// `Q(sum / N^2)` computed directly.
pub fn global_quantized_mean(words: &[GradientWord], cfg: &SystemConfig) -> Result<GradientWord> {
    let wide = cfg.with_servers(cfg.servers() * cfg.servers())?;
    quantized_average(words, &wide)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CascadeSweep {
    pub cases: u64,
    pub corrected_mismatches: u64,
    pub uncorrected_mismatches: u64,
}

fn words_for_index(mut idx: u64, count: usize, cfg: &SystemConfig) -> Vec<GradientWord> {
    let base = cfg.max_code() + 1;
    let mut words = vec![GradientWord(0); count];
    for w in words.iter_mut().rev() {
        *w = GradientWord(idx % base);
        idx /= base;
    }
    words
}

fn sweep_case(topo: &CascadeTopology, words: &[GradientWord]) -> Result<CascadeSweep> {
    let want = global_quantized_mean(words, &topo.cfg)?;
    Ok(CascadeSweep {
        cases: 1,
        corrected_mismatches: (topo.aggregate(words, true)? != want) as u64,
        uncorrected_mismatches: (topo.aggregate(words, false)? != want) as u64,
    })
}

fn merge(a: CascadeSweep, b: CascadeSweep) -> CascadeSweep {
    CascadeSweep {
        cases: a.cases + b.cases,
        corrected_mismatches: a.corrected_mismatches + b.corrected_mismatches,
        uncorrected_mismatches: a.uncorrected_mismatches + b.uncorrected_mismatches,
    }
}

/// Compares both cascade paths against `Q(global mean)` on every word tuple.
pub fn cascade_sweep_exhaustive(topo: &CascadeTopology, max_cases: u128) -> Result<CascadeSweep> {
    let n2 = topo.capacity() as u32;
    let total = (topo.cfg.max_code() as u128 + 1)
        .checked_pow(n2)
        .ok_or_else(|| OptincError::Overflow("cascade input space does not fit in 128 bits".into()))?;
    if total > max_cases {
        return Err(OptincError::SizeRefused { size: total, limit: max_cases });
    }
    (0..total as u64)
        .into_par_iter()
        .map(|i| sweep_case(topo, &words_for_index(i, n2 as usize, &topo.cfg)))
        .try_reduce(CascadeSweep::default, |a, b| Ok(merge(a, b)))
}

/// Same comparison on `count` uniformly drawn word tuples.
pub fn cascade_sweep_sampled(topo: &CascadeTopology, count: u64, seed: u64) -> Result<CascadeSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = topo.cfg.max_code();
    let mut acc = CascadeSweep::default();
    for _ in 0..count {
        let words: Vec<GradientWord> = (0..topo.capacity()).map(|_| GradientWord(rng.random_range(0..=max))).collect();
        acc = merge(acc, sweep_case(topo, &words)?);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingOutcome<T> {
    pub vectors: Vec<Vec<T>>,
    pub rounds: usize,
    /// Bytes each server sends over the whole collective.
    pub bytes_per_server: u64,
}

/// Ring reduce-scatter followed by all-gather; every server ends with the
/// element-wise sum. Vectors are zero-padded to a multiple of `N` chunks.
pub fn ring_reduce<T>(vectors: &[Vec<T>]) -> Result<RingOutcome<T>>
where
    T: Copy + Default + AddAssign,
{
    let n = vectors.len();
    if n < 2 {
        return Err(OptincError::domain("ring all-reduce needs at least two servers"));
    }
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(OptincError::domain("ring all-reduce needs equal-length vectors"));
    }
    let chunk = len.div_ceil(n).max(1);
    let mut state: Vec<Vec<T>> = vectors
        .iter()
        .map(|v| {
            let mut p = v.clone();
            p.resize(chunk * n, T::default());
            p
        })
        .collect();
    let span = |c: usize| c * chunk..(c + 1) * chunk;
    let mut rounds = 0;
    // reduce-scatter: server i forwards its running partial of chunk (i - r)
    for r in 0..n - 1 {
        let sent: Vec<(usize, Vec<T>)> = (0..n)
            .map(|i| {
                let c = (i + n - r) % n;
                (c, state[i][span(c)].to_vec())
            })
            .collect();
        for (i, (c, data)) in sent.into_iter().enumerate() {
            let dst = (i + 1) % n;
            for (x, y) in state[dst][span(c)].iter_mut().zip(data) {
                *x += y;
            }
        }
        rounds += 1;
    }
    // server i now owns the full sum of chunk (i + 1); circulate the results
    for r in 0..n - 1 {
        let sent: Vec<(usize, Vec<T>)> = (0..n)
            .map(|i| {
                let c = (i + 1 + n - r) % n;
                (c, state[i][span(c)].to_vec())
            })
            .collect();
        for (i, (c, data)) in sent.into_iter().enumerate() {
            let dst = (i + 1) % n;
            state[dst][span(c)].copy_from_slice(&data);
        }
        rounds += 1;
    }
    for v in &mut state {
        v.truncate(len);
    }
    let bytes_per_server = (2 * (n - 1) * chunk * std::mem::size_of::<T>()) as u64;
    Ok(RingOutcome { vectors: state, rounds, bytes_per_server })
}

/// Ring all-reduce of real vectors to their element-wise mean.
pub fn ring_allreduce(vectors: &[Vec<f64>]) -> Result<RingOutcome<f64>> {
    let mut out = ring_reduce(vectors)?;
    let n = vectors.len() as f64;
    for v in &mut out.vectors {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    pub servers: u64,
    pub ring_rounds: u64,
    pub optinc_rounds: u64,
    /// Extra rounds of the ring relative to an `N`-round ideal.
    pub relative_overhead: f64,
}

pub fn overhead_report(servers: u64) -> Result<OverheadReport> {
    if servers < 2 {
        return Err(OptincError::domain("overhead is defined for at least two servers"));
    }
    Ok(OverheadReport {
        servers,
        ring_rounds: 2 * (servers - 1),
        optinc_rounds: 1,
        relative_overhead: (servers - 2) as f64 / servers as f64,
    })
}

impl OverheadReport {
    pub fn to_csv(reports: &[OverheadReport]) -> String {
        let mut s = String::from("servers,ring_rounds,optinc_rounds,relative_overhead\n");
        for r in reports {
            let _ = writeln!(s, "{},{},{},{:.6}", r.servers, r.ring_rounds, r.optinc_rounds, r.relative_overhead);
        }
        s
    }
}

/// Gradient aggregation used by [`e2e_toy_training`].
#[derive(Debug, Clone)]
pub enum Aggregation {
    ExactMean,
    Ring,
    OptincOracle,
    OptincTrained(OnnModel),
}

impl Aggregation {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregation::ExactMean => "exact_mean",
            Aggregation::Ring => "ring",
            Aggregation::OptincOracle => "optinc_oracle",
            Aggregation::OptincTrained(_) => "optinc_trained",
        }
    }
}

/// Toy data-parallel task: Gaussian blobs classified by a one-hidden-layer
/// network, sharded across `servers`.
#[derive(Debug, Clone, PartialEq)]
pub struct E2eConfig {
    pub servers: u64,
    pub bit_width: u32,
    pub features: usize,
    pub classes: usize,
    pub hidden: usize,
    pub samples: usize,
    pub steps: usize,
    pub batch_per_server: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        E2eConfig {
            servers: 4,
            bit_width: 8,
            features: 2,
            classes: 3,
            hidden: 16,
            samples: 600,
            steps: 300,
            batch_per_server: 16,
            learning_rate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eCurve {
    pub mode: String,
    /// `(step, loss, accuracy)` on the full dataset after each update.
    pub points: Vec<(usize, f64, f64)>,
    pub final_params: Vec<f64>,
    pub warnings: Vec<String>,
}

impl E2eCurve {
    pub fn final_accuracy(&self) -> f64 {
        self.points.last().map(|p| p.2).unwrap_or(0.0)
    }

    pub fn to_csv(curves: &[E2eCurve]) -> String {
        let mut s = String::from("mode,step,loss,accuracy\n");
        for c in curves {
            for (step, loss, acc) in &c.points {
                let _ = writeln!(s, "{},{},{:.9e},{:.6}", c.mode, step, loss, acc);
            }
        }
        s
    }
}

struct Blobs {
    x: DMatrix<f64>,
    labels: Vec<usize>,
}

fn make_blobs(cfg: &E2eConfig, rng: &mut ChaCha8Rng) -> Blobs {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..cfg.classes).map(|_| (0..cfg.features).map(|_| 2.0 * unit.sample(rng)).collect()).collect();
    let labels: Vec<usize> = (0..cfg.samples).map(|i| i % cfg.classes).collect();
    let x = DMatrix::from_fn(cfg.features, cfg.samples, |r, c| centers[labels[c]][r] + unit.sample(rng));
    Blobs { x, labels }
}

#[derive(Clone)]
struct Classifier {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl Classifier {
    fn new(cfg: &E2eConfig, rng: &mut ChaCha8Rng) -> Self {
        let n1 = Normal::new(0.0, (1.0 / cfg.features as f64).sqrt()).expect("variance");
        let n2 = Normal::new(0.0, (1.0 / cfg.hidden as f64).sqrt()).expect("variance");
        Classifier {
            w1: DMatrix::from_fn(cfg.hidden, cfg.features, |_, _| n1.sample(rng)),
            b1: DVector::zeros(cfg.hidden),
            w2: DMatrix::from_fn(cfg.classes, cfg.hidden, |_, _| n2.sample(rng)),
            b2: DVector::zeros(cfg.classes),
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()]
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn probabilities(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut h = &self.w1 * x;
        for mut col in h.column_iter_mut() {
            col += &self.b1;
            col.apply(|v| *v = v.tanh());
        }
        let mut p = &self.w2 * &h;
        for mut col in p.column_iter_mut() {
            col += &self.b2;
            let max = col.max();
            col.apply(|v| *v = (*v - max).exp());
            let sum = col.sum();
            col /= sum;
        }
        (h, p)
    }

    /// Mean cross-entropy gradients on a batch, one flat vector per tensor.
    fn gradients(&self, x: &DMatrix<f64>, labels: &[usize]) -> Vec<Vec<f64>> {
        let (h, mut d2) = self.probabilities(x);
        let b = labels.len() as f64;
        for (c, &y) in labels.iter().enumerate() {
            d2[(y, c)] -= 1.0;
        }
        d2 /= b;
        let gw2 = &d2 * h.transpose();
        let gb2 = d2.column_sum();
        let mut d1 = self.w2.transpose() * &d2;
        d1.zip_apply(&h, |d, hv| *d *= 1.0 - hv * hv);
        let gw1 = &d1 * x.transpose();
        let gb1 = d1.column_sum();
        vec![gw1.as_slice().to_vec(), gb1.as_slice().to_vec(), gw2.as_slice().to_vec(), gb2.as_slice().to_vec()]
    }

    fn loss_accuracy(&self, data: &Blobs) -> (f64, f64) {
        let (_, p) = self.probabilities(&data.x);
        let mut loss = 0.0;
        let mut hits = 0;
        for (c, &y) in data.labels.iter().enumerate() {
            let col = p.column(c);
            loss -= col[y].max(1e-300).ln();
            if col.argmax().0 == y {
                hits += 1;
            }
        }
        let n = data.labels.len() as f64;
        (loss / n, hits as f64 / n)
    }
}

/// Aggregates each tensor element through the chosen path after per-tensor
/// fixed-point quantization with a shared clip `c = max |g|`.
fn aggregate_tensor(grads: &[&[f64]], agg: &Aggregation, unit: Option<&OptIncUnit>, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let n = grads.len();
    let clip = grads.iter().flat_map(|g| g.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if clip == 0.0 {
        return Ok(vec![0.0; grads[0].len()]);
    }
    let scale = FixedPointScale::symmetric(clip)?;
    let codes: Vec<Vec<u64>> = grads.iter().map(|g| g.iter().map(|&v| real_to_word(v, &scale, cfg).0).collect()).collect();
    let from_code = |c: f64| code_to_real(c, &scale, cfg);
    match agg {
        Aggregation::ExactMean => {
            let len = codes[0].len();
            Ok((0..len).map(|e| from_code(codes.iter().map(|c| c[e]).sum::<u64>() as f64 / n as f64)).collect())
        }
        Aggregation::Ring => {
            let out = ring_reduce(&codes)?;
            Ok(out.vectors[0].iter().map(|&s| from_code(s as f64 / n as f64)).collect())
        }
        Aggregation::OptincOracle | Aggregation::OptincTrained(_) => {
            let unit = unit.expect("unit built for optinc aggregation");
            let len = codes[0].len();
            let sets: Vec<Vec<GradientWord>> = (0..len).map(|e| codes.iter().map(|c| GradientWord(c[e])).collect()).collect();
            Ok(unit.aggregate_many(&sets)?.into_iter().map(|w| from_code(w.0 as f64)).collect())
        }
    }
}

/// Data-parallel SGD on the toy task with gradients aggregated by `agg`.
///
/// Runs are deterministic given `cfg.seed`. A trained model is checked on its
/// exhaustive grid first; imperfect accuracy is recorded as a warning.
pub fn e2e_toy_training(cfg: &E2eConfig, agg: &Aggregation) -> Result<E2eCurve> {
    if cfg.servers < 2 || cfg.samples < cfg.servers as usize || cfg.steps == 0 || cfg.batch_per_server == 0 {
        return Err(OptincError::Config("e2e run needs >= 2 servers, one sample per shard, and positive steps".into()));
    }
    let sys = SystemConfig::new(cfg.bit_width, cfg.servers, cfg.bit_width as usize / 2, Quantizer::Floor)?;
    let mut warnings = Vec::new();
    let unit = match agg {
        Aggregation::OptincOracle => Some(OptIncUnit::oracle(sys, CarryMode::None)?),
        Aggregation::OptincTrained(model) => {
            let sys = SystemConfig::new(cfg.bit_width, cfg.servers, model.spec.inputs(), Quantizer::Floor)?;
            let unit = OptIncUnit::with_model(sys, model.clone(), CarryMode::None)?;
            match generate_dataset(&sys, GenerationMode::Exhaustive, 0, 1 << 22) {
                Ok(grid) => {
                    let acc = evaluate(model, &grid)?.accuracy;
                    if acc < 1.0 {
                        let msg = format!("aggregation model is only {:.4} accurate on its grid", acc);
                        warn!("{msg}");
                        warnings.push(msg);
                    }
                }
                Err(e) => warnings.push(format!("grid accuracy not checked: {e}")),
            }
            Some(unit)
        }
        _ => None,
    };
    let sys = unit.as_ref().map(|u| *u.cfg()).unwrap_or(sys);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = make_blobs(cfg, &mut rng);
    let mut model = Classifier::new(cfg, &mut rng);
    let n = cfg.servers as usize;
    let shards: Vec<Vec<usize>> = (0..n).map(|s| (s..cfg.samples).step_by(n).collect()).collect();
    let mut points = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let per_server: Vec<Vec<Vec<f64>>> = shards
            .iter()
            .map(|shard| {
                let idx: Vec<usize> = (0..cfg.batch_per_server).map(|_| shard[rng.random_range(0..shard.len())]).collect();
                let x = data.x.select_columns(&idx);
                let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
                model.gradients(&x, &labels)
            })
            .collect();
        let lr = cfg.learning_rate;
        for (t, param) in model.tensors_mut().into_iter().enumerate() {
            let grads: Vec<&[f64]> = per_server.iter().map(|g| g[t].as_slice()).collect();
            let mean = aggregate_tensor(&grads, agg, unit.as_ref(), &sys)?;
            for (p, g) in param.iter_mut().zip(mean) {
                *p -= lr * g;
            }
        }
        let (loss, acc) = model.loss_accuracy(&data);
        if !loss.is_finite() {
            return Err(OptincError::Numeric(format!("toy training diverged at step {step}")));
        }
        points.push((step, loss, acc));
    }
    Ok(E2eCurve { mode: agg.name().to_string(), points, final_params: model.flat(), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Quantizer;

    fn toy() -> SystemConfig {
        SystemConfig::new(4, 2, 2, Quantizer::Floor).unwrap()
    }

    #[test]
    fn oracle_unit_matches_quantized_average() {
        let cfg = toy();
        let unit = OptIncUnit::oracle(cfg, CarryMode::None).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let words = [GradientWord(a), GradientWord(b)];
                let got = unit.aggregate_once(&words).unwrap();
                assert_eq!(got.len(), 2);
                assert!(got.iter().all(|&w| w == quantized_average(&words, &cfg).unwrap()));
            }
        }
        assert!(unit.aggregate_once(&[GradientWord(1)]).is_err());
        let wide = SystemConfig::new(8, 4, 4, Quantizer::Floor).unwrap();
        let unit = OptIncUnit::oracle(wide, CarryMode::None).unwrap();
        let words = [10, 11, 12, 14].map(GradientWord);
        assert_eq!(unit.aggregate_once(&words).unwrap(), vec![GradientWord(11); 4]);
        assert_eq!(unit.aggregate_once(&[GradientWord(0); 4]).unwrap(), vec![GradientWord(0); 4]);
    }

    #[test]
    fn cascade_hand_example() {
        let topo = CascadeTopology::oracle(toy()).unwrap();
        let words = [2, 1, 1, 0].map(GradientWord);
        assert_eq!(topo.aggregate(&words, false).unwrap(), GradientWord(0));
        assert_eq!(topo.aggregate(&words, true).unwrap(), GradientWord(1));
        assert_eq!(global_quantized_mean(&words, topo.cfg()).unwrap(), GradientWord(1));
        let frames = topo.level1_frames(&words, true).unwrap();
        assert_eq!((frames[0].carry_num, frames[0].carry_den), (1, 2));
        for c in [0, 7, 15] {
            let same = [GradientWord(c); 4];
            assert_eq!(topo.aggregate(&same, true).unwrap(), GradientWord(c));
            assert_eq!(topo.aggregate(&same, false).unwrap(), GradientWord(c));
        }
        assert_eq!(topo.aggregate_partial(&[GradientWord(8)], true).unwrap(), GradientWord(2));
        assert!(topo.aggregate(&words[..3], true).is_err());
    }

    #[test]
    fn ring_counts_and_values() {
        let out = ring_allreduce(&[vec![2.0], vec![4.0]]).unwrap();
        assert_eq!(out.vectors, vec![vec![3.0], vec![3.0]]);
        assert_eq!(out.rounds, 2);
        for n in [2usize, 4, 8, 16] {
            let vectors: Vec<Vec<f64>> = (0..n).map(|i| (0..37).map(|j| ((i * 31 + j * 7) % 13) as f64 - 6.0).collect()).collect();
            let out = ring_allreduce(&vectors).unwrap();
            assert_eq!(out.rounds, 2 * (n - 1));
            assert_eq!(out.bytes_per_server, (2 * (n - 1) * 37usize.div_ceil(n) * 8) as u64);
            for j in 0..37 {
                let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64;
                assert!(out.vectors.iter().all(|v| (v[j] - mean).abs() <= 1e-12));
            }
        }
        assert!(ring_allreduce(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(ring_allreduce(&[vec![1.0]]).is_err());
    }

    #[test]
    fn overhead_examples() {
        let r = overhead_report(4).unwrap();
        assert_eq!((r.ring_rounds, r.optinc_rounds, r.relative_overhead), (6, 1, 0.5));
        assert_eq!(overhead_report(2).unwrap().relative_overhead, 0.0);
        assert_eq!(overhead_report(16).unwrap().ring_rounds, 30);
        assert_eq!(overhead_report(16).unwrap().relative_overhead, 0.875);
        assert!(overhead_report(1).is_err());
    }

    #[test]
    fn e2e_ring_equals_exact_mean() {
        let cfg = E2eConfig { steps: 30, ..E2eConfig::default() };
        let a = e2e_toy_training(&cfg, &Aggregation::ExactMean).unwrap();
        let b = e2e_toy_training(&cfg, &Aggregation::Ring).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.points, b.points);
        let c = e2e_toy_training(&cfg, &Aggregation::OptincOracle).unwrap();
        assert_eq!(c.points.len(), 30);
        assert_eq!(c.mode, "optinc_oracle");
    }
}
