//! Hardware-aware training of the network surrogate.
//!
//! Training runs in weight space with Adam and a cosine learning-rate decay.
//! For the first `stage_switch` epochs the loss is the bit-weighted squared
//! error on the raw outputs; afterwards it is the squared error of the
//! reconstructed word, differentiated through the transceiver snap with a
//! straight-through estimator. Every `projection_period` epochs the selected
//! layers are replaced by their block approximation, and the projection is
//! applied once more after the last epoch.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{snap_to_grid, AnalogFrame, SystemConfig};
use crate::dataset::{AggregationDataset, AggregationSample, PreprocessedVector};
use crate::error::{OptincError, Result};
use crate::onn::{evaluate, Activation, Gradients, OnnModel, OnnSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// First epoch of the reconstruction-loss stage.
    pub stage_switch: usize,
    /// Per-channel weights of the stage-1 loss, summing to one.
    pub bit_weights: Vec<f64>,
    pub projection_period: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one.
    pub lr_floor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ste_enabled: bool,
    /// Evaluate exact-match accuracy every this many epochs (0: only at the end).
    pub eval_every: usize,
    /// Stop once a projected model reaches this accuracy.
    pub target_accuracy: Option<f64>,
}

/// Bit weights proportional to each channel's place value `4^(M-i)`.
pub fn place_value_weights(m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|i| 4f64.powi((m - 1 - i) as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

impl TrainConfig {
    pub fn new(epochs: usize, cfg: &SystemConfig) -> Self {
        TrainConfig {
            epochs,
            stage_switch: (epochs * 4).div_ceil(5),
            bit_weights: place_value_weights(cfg.segments()),
            projection_period: 10,
            learning_rate: 1e-3,
            lr_floor: 0.0,
            batch_size: 64,
            seed: 0,
            ste_enabled: true,
            eval_every: 0,
            target_accuracy: None,
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.epochs == 0 || self.stage_switch == 0 || self.stage_switch > self.epochs {
            return Err(OptincError::Config(format!(
                "need 1 <= stage_switch ({}) <= epochs ({})",
                self.stage_switch, self.epochs
            )));
        }
        if self.bit_weights.len() != cfg.segments() || self.bit_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(OptincError::Config(format!("need {} positive bit weights", cfg.segments())));
        }
        let sum: f64 = self.bit_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(OptincError::Config(format!("bit weights sum to {sum}, not 1")));
        }
        if self.projection_period == 0 || self.batch_size == 0 {
            return Err(OptincError::Config("projection period and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(OptincError::Config("invalid learning-rate schedule".into()));
        }
        Ok(())
    }

    /// Cosine decay from `learning_rate` to `learning_rate * lr_floor`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs.max(1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.learning_rate * (self.lr_floor + (1.0 - self.lr_floor) * cos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Symbols,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stage_switch: usize,
    pub final_accuracy: f64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// `epoch,stage,loss,accuracy,projection` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,stage,loss,accuracy,projection\n");
        for e in &self.epochs {
            let stage = match e.stage {
                Stage::Symbols => 1,
                Stage::Reconstruction => 2,
            };
            let acc = e.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.9e},{},{}", e.epoch, stage, e.loss, acc, e.projected as u8);
        }
        s
    }

    pub fn projection_events(&self) -> usize {
        self.epochs.iter().filter(|e| e.projected).count()
    }
}

pub fn stage_of(epoch: usize, tc: &TrainConfig) -> Result<Stage> {
    if epoch >= tc.epochs {
        return Err(OptincError::domain(format!("epoch {epoch} outside [0, {})", tc.epochs)));
    }
    Ok(if epoch < tc.stage_switch { Stage::Symbols } else { Stage::Reconstruction })
}

/// Place value of every output channel.
fn place_values(m: usize) -> Vec<f64> {
    (0..m).map(|i| 4f64.powi((m - 1 - i) as i32)).collect()
}

/// Batch loss and its gradient with respect to the raw outputs.
///
/// `outputs` holds one column per sample in PAM4 units.
pub fn loss_and_grad(
    outputs: &DMatrix<f64>,
    samples: &[&AggregationSample],
    stage: Stage,
    divisions: u64,
    tc: &TrainConfig,
    cfg: &SystemConfig,
) -> Result<(f64, DMatrix<f64>)> {
    let m = cfg.segments();
    let b = samples.len();
    if outputs.nrows() != m || outputs.ncols() != b || b == 0 {
        return Err(OptincError::domain(format!("outputs are {}x{}, expected {m}x{b}", outputs.nrows(), outputs.ncols())));
    }
    let mut grad = DMatrix::zeros(m, b);
    let mut total = 0.0;
    match stage {
        Stage::Symbols => {
            for (c, s) in samples.iter().enumerate() {
                let target = s.targets.levels();
                for i in 0..m {
                    let e = outputs[(i, c)] - target[i];
                    total += tc.bit_weights[i] * e * e;
                    grad[(i, c)] = 2.0 * tc.bit_weights[i] * e / b as f64;
                }
            }
        }
        Stage::Reconstruction => {
            let place = place_values(m);
            for (c, s) in samples.iter().enumerate() {
                let analog = AnalogFrame::with_last_step(outputs.column(c).iter().cloned().collect(), divisions);
                let got: f64 = snap_to_grid(&analog, cfg)?.levels().iter().zip(&place).map(|(v, p)| v * p).sum();
                let want: f64 = s.targets.levels().iter().zip(&place).map(|(v, p)| v * p).sum();
                let e = got - want;
                total += e * e;
                if tc.ste_enabled {
                    for i in 0..m {
                        grad[(i, c)] = 2.0 * e * place[i] / b as f64;
                    }
                }
            }
        }
    }
    Ok((total / b as f64, grad))
}

/// Two-stage loss of a batch of already-computed outputs at `epoch`.
pub fn loss(outputs: &[AnalogFrame], samples: &[&AggregationSample], epoch: usize, tc: &TrainConfig, cfg: &SystemConfig) -> Result<f64> {
    let stage = stage_of(epoch, tc)?;
    let m = cfg.segments();
    if outputs.iter().any(|o| o.levels.len() != m) || outputs.len() != samples.len() {
        return Err(OptincError::domain("output frames do not match the samples"));
    }
    let mat = DMatrix::from_fn(m, outputs.len(), |r, c| outputs[c].levels[r]);
    let divisions = outputs.first().map(|o| o.last_channel_divisions).unwrap_or(1);
    Ok(loss_and_grad(&mat, samples, stage, divisions, tc, cfg)?.0)
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &OnnModel) -> Self {
        let zw = |l: &crate::onn::Layer| DMatrix::zeros(l.weight.nrows(), l.weight.ncols());
        let zb = |l: &crate::onn::Layer| DVector::zeros(l.bias.len());
        Adam {
            m_w: model.layers.iter().map(zw).collect(),
            v_w: model.layers.iter().map(zw).collect(),
            m_b: model.layers.iter().map(zb).collect(),
            v_b: model.layers.iter().map(zb).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut OnnModel, g: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let use_bias = model.spec.use_bias;
        for (i, layer) in model.layers.iter_mut().enumerate() {
            adam_step(layer.weight.as_mut_slice(), g.weights[i].as_slice(), self.m_w[i].as_mut_slice(), self.v_w[i].as_mut_slice(), lr, c1, c2);
            if use_bias {
                adam_step(layer.bias.as_mut_slice(), g.biases[i].as_slice(), self.m_b[i].as_mut_slice(), self.v_b[i].as_mut_slice(), lr, c1, c2);
            }
        }
    }
}

fn adam_step(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for k in 0..p.len() {
        m[k] = Adam::BETA1 * m[k] + (1.0 - Adam::BETA1) * g[k];
        v[k] = Adam::BETA2 * v[k] + (1.0 - Adam::BETA2) * g[k] * g[k];
        p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Adam::EPS);
    }
}

/// Trains a fresh model of shape `spec` on `ds`.
pub fn train(spec: &OnnSpec, ds: &AggregationDataset, tc: &TrainConfig) -> Result<(OnnModel, TrainReport)> {
    let model = OnnModel::new(spec.clone(), tc.seed)?;
    train_model(model, ds, tc)
}

/// Continues training an existing model.
pub fn train_model(mut model: OnnModel, ds: &AggregationDataset, tc: &TrainConfig) -> Result<(OnnModel, TrainReport)> {
    let cfg = &ds.cfg;
    tc.validate(cfg)?;
    model.spec.check_against(cfg)?;
    if ds.is_empty() {
        return Err(OptincError::domain("cannot train on an empty dataset"));
    }
    let started = Instant::now();
    let divisions = ds.kind.output_divisions(cfg);
    let inputs: Vec<&PreprocessedVector> = ds.samples.iter().map(|s| &s.inputs).collect();
    let x_all = model.input_matrix(&inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_0f_7a1e);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut adam = Adam::new(&model);
    let mut records = Vec::with_capacity(tc.epochs);
    let has_approx = !model.spec.approx_layers.is_empty();
    let mut final_accuracy = None;

    for epoch in 0..tc.epochs {
        let stage = stage_of(epoch, tc)?;
        let lr = tc.learning_rate_at(epoch);
        if epoch == tc.stage_switch {
            // Stage-2 gradients live on a different scale; stale moments would
            // turn the first updates into huge steps.
            adam = Adam::new(&model);
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let x = x_all.select_columns(batch);
            let samples: Vec<&AggregationSample> = batch.iter().map(|&i| &ds.samples[i]).collect();
            let (out, cache) = model.forward_cached(x);
            let (l, d_out) = loss_and_grad(&out, &samples, stage, divisions, tc, cfg)?;
            if !l.is_finite() {
                return Err(OptincError::Numeric(format!("loss diverged at epoch {epoch}: {l}")));
            }
            epoch_loss += l * batch.len() as f64;
            let grads = model.backward(&cache, &d_out);
            adam.update(&mut model, &grads, lr);
        }
        epoch_loss /= ds.len() as f64;
        if model.layers.iter().any(|l| l.weight.iter().any(|w| !w.is_finite())) {
            return Err(OptincError::Numeric(format!("non-finite weights after epoch {epoch}")));
        }
        model.clear_factors();
        let projected = has_approx && ((epoch + 1) % tc.projection_period == 0 || epoch + 1 == tc.epochs);
        if projected {
            model.project()?;
        }
        let consistent = !has_approx || projected;
        let due = tc.eval_every > 0 && (epoch + 1) % tc.eval_every == 0;
        let accuracy = if due || (consistent && tc.target_accuracy.is_some()) || epoch + 1 == tc.epochs {
            Some(evaluate(&model, ds)?.accuracy)
        } else {
            None
        };
        if due || epoch + 1 == tc.epochs {
            info!("epoch {epoch}: loss {epoch_loss:.6e} accuracy {:?} lr {lr:.2e}", accuracy);
        }
        records.push(EpochRecord { epoch, stage, loss: epoch_loss, accuracy, projected });
        if consistent {
            if let (Some(target), Some(acc)) = (tc.target_accuracy, accuracy) {
                if acc >= target {
                    final_accuracy = Some(acc);
                    break;
                }
            }
        }
        if epoch + 1 == tc.epochs {
            final_accuracy = accuracy;
        }
    }
    let final_accuracy = match final_accuracy {
        Some(a) => a,
        None => evaluate(&model, ds)?.accuracy,
    };
    let report = TrainReport { epochs: records, stage_switch: tc.stage_switch, final_accuracy, wall_clock_secs: started.elapsed().as_secs_f64() };
    Ok((model, report))
}

/// Stage-1 loss of `model` on `samples`.
fn symbol_loss(model: &OnnModel, samples: &[&AggregationSample], tc: &TrainConfig, cfg: &SystemConfig) -> Result<(f64, Gradients, Vec<DMatrix<f64>>)> {
    let inputs: Vec<&PreprocessedVector> = samples.iter().map(|s| &s.inputs).collect();
    let (out, cache) = model.forward_cached(model.input_matrix(&inputs)?);
    let (l, d_out) = loss_and_grad(&out, samples, Stage::Symbols, 1, tc, cfg)?;
    Ok((l, model.backward(&cache, &d_out), cache.pre))
}

fn param_mut(model: &mut OnnModel, layer: usize, index: Option<(usize, usize)>, row: usize) -> &mut f64 {
    match index {
        Some(rc) => &mut model.layers[layer].weight[rc],
        None => &mut model.layers[layer].bias[row],
    }
}

fn relu_pattern(pre: &[DMatrix<f64>]) -> Vec<bool> {
    pre.iter().flat_map(|z| z.iter().map(|&v| v > 0.0)).collect()
}

/// Largest disagreement between backpropagated and central-difference
/// gradients of the stage-1 loss over `checks` randomly chosen parameters.
///
/// The error is relative to the larger gradient magnitude, or absolute when
/// both are below `1e-6`. With `relu`, parameters whose perturbation flips
/// any activation pattern are skipped.
pub fn finite_difference_check(model: &OnnModel, samples: &[&AggregationSample], tc: &TrainConfig, cfg: &SystemConfig, checks: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, grads, pre) = symbol_loss(model, samples, tc, cfg)?;
    let base_pattern = relu_pattern(&pre);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < checks && attempts < checks * 20 {
        attempts += 1;
        let layer = rng.random_range(0..model.layers.len());
        let (rows, cols) = model.layers[layer].weight.shape();
        let use_bias = model.spec.use_bias && rng.random_bool(0.2);
        let row = rng.random_range(0..rows);
        let index = if use_bias { None } else { Some((row, rng.random_range(0..cols))) };
        let analytic = match index {
            Some(rc) => grads.weights[layer][rc],
            None => grads.biases[layer][row],
        };
        let orig = *param_mut(&mut probe, layer, index, row);
        *param_mut(&mut probe, layer, index, row) = orig + STEP;
        let (lp, _, pre_p) = symbol_loss(&probe, samples, tc, cfg)?;
        *param_mut(&mut probe, layer, index, row) = orig - STEP;
        let (lm, _, pre_m) = symbol_loss(&probe, samples, tc, cfg)?;
        *param_mut(&mut probe, layer, index, row) = orig;
        if model.spec.activation == Activation::Relu && (relu_pattern(&pre_p) != base_pattern || relu_pattern(&pre_m) != base_pattern) {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale < 1e-6 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
        worst = worst.max(err);
        done += 1;
    }
    if done == 0 {
        return Err(OptincError::Numeric("no parameter could be checked away from activation kinks".into()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{GradientWord, Quantizer};
    use crate::dataset::{generate_dataset, GenerationMode, Targets};
    use std::collections::BTreeSet;

    fn sample(units: Vec<u64>, word: u64) -> AggregationSample {
        AggregationSample {
            inputs: PreprocessedVector { numerators: vec![0, 0], denominator: 2 },
            targets: Targets { units, den: 1, word: GradientWord(word), carry_num: 0 },
        }
    }

    #[test]
    fn loss_examples() {
        let cfg = SystemConfig::new(4, 2, 2, Quantizer::Floor).unwrap();
        let mut tc = TrainConfig::new(10, &cfg);
        tc.bit_weights = vec![0.8, 0.2];
        let s = sample(vec![0, 1], 1);
        let out = [AnalogFrame::new(vec![1.0, 1.0])];
        assert!((loss(&out, &[&s], 0, &tc, &cfg).unwrap() - 0.8).abs() < 1e-15);
        let exact = [AnalogFrame::new(vec![0.0, 1.0])];
        assert_eq!(loss(&exact, &[&s], 0, &tc, &cfg).unwrap(), 0.0);
        assert_eq!(loss(&exact, &[&s], 9, &tc, &cfg).unwrap(), 0.0);
        assert!(loss(&exact, &[&s], 10, &tc, &cfg).is_err());

        let cfg8 = SystemConfig::new(8, 4, 4, Quantizer::Floor).unwrap();
        let tc8 = TrainConfig::new(10, &cfg8);
        let s11 = sample(vec![0, 0, 2, 3], 11);
        let twelve = [AnalogFrame::new(vec![0.1, -0.2, 3.4, 0.3])];
        assert_eq!(loss(&twelve, &[&s11], 9, &tc8, &cfg8).unwrap(), 1.0);
    }

    #[test]
    fn default_weights_follow_place_value() {
        let w = place_value_weights(4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] / w[3] - 64.0).abs() < 1e-12);
        let cfg = SystemConfig::new(8, 4, 4, Quantizer::Floor).unwrap();
        let tc = TrainConfig::new(100, &cfg);
        assert_eq!(tc.stage_switch, 80);
        tc.validate(&cfg).unwrap();
        let mut bad = tc.clone();
        bad.stage_switch = 101;
        assert!(bad.validate(&cfg).is_err());
        bad = tc.clone();
        bad.bit_weights = vec![0.5, 0.5, 0.1, 0.1];
        assert!(bad.validate(&cfg).is_err());
        assert!((tc.learning_rate_at(0) - 1e-3).abs() < 1e-18);
        assert!(tc.learning_rate_at(99) < 1e-5);
    }

    #[test]
    fn finite_differences_agree() {
        let cfg = SystemConfig::new(4, 2, 2, Quantizer::Floor).unwrap();
        let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 20).unwrap();
        let samples: Vec<&AggregationSample> = ds.samples.iter().step_by(5).collect();
        let tc = TrainConfig::new(10, &cfg);
        for act in [Activation::Tanh, Activation::Gelu, Activation::Relu] {
            let spec = OnnSpec::new(vec![2, 6, 5, 2], act, BTreeSet::new(), &cfg).unwrap();
            let model = OnnModel::new(spec, 3).unwrap();
            let err = finite_difference_check(&model, &samples, &tc, &cfg, 100, 1).unwrap();
            assert!(err <= 1e-5, "{act:?}: {err}");
        }
    }

    #[test]
    fn stationary_point_gradients_vanish() {
        let cfg = SystemConfig::new(4, 2, 2, Quantizer::Floor).unwrap();
        let spec = OnnSpec::new(vec![2, 4, 2], Activation::Tanh, BTreeSet::new(), &cfg).unwrap();
        let model = OnnModel::zeros(spec).unwrap();
        let s = AggregationSample {
            inputs: PreprocessedVector { numerators: vec![0, 0], denominator: 2 },
            targets: Targets { units: vec![0, 0], den: 1, word: GradientWord(0), carry_num: 0 },
        };
        let tc = TrainConfig::new(10, &cfg);
        let err = finite_difference_check(&model, &[&s], &tc, &cfg, 50, 2).unwrap();
        assert!(err <= 1e-8);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = SystemConfig::new(4, 2, 2, Quantizer::Floor).unwrap();
        let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 20).unwrap();
        let spec = OnnSpec::new(vec![2, 16, 2], Activation::Relu, [1, 2].into_iter().collect(), &cfg).unwrap();
        let mut tc = TrainConfig::new(40, &cfg);
        tc.projection_period = 5;
        tc.batch_size = 16;
        tc.learning_rate = 5e-3;
        let (a, ra) = train(&spec, &ds, &tc).unwrap();
        let (b, _) = train(&spec, &ds, &tc).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(ra.epochs.len(), 40);
        assert_eq!(ra.projection_events(), 8);
        assert_eq!(a.projection_residual().unwrap(), 0.0);
        let first = ra.epochs[0].loss;
        let last_stage1 = ra.epochs[31].loss;
        assert!(last_stage1 < first);
        assert_eq!(ra.final_accuracy, evaluate(&a, &ds).unwrap().accuracy);
        assert_eq!(ra.to_csv().lines().count(), 41);
    }
}
