//! Ground-truth aggregation oracle and ONN training datasets.
//!
//! All arithmetic is exact: preprocessed inputs are stored as integer
//! numerators over a common denominator, and the target of every sample is
//! obtained by quantizing the exact rational mean.
//!
//! A preprocessed input `A_k` is the average over `N` servers of group `k`
//! of each server's frame, where a group merges `g` consecutive symbols in
//! base 4. Because the mean of the words is `sum_k 4^{g(K-1-k)} A_k`, the
//! target of a grid point does not depend on which word tuple produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifact::atomic_write;
use crate::codec::{decode_pam4, encode_pam4, CarryFrame, GradientWord, Pam4Frame, Quantizer, SystemConfig};
use crate::error::{OptincError, Result};

/// Averaged ONN inputs `A_k = numerators[k] / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PreprocessedVector {
    pub numerators: Vec<u64>,
    pub denominator: u64,
}

impl PreprocessedVector {
    pub fn values(&self) -> Vec<f64> {
        self.numerators.iter().map(|&n| n as f64 / self.denominator as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }
}

/// Expected ONN outputs for one input: channel values `units[i] / den`.
///
/// The integer parts are the PAM4 digits of `word`; in carry datasets the
/// discarded fraction `carry_num / den` sits on top of the last digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Targets {
    pub units: Vec<u64>,
    pub den: u64,
    pub word: GradientWord,
    pub carry_num: u64,
}

impl Targets {
    pub fn levels(&self) -> Vec<f64> {
        self.units.iter().map(|&u| u as f64 / self.den as f64).collect()
    }

    pub fn as_carry_frame(&self) -> CarryFrame {
        let digits = self.units.iter().map(|&u| (u / self.den) as u8).collect();
        CarryFrame { frame: Pam4Frame::new(digits).expect("digits in range"), carry_num: self.carry_num, carry_den: self.den }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AggregationSample {
    pub inputs: PreprocessedVector,
    pub targets: Targets,
}

/// What a dataset trains: a standalone unit or one level of a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Single,
    /// Level-1 unit of a cascade: targets keep the discarded fraction.
    CascadeLevel1,
    /// Level-2 unit of a cascade: inputs carry extended-resolution fractions.
    CascadeLevel2,
}

impl DatasetKind {
    fn tag(self) -> u8 {
        match self {
            DatasetKind::Single => 0,
            DatasetKind::CascadeLevel1 => 1,
            DatasetKind::CascadeLevel2 => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(DatasetKind::Single),
            1 => Ok(DatasetKind::CascadeLevel1),
            2 => Ok(DatasetKind::CascadeLevel2),
            _ => Err(OptincError::Format(format!("unknown dataset kind {t}"))),
        }
    }

    /// Denominator multiplier applied on top of `N` for the inputs.
    pub fn input_normalizer(self, cfg: &SystemConfig) -> u64 {
        match self {
            DatasetKind::CascadeLevel2 => cfg.servers(),
            _ => 1,
        }
    }

    /// Grid divisions of the last output channel.
    pub fn output_divisions(self, cfg: &SystemConfig) -> u64 {
        match self {
            DatasetKind::CascadeLevel1 => cfg.servers(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenerationMode {
    Exhaustive,
    /// `count` distinct grid points drawn uniformly.
    Sampled { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationDataset {
    pub cfg: SystemConfig,
    pub kind: DatasetKind,
    pub mode: GenerationMode,
    pub seed: u64,
    pub samples: Vec<AggregationSample>,
}

impl AggregationDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `Q(sum(words) / N)` in exact integer arithmetic.
pub fn quantized_average(words: &[GradientWord], cfg: &SystemConfig) -> Result<GradientWord> {
    let sum = checked_word_sum(words, cfg)?;
    Ok(GradientWord(cfg.quantizer().apply(sum, cfg.servers())))
}

fn checked_word_sum(words: &[GradientWord], cfg: &SystemConfig) -> Result<u64> {
    if words.is_empty() {
        return Err(OptincError::domain("cannot average an empty word set"));
    }
    if words.len() as u64 != cfg.servers() {
        return Err(OptincError::domain(format!("expected {} words, got {}", cfg.servers(), words.len())));
    }
    let mut sum = 0u64;
    for w in words {
        if w.0 > cfg.max_code() {
            return Err(OptincError::domain(format!("code {} exceeds {}-bit range", w.0, cfg.bit_width())));
        }
        sum += w.0;
    }
    Ok(sum)
}

/// The preprocessing unit: per-group base-4 merge, then average over servers.
pub fn preprocess(frames: &[Pam4Frame], cfg: &SystemConfig) -> Result<PreprocessedVector> {
    let carried: Vec<CarryFrame> = frames.iter().cloned().map(CarryFrame::plain).collect();
    preprocess_carry(&carried, cfg)
}

/// Preprocessing of frames whose last channel may hold a carry fraction.
/// All frames must share the same carry denominator.
pub fn preprocess_carry(frames: &[CarryFrame], cfg: &SystemConfig) -> Result<PreprocessedVector> {
    if frames.len() as u64 != cfg.servers() {
        return Err(OptincError::domain(format!("expected {} frames, got {}", cfg.servers(), frames.len())));
    }
    let den = frames[0].carry_den;
    let (k_inputs, g, pad) = (cfg.onn_inputs(), cfg.group(), cfg.padding());
    let mut numerators = vec![0u64; k_inputs];
    for f in frames {
        if f.frame.len() != cfg.segments() {
            return Err(OptincError::domain(format!(
                "frame has {} symbols, expected {}",
                f.frame.len(),
                cfg.segments()
            )));
        }
        if f.carry_den != den {
            return Err(OptincError::domain("frames disagree on carry resolution"));
        }
        let mut padded = vec![0u64; pad];
        padded.extend(f.channel_units());
        for (k, chunk) in padded.chunks(g).enumerate() {
            numerators[k] += chunk.iter().fold(0u64, |acc, &u| acc * 4 + u);
        }
    }
    Ok(PreprocessedVector { numerators, denominator: cfg.servers() * den })
}

/// Exact mean of the words encoded by `inputs`, as `(numerator, denominator)`.
pub fn reconstruct_mean(inputs: &PreprocessedVector, cfg: &SystemConfig) -> (u64, u64) {
    let k_inputs = inputs.len();
    let num = inputs
        .numerators
        .iter()
        .enumerate()
        .fold(0u64, |acc, (k, &n)| acc + (n << (2 * cfg.group() * (k_inputs - 1 - k))));
    (num, inputs.denominator)
}

/// Targets for the mean `num / den`, optionally keeping the discarded fraction.
fn targets_for_mean(num: u64, den: u64, cfg: &SystemConfig, keep_carry: bool) -> Result<Targets> {
    if keep_carry && cfg.quantizer() != Quantizer::Floor {
        return Err(OptincError::domain("carry propagation requires the floor quantizer"));
    }
    let word = GradientWord(cfg.quantizer().apply(num, den));
    let digits = encode_pam4(word, cfg)?;
    let out_den = if keep_carry { den } else { 1 };
    let carry_num = if keep_carry { num % den } else { 0 };
    let mut units: Vec<u64> = digits.symbols().iter().map(|&s| s as u64 * out_den).collect();
    *units.last_mut().expect("at least one segment") += carry_num;
    Ok(Targets { units, den: out_den, word, carry_num })
}

/// Target symbols (and carry) for a set of server words.
pub fn expected_outputs(words: &[GradientWord], cfg: &SystemConfig, keep_carry: bool) -> Result<Targets> {
    let sum = checked_word_sum(words, cfg)?;
    targets_for_mean(sum, cfg.servers(), cfg, keep_carry)
}

fn checked_pow(base: u128, exp: usize) -> Result<u128> {
    base.checked_pow(exp as u32)
        .ok_or_else(|| OptincError::Overflow(format!("{base}^{exp} does not fit in 128 bits")))
}

/// Number of distinct preprocessed inputs, `(N(4^g - 1) + 1)^K` when `K` divides `M`.
///
/// With a padded leading group the leading input spans fewer levels and the
/// product is taken per group.
pub fn dataset_size(cfg: &SystemConfig) -> Result<u128> {
    if cfg.padding() == 0 {
        let levels = cfg.servers() as u128 * cfg.group_max() as u128 + 1;
        return checked_pow(levels, cfg.onn_inputs());
    }
    cfg.group_radices().iter().try_fold(1u128, |acc, &r| {
        acc.checked_mul(cfg.servers() as u128 * (r as u128 - 1) + 1)
            .ok_or_else(|| OptincError::Overflow("dataset size does not fit in 128 bits".into()))
    })
}

/// The lattice of achievable preprocessed inputs for one dataset kind.
///
/// Each server frame is viewed as a mixed-radix number with one digit per
/// group. `digit_radix[k]` is the radix of that digit (in units of the
/// frame's carry resolution) and `frame_max` the largest frame allowed.
#[derive(Debug, Clone)]
struct InputGrid {
    servers: u64,
    digit_radix: Vec<u64>,
    frame_max: Vec<u64>,
    /// Numerator stride of one digit unit over the input denominator.
    stride: Vec<u64>,
    denominator: u64,
}

impl InputGrid {
    fn new(cfg: &SystemConfig, kind: DatasetKind) -> Self {
        let n = cfg.servers();
        let radices = cfg.group_radices();
        let k_inputs = radices.len();
        let norm = kind.input_normalizer(cfg);
        let mut digit_radix = radices.clone();
        let mut frame_max: Vec<u64> = radices.iter().map(|r| r - 1).collect();
        let mut stride = vec![norm; k_inputs];
        if kind == DatasetKind::CascadeLevel2 {
            // the last group carries k/N on top of its digit, except on the
            // all-ones word, where the exact mean cannot exceed 2^B - 1
            digit_radix[k_inputs - 1] = radices[k_inputs - 1] * n;
            frame_max[k_inputs - 1] = (radices[k_inputs - 1] - 1) * n;
            stride[k_inputs - 1] = 1;
        }
        InputGrid { servers: n, digit_radix, frame_max, stride, denominator: n * norm }
    }

    fn levels(&self) -> Vec<u64> {
        self.digit_radix.iter().map(|&r| self.servers * (r - 1) + 1).collect()
    }

    fn total(&self) -> u128 {
        self.levels().iter().map(|&l| l as u128).product()
    }

    fn digit_sums(&self, mut index: u128) -> Vec<u64> {
        let levels = self.levels();
        let mut sums = vec![0u64; levels.len()];
        for k in (0..levels.len()).rev() {
            sums[k] = (index % levels[k] as u128) as u64;
            index /= levels[k] as u128;
        }
        sums
    }

    fn vector(&self, sums: &[u64]) -> PreprocessedVector {
        PreprocessedVector {
            numerators: sums.iter().zip(&self.stride).map(|(s, st)| s * st).collect(),
            denominator: self.denominator,
        }
    }

    /// Greedy split of per-group digit sums over the servers, or `None` if
    /// no tuple of frames below `frame_max` realizes them.
    ///
    /// Frames whose prefix still equals `frame_max` are "tight"; all others
    /// may take any digit. Filling free frames first and keeping as few
    /// frames tight as possible never removes a later option.
    fn split(&self, sums: &[u64]) -> Option<Vec<Vec<u64>>> {
        let n = self.servers as usize;
        let mut digits = vec![vec![0u64; sums.len()]; n];
        let mut tight = vec![true; n];
        for (k, &sum) in sums.iter().enumerate() {
            let cap = self.digit_radix[k] - 1;
            let tight_cap = self.frame_max[k];
            let mut rest = sum;
            for (f, d) in digits.iter_mut().enumerate() {
                if !tight[f] {
                    let take = rest.min(cap);
                    d[k] = take;
                    rest -= take;
                }
            }
            let tight_idx: Vec<usize> = (0..n).filter(|&f| tight[f]).collect();
            if rest > tight_idx.len() as u64 * tight_cap {
                return None;
            }
            // frames below tight_cap become free; use them first
            let below = tight_cap.saturating_sub(1);
            let stay_tight = if tight_cap == 0 { tight_idx.len() as u64 } else { rest.saturating_sub(tight_idx.len() as u64 * below) };
            for (j, &f) in tight_idx.iter().enumerate() {
                if (j as u64) < stay_tight {
                    digits[f][k] = tight_cap;
                    rest -= tight_cap;
                } else {
                    let take = rest.min(below);
                    digits[f][k] = take;
                    rest -= take;
                    if tight_cap > 0 {
                        tight[f] = false;
                    }
                }
            }
            debug_assert_eq!(rest, 0);
        }
        Some(digits)
    }
}

/// A word tuple realizing a grid point of a single-level dataset.
pub fn canonical_preimage(inputs: &PreprocessedVector, cfg: &SystemConfig) -> Result<Vec<GradientWord>> {
    let grid = InputGrid::new(cfg, DatasetKind::Single);
    if inputs.denominator != grid.denominator || inputs.len() != cfg.onn_inputs() {
        return Err(OptincError::domain("inputs do not belong to this configuration's grid"));
    }
    let digits = grid
        .split(&inputs.numerators)
        .ok_or_else(|| OptincError::domain("inputs are not achievable by any word tuple"))?;
    let shift = 2 * cfg.group();
    Ok(digits.iter().map(|d| GradientWord(d.iter().fold(0u64, |acc, &x| (acc << shift) | x))).collect())
}

/// Level-1 output frames realizing a grid point of a level-2 dataset.
pub fn canonical_level1_frames(inputs: &PreprocessedVector, cfg: &SystemConfig) -> Result<Vec<CarryFrame>> {
    let grid = InputGrid::new(cfg, DatasetKind::CascadeLevel2);
    let n = cfg.servers();
    if inputs.denominator != grid.denominator || inputs.len() != cfg.onn_inputs() {
        return Err(OptincError::domain("inputs do not belong to the level-2 grid"));
    }
    let sums: Vec<u64> = inputs.numerators.iter().zip(&grid.stride).map(|(x, s)| x / s).collect();
    let digits = grid.split(&sums).ok_or_else(|| OptincError::domain("inputs are not achievable"))?;
    let shift = 2 * cfg.group();
    digits
        .iter()
        .map(|d| {
            let last = *d.last().expect("K >= 1");
            let upper = d[..d.len() - 1].iter().fold(0u64, |acc, &x| (acc << shift) | x);
            let units = ((upper << shift) * n) + last;
            let word = GradientWord(units / n);
            Ok(CarryFrame { frame: encode_pam4(word, cfg)?, carry_num: units % n, carry_den: n })
        })
        .collect()
}

fn sample_for(grid: &InputGrid, sums: &[u64], cfg: &SystemConfig, kind: DatasetKind) -> Result<AggregationSample> {
    let inputs = grid.vector(sums);
    let (num, den) = reconstruct_mean(&inputs, cfg);
    let targets = targets_for_mean(num, den, cfg, kind == DatasetKind::CascadeLevel1)?;
    Ok(AggregationSample { inputs, targets })
}

fn generate(cfg: &SystemConfig, kind: DatasetKind, mode: GenerationMode, seed: u64, max_size: u128) -> Result<AggregationDataset> {
    let grid = InputGrid::new(cfg, kind);
    let total = grid.total();
    let needs_check = kind == DatasetKind::CascadeLevel2;
    let indices: Vec<u128> = match mode {
        GenerationMode::Exhaustive => {
            if total > max_size {
                return Err(OptincError::SizeRefused { size: total, limit: max_size });
            }
            (0..total).collect()
        }
        GenerationMode::Sampled { count } => {
            let space = usize::try_from(total)
                .map_err(|_| OptincError::Overflow(format!("grid of {total} points cannot be indexed")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<u128> = index::sample(&mut rng, space, count.min(space))
                .into_iter()
                .map(|i| i as u128)
                .collect();
            picked.sort_unstable();
            picked
        }
    };
    let mut samples = Vec::with_capacity(indices.len());
    for idx in indices {
        let sums = grid.digit_sums(idx);
        if needs_check && grid.split(&sums).is_none() {
            continue;
        }
        samples.push(sample_for(&grid, &sums, cfg, kind)?);
    }
    Ok(AggregationDataset { cfg: *cfg, kind, mode, seed, samples })
}

/// Dataset for a standalone aggregation unit.
pub fn generate_dataset(cfg: &SystemConfig, mode: GenerationMode, seed: u64, max_size: u128) -> Result<AggregationDataset> {
    generate(cfg, DatasetKind::Single, mode, seed, max_size)
}

/// Carry-corrected datasets for the two levels of a cascade of units with fan-in `N`.
pub fn generate_cascade_datasets(
    cfg: &SystemConfig,
    mode: GenerationMode,
    seed: u64,
    max_size: u128,
) -> Result<(AggregationDataset, AggregationDataset)> {
    if cfg.quantizer() != Quantizer::Floor {
        return Err(OptincError::domain("carry propagation requires the floor quantizer"));
    }
    let level1 = generate(cfg, DatasetKind::CascadeLevel1, mode, seed, max_size)?;
    let level2 = generate(cfg, DatasetKind::CascadeLevel2, mode, seed.wrapping_add(1), max_size)?;
    Ok((level1, level2))
}

const MAGIC: &[u8; 7] = b"OPTINC1";

/// Binary layout (all integers little-endian):
///
/// ```text
/// "OPTINC1" | B u32 | N u64 | M u32 | K u32 | g u32 | quantizer u8 | mode u8
///           | kind u8 | seed u64 | count u64
/// record:   K x (num u64, den u64) | M x (num u64, den u64) | word u64 | (carry num u64, den u64)
/// ```
pub fn write_dataset(ds: &AggregationDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg = &ds.cfg;
    buf.extend_from_slice(&cfg.bit_width().to_le_bytes());
    buf.extend_from_slice(&cfg.servers().to_le_bytes());
    buf.extend_from_slice(&(cfg.segments() as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.onn_inputs() as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.group() as u32).to_le_bytes());
    buf.push(cfg.quantizer().tag());
    buf.push(match ds.mode {
        GenerationMode::Exhaustive => 0,
        GenerationMode::Sampled { .. } => 1,
    });
    buf.push(ds.kind.tag());
    buf.extend_from_slice(&ds.seed.to_le_bytes());
    buf.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());
    for s in &ds.samples {
        for &n in &s.inputs.numerators {
            buf.extend_from_slice(&n.to_le_bytes());
            buf.extend_from_slice(&s.inputs.denominator.to_le_bytes());
        }
        for &u in &s.targets.units {
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&s.targets.den.to_le_bytes());
        }
        buf.extend_from_slice(&s.targets.word.0.to_le_bytes());
        buf.extend_from_slice(&s.targets.carry_num.to_le_bytes());
        buf.extend_from_slice(&s.targets.den.to_le_bytes());
    }
    atomic_write(path, &buf)
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const W: usize>(&mut self) -> Result<[u8; W]> {
        let mut b = [0u8; W];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => OptincError::Format("truncated dataset file".into()),
            _ => OptincError::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_dataset(path: &Path) -> Result<AggregationDataset> {
    let mut cur = Cursor { inner: BufReader::new(File::open(path)?) };
    if &cur.bytes::<7>()? != MAGIC {
        return Err(OptincError::Format(format!("{} is not a dataset file", path.display())));
    }
    let b = cur.u32()?;
    let n = cur.u64()?;
    let m = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let g = cur.u32()? as usize;
    let quantizer = Quantizer::from_tag(cur.u8()?)?;
    let mode_tag = cur.u8()?;
    let kind = DatasetKind::from_tag(cur.u8()?)?;
    let seed = cur.u64()?;
    let count = cur.u64()? as usize;
    let cfg = SystemConfig::new(b, n, k, quantizer).map_err(|e| OptincError::Format(e.to_string()))?;
    if cfg.segments() != m || cfg.group() != g {
        return Err(OptincError::Format("inconsistent M or g in header".into()));
    }
    let mode = match mode_tag {
        0 => GenerationMode::Exhaustive,
        1 => GenerationMode::Sampled { count },
        t => return Err(OptincError::Format(format!("unknown mode tag {t}"))),
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut numerators = Vec::with_capacity(k);
        let mut denominator = 1;
        for _ in 0..k {
            numerators.push(cur.u64()?);
            denominator = cur.u64()?;
        }
        let mut units = Vec::with_capacity(m);
        let mut den = 1;
        for _ in 0..m {
            units.push(cur.u64()?);
            den = cur.u64()?;
        }
        let word = GradientWord(cur.u64()?);
        let carry_num = cur.u64()?;
        let _carry_den = cur.u64()?;
        samples.push(AggregationSample {
            inputs: PreprocessedVector { numerators, denominator },
            targets: Targets { units, den, word, carry_num },
        });
    }
    let mut trailing = [0u8; 1];
    if cur.inner.read(&mut trailing)? != 0 {
        return Err(OptincError::Format("trailing bytes after last record".into()));
    }
    Ok(AggregationDataset { cfg, kind, mode, seed, samples })
}

/// Plain-text export with one row per sample.
pub fn write_dataset_csv(ds: &AggregationDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(Vec::new());
    let k = ds.cfg.onn_inputs();
    let m = ds.cfg.segments();
    let header: Vec<String> = (1..=k)
        .map(|i| format!("a{i}"))
        .chain((1..=m).map(|i| format!("o{i}")))
        .chain(["word".to_string(), "carry".to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in &ds.samples {
        let mut row: Vec<String> = s.inputs.numerators.iter().map(|n| format!("{n}/{}", s.inputs.denominator)).collect();
        row.extend(s.targets.units.iter().map(|u| format!("{u}/{}", s.targets.den)));
        row.push(s.targets.word.0.to_string());
        row.push(format!("{}/{}", s.targets.carry_num, s.targets.den));
        writeln!(out, "{}", row.join(","))?;
    }
    let bytes = out.into_inner().map_err(|e| OptincError::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

/// Reads back the CSV export (used to cross-check the binary format).
pub fn read_dataset_csv_words(path: &Path) -> Result<Vec<u64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut words = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let w = cols
            .get(cols.len().saturating_sub(2))
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| OptincError::Format(format!("bad CSV row {i}")))?;
        words.push(w);
    }
    Ok(words)
}

/// Decodes the integer digits of a target back into a word.
pub fn target_word_from_units(t: &Targets, cfg: &SystemConfig) -> Result<GradientWord> {
    let digits = t.units.iter().map(|&u| ((u / t.den).min(3)) as u8).collect();
    decode_pam4(&Pam4Frame::new(digits)?, cfg)
}
