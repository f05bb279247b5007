//! Fixed-point gradient words and their PAM4 symbol frames.
//!
//! A `B`-bit word is cut into `M = B/2` two-bit segments, most significant
//! first, and each segment travels as one PAM4 level in `{0, 1, 2, 3}`.
//! Receivers snap the analog amplitude back onto the level grid. In cascade
//! mode the final channel runs on a finer grid so that a fractional carry can
//! ride along with the last digit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OptincError, Result};

/// Largest supported bit width. Keeps `N * (2^B - 1)` well inside `u64`.
pub const MAX_BIT_WIDTH: u32 = 32;

/// Rounding rule applied to the exact mean of the server words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Quantizer {
    #[default]
    Floor,
    NearestHalfUp,
}

impl Quantizer {
    /// Quantizes `num / den` (both non-negative) to an integer.
    pub fn apply(self, num: u64, den: u64) -> u64 {
        match self {
            Quantizer::Floor => num / den,
            Quantizer::NearestHalfUp => (2 * num + den) / (2 * den),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Quantizer::Floor => 0,
            Quantizer::NearestHalfUp => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Quantizer::Floor),
            1 => Ok(Quantizer::NearestHalfUp),
            t => Err(OptincError::Format(format!("unknown quantizer tag {t}"))),
        }
    }
}

impl fmt::Display for Quantizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantizer::Floor => f.write_str("floor"),
            Quantizer::NearestHalfUp => f.write_str("nearest-half-up"),
        }
    }
}

impl std::str::FromStr for Quantizer {
    type Err = OptincError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor" => Ok(Quantizer::Floor),
            "nearest-half-up" | "nearest" => Ok(Quantizer::NearestHalfUp),
            _ => Err(OptincError::Config(format!("unknown quantizer {s:?}"))),
        }
    }
}

/// Bit width, server count and ONN interface sizes of one aggregation unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SystemConfig {
    bit_width: u32,
    servers: u64,
    segments: usize,
    onn_inputs: usize,
    group: usize,
    quantizer: Quantizer,
}

impl SystemConfig {
    pub fn new(bit_width: u32, servers: u64, onn_inputs: usize, quantizer: Quantizer) -> Result<Self> {
        if bit_width < 2 || bit_width % 2 != 0 || bit_width > MAX_BIT_WIDTH {
            return Err(OptincError::domain(format!(
                "bit width must be even and within [2, {MAX_BIT_WIDTH}], got {bit_width}"
            )));
        }
        if servers == 0 || servers > 1 << 16 {
            return Err(OptincError::domain(format!("server count {servers} outside [1, 65536]")));
        }
        let segments = (bit_width / 2) as usize;
        if onn_inputs == 0 || onn_inputs > segments {
            return Err(OptincError::domain(format!(
                "ONN input count must be within [1, {segments}], got {onn_inputs}"
            )));
        }
        let group = segments.div_ceil(onn_inputs);
        Ok(SystemConfig { bit_width, servers, segments, onn_inputs, group, quantizer })
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn servers(&self) -> u64 {
        self.servers
    }

    /// `M`, the number of PAM4 symbols per word.
    pub fn segments(&self) -> usize {
        self.segments
    }

    /// `K`, the number of preprocessed ONN inputs.
    pub fn onn_inputs(&self) -> usize {
        self.onn_inputs
    }

    /// `g = ceil(M / K)`, the symbols merged into one ONN input.
    pub fn group(&self) -> usize {
        self.group
    }

    pub fn quantizer(&self) -> Quantizer {
        self.quantizer
    }

    pub fn with_servers(&self, servers: u64) -> Result<Self> {
        SystemConfig::new(self.bit_width, servers, self.onn_inputs, self.quantizer)
    }

    pub fn with_quantizer(&self, quantizer: Quantizer) -> Self {
        SystemConfig { quantizer, ..*self }
    }

    pub fn max_code(&self) -> u64 {
        (1u64 << self.bit_width) - 1
    }

    /// Leading zero symbols added so that `K * g` symbols split evenly.
    pub fn padding(&self) -> usize {
        self.onn_inputs * self.group - self.segments
    }

    /// `4^g - 1`, the largest value of one merged group on one server.
    pub fn group_max(&self) -> u64 {
        (1u64 << (2 * self.group)) - 1
    }

    /// Per-group radix of a word once it is split into `K` groups. The
    /// leading group is narrower when `M` is padded.
    pub fn group_radices(&self) -> Vec<u64> {
        let mut radices = vec![1u64 << (2 * self.group); self.onn_inputs];
        radices[0] = 1u64 << (2 * (self.group - self.padding()));
        radices
    }
}

/// An unsigned `B`-bit fixed-point gradient code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GradientWord(pub u64);

impl GradientWord {
    pub fn new(code: u64, cfg: &SystemConfig) -> Result<Self> {
        if code > cfg.max_code() {
            return Err(OptincError::domain(format!(
                "code {code} exceeds {}-bit range",
                cfg.bit_width()
            )));
        }
        Ok(GradientWord(code))
    }

    pub fn code(self) -> u64 {
        self.0
    }
}

/// The `M` PAM4 symbols one server transmits, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pam4Frame(Vec<u8>);

impl Pam4Frame {
    pub fn new(symbols: Vec<u8>) -> Result<Self> {
        if let Some(bad) = symbols.iter().find(|&&s| s > 3) {
            return Err(OptincError::domain(format!("PAM4 symbol {bad} outside 0..=3")));
        }
        Ok(Pam4Frame(symbols))
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One byte per symbol, most significant segment first.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.clone()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Pam4Frame::new(bytes.to_vec())
    }
}

/// A frame whose last channel may carry an extra fraction `carry_num / carry_den`
/// on top of its PAM4 digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CarryFrame {
    pub frame: Pam4Frame,
    pub carry_num: u64,
    pub carry_den: u64,
}

impl CarryFrame {
    pub fn plain(frame: Pam4Frame) -> Self {
        CarryFrame { frame, carry_num: 0, carry_den: 1 }
    }

    /// Channel values in units of `1 / carry_den`.
    pub fn channel_units(&self) -> Vec<u64> {
        let mut units: Vec<u64> = self.frame.symbols().iter().map(|&s| s as u64 * self.carry_den).collect();
        if let Some(last) = units.last_mut() {
            *last += self.carry_num;
        }
        units
    }

    pub fn levels(&self) -> Vec<f64> {
        self.channel_units().iter().map(|&u| u as f64 / self.carry_den as f64).collect()
    }
}

/// Received analog amplitudes before the transceivers snap them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogFrame {
    pub levels: Vec<f64>,
    /// The last channel's grid step is `1 / last_channel_divisions`.
    pub last_channel_divisions: u64,
}

impl AnalogFrame {
    pub fn new(levels: Vec<f64>) -> Self {
        AnalogFrame { levels, last_channel_divisions: 1 }
    }

    pub fn with_last_step(levels: Vec<f64>, divisions: u64) -> Self {
        AnalogFrame { levels, last_channel_divisions: divisions.max(1) }
    }
}

/// Affine map between real gradients in `[lo, hi]` and codes `0..=2^B-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointScale {
    lo: f64,
    hi: f64,
}

impl FixedPointScale {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(OptincError::domain(format!("degenerate fixed-point scale [{lo}, {hi}]")));
        }
        Ok(FixedPointScale { lo, hi })
    }

    /// Offset-binary scale for signed values clipped to `[-clip, clip]`.
    pub fn symmetric(clip: f64) -> Result<Self> {
        FixedPointScale::new(-clip, clip)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Size of one code step in gradient units.
    pub fn step(&self, cfg: &SystemConfig) -> f64 {
        (self.hi - self.lo) / cfg.max_code() as f64
    }
}

pub fn encode_pam4(word: GradientWord, cfg: &SystemConfig) -> Result<Pam4Frame> {
    if word.0 > cfg.max_code() {
        return Err(OptincError::domain(format!(
            "code {} exceeds {}-bit range",
            word.0,
            cfg.bit_width()
        )));
    }
    let m = cfg.segments();
    let symbols = (1..=m).map(|i| ((word.0 >> (2 * (m - i))) & 3) as u8).collect();
    Ok(Pam4Frame(symbols))
}

pub fn decode_pam4(frame: &Pam4Frame, cfg: &SystemConfig) -> Result<GradientWord> {
    if frame.len() != cfg.segments() {
        return Err(OptincError::domain(format!(
            "frame has {} symbols, expected {}",
            frame.len(),
            cfg.segments()
        )));
    }
    let mut code = 0u64;
    for &s in frame.symbols() {
        if s > 3 {
            return Err(OptincError::domain(format!("PAM4 symbol {s} outside 0..=3")));
        }
        code = (code << 2) | s as u64;
    }
    Ok(GradientWord(code))
}

/// Snaps every channel to its grid with ties rounded up, then clamps.
///
/// Standard channels use step 1 and range `[0, 3]`. When the last channel
/// runs on a finer grid (`divisions > 1`) its range extends to
/// `3 + (N - 1) / divisions` and the fraction is returned as the carry.
pub fn snap_to_grid(analog: &AnalogFrame, cfg: &SystemConfig) -> Result<CarryFrame> {
    if analog.levels.len() != cfg.segments() {
        return Err(OptincError::domain(format!(
            "analog frame has {} channels, expected {}",
            analog.levels.len(),
            cfg.segments()
        )));
    }
    if let Some(bad) = analog.levels.iter().find(|v| !v.is_finite()) {
        return Err(OptincError::domain(format!("non-finite analog level {bad}")));
    }
    let m = analog.levels.len();
    let div = analog.last_channel_divisions.max(1);
    let mut symbols = Vec::with_capacity(m);
    for &level in &analog.levels[..m - 1] {
        symbols.push(snap_units(level, 1, 3) as u8);
    }
    let last_max = if div == 1 { 3 } else { 3 * div + cfg.servers() - 1 };
    let last_units = snap_units(analog.levels[m - 1], div, last_max);
    let digit = (last_units / div).min(3);
    symbols.push(digit as u8);
    Ok(CarryFrame { frame: Pam4Frame(symbols), carry_num: last_units - digit * div, carry_den: div })
}

fn snap_units(level: f64, divisions: u64, max_units: u64) -> u64 {
    let scaled = (level * divisions as f64 + 0.5).floor();
    if scaled <= 0.0 {
        0
    } else {
        (scaled as u64).min(max_units)
    }
}

pub fn real_to_word(x: f64, scale: &FixedPointScale, cfg: &SystemConfig) -> GradientWord {
    let max = cfg.max_code() as f64;
    let t = (x - scale.lo) / (scale.hi - scale.lo) * max;
    let code = (t + 0.5).floor().clamp(0.0, max);
    GradientWord(code as u64)
}

pub fn word_to_real(word: GradientWord, scale: &FixedPointScale, cfg: &SystemConfig) -> f64 {
    code_to_real(word.0 as f64, scale, cfg)
}

/// Inverse of the unrounded map, accepting fractional codes (exact means).
pub fn code_to_real(code: f64, scale: &FixedPointScale, cfg: &SystemConfig) -> f64 {
    scale.lo + code / cfg.max_code() as f64 * (scale.hi - scale.lo)
}
