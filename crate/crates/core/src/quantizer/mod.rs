//! Symmetric fine-grained group quantization.
//!
//! Consecutive elements along the contraction axis K share one scale per
//! group (128 by default). Values are mapped with round-half-away-from-zero
//! into the symmetric range `[-(2^(b-1)-1), 2^(b-1)-1]`; `-2^(b-1)` is never
//! produced. A group whose elements are all zero gets scale `1.0`.

mod policy;
mod tensor;

pub use policy::{activation_bits, BitPolicy, LayerKind, ModelFamily};
pub use tensor::{FloatTensor, Layout};

use half::f16;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_GROUP_SIZE: usize = 128;
pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Largest magnitude representable in the symmetric `bits`-bit range.
#[inline]
pub const fn qmax(bits: u8) -> i32 {
    (1 << (bits - 1)) - 1
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("bit-width {bits} outside supported range {MIN_BITS}..={MAX_BITS}")))
    }
}

/// Axis of the tensor along which groups run (the K dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    /// Groups run along each row; the tensor is `[R, K]`.
    #[default]
    Cols,
    /// Groups run down each column; the tensor is `[K, C]`.
    Rows,
}

/// Precision in which group scales are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleStorage {
    #[default]
    Full,
    /// Scales are rounded to half precision before values are quantized,
    /// as a GPU kernel holding FP16 scales would see them.
    F16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantOptions {
    pub bits: u8,
    pub group_size: usize,
    pub axis: GroupAxis,
    pub scale_storage: ScaleStorage,
}

impl QuantOptions {
    pub fn new(bits: u8, group_size: usize) -> Self {
        Self { bits, group_size, axis: GroupAxis::Cols, scale_storage: ScaleStorage::Full }
    }
}

/// Integer tensor plus one positive scale per (line, group) pair, where a
/// line is a row for [`GroupAxis::Cols`] and a column for [`GroupAxis::Rows`].
/// Scales are stored line-major: `scales[line * groups_per_line + g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    values: Vec<i8>,
    rows: usize,
    cols: usize,
    bits: u8,
    group_size: usize,
    group_axis: GroupAxis,
    scales: Vec<f32>,
    scale_storage: ScaleStorage,
}

impl QuantTensor {
    /// Assembles a tensor from raw parts, checking every invariant.
    /// `values` are row-major.
    pub fn from_parts(
        values: Vec<i8>,
        rows: usize,
        cols: usize,
        bits: u8,
        group_size: usize,
        group_axis: GroupAxis,
        scales: Vec<f32>,
    ) -> Result<Self> {
        check_bits(bits)?;
        if group_size == 0 {
            return Err(Error::InvalidInput("group size must be positive".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} tensor", values.len())));
        }
        let q = Self { values, rows, cols, bits, group_size, group_axis, scales, scale_storage: ScaleStorage::Full };
        let expected = q.lines() * q.groups_per_line();
        if q.scales.len() != expected {
            return Err(Error::Shape(format!(
                "{} scales, expected {expected} ({} lines x {} groups)",
                q.scales.len(),
                q.lines(),
                q.groups_per_line()
            )));
        }
        if let Some(s) = q.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidInput(format!("scale {s} is not finite and positive")));
        }
        let limit = qmax(bits);
        if let Some(v) = q.values.iter().find(|v| i32::from(**v).abs() > limit) {
            return Err(Error::InvalidInput(format!("value {v} outside symmetric {bits}-bit range")));
        }
        Ok(q)
    }

    /// Marks the scales as half precision; fails unless every scale is
    /// exactly representable as an IEEE binary16 value.
    pub fn with_scale_storage(mut self, storage: ScaleStorage) -> Result<Self> {
        if storage == ScaleStorage::F16 {
            if let Some(s) = self.scales.iter().find(|&&s| f16::from_f32(s).to_f32() != s) {
                return Err(Error::InvalidInput(format!("scale {s} is not representable in f16")));
            }
        }
        self.scale_storage = storage;
        Ok(self)
    }

    pub fn scale_storage(&self) -> ScaleStorage {
        self.scale_storage
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn group_axis(&self) -> GroupAxis {
        self.group_axis
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    /// Length of the grouped (K) axis.
    pub fn k(&self) -> usize {
        match self.group_axis {
            GroupAxis::Cols => self.cols,
            GroupAxis::Rows => self.rows,
        }
    }

    /// Number of rows (or columns) that each carry their own scale groups.
    pub fn lines(&self) -> usize {
        match self.group_axis {
            GroupAxis::Cols => self.rows,
            GroupAxis::Rows => self.cols,
        }
    }

    pub fn groups_per_line(&self) -> usize {
        self.k().div_ceil(self.group_size).max(1)
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn scale_at(&self, row: usize, col: usize) -> f32 {
        let (line, k) = match self.group_axis {
            GroupAxis::Cols => (row, col),
            GroupAxis::Rows => (col, row),
        };
        self.scales[line * self.groups_per_line() + k / self.group_size]
    }
}

fn store_scale(scale: f32, storage: ScaleStorage) -> f32 {
    match storage {
        ScaleStorage::Full => scale,
        ScaleStorage::F16 => {
            let h = f16::from_f32(scale).to_f32();
            if h > 0.0 && h.is_finite() {
                h
            } else if h == 0.0 {
                f16::from_bits(1).to_f32()
            } else {
                f16::MAX.to_f32()
            }
        }
    }
}

/// `max|x| / (2^(bits-1) - 1)`, or `1.0` for an all-zero group.
pub fn compute_group_scale(group: &[f32], bits: u8) -> Result<f32> {
    check_bits(bits)?;
    if group.is_empty() {
        return Err(Error::InvalidInput("empty quantization group".into()));
    }
    let mut max_abs = 0.0f32;
    for &x in group {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value {x} in group")));
        }
        max_abs = max_abs.max(x.abs());
    }
    if max_abs == 0.0 {
        return Ok(1.0);
    }
    let scale = max_abs / qmax(bits) as f32;
    // Subnormal inputs can underflow the division.
    Ok(if scale > 0.0 { scale } else { f32::MIN_POSITIVE })
}

#[inline]
fn quantize_value(x: f32, scale: f32, limit: i32) -> i8 {
    // f32::round rounds half away from zero.
    let q = (x / scale).round();
    q.clamp(-limit as f32, limit as f32) as i8
}

/// Quantizes with groups along the column axis and full-precision scales.
pub fn quantize(t: &FloatTensor, bits: u8, group_size: usize) -> Result<QuantTensor> {
    quantize_with(t, &QuantOptions::new(bits, group_size))
}

pub fn quantize_with(t: &FloatTensor, opts: &QuantOptions) -> Result<QuantTensor> {
    check_bits(opts.bits)?;
    if opts.group_size == 0 {
        return Err(Error::InvalidInput("group size must be positive".into()));
    }
    let (rows, cols) = (t.rows(), t.cols());
    let (lines, k) = match opts.axis {
        GroupAxis::Cols => (rows, cols),
        GroupAxis::Rows => (cols, rows),
    };
    let groups = k.div_ceil(opts.group_size).max(1);
    let limit = qmax(opts.bits);
    let mut values = vec![0i8; rows * cols];
    let mut scales = Vec::with_capacity(lines * groups);
    let mut buf = Vec::with_capacity(opts.group_size.min(k.max(1)));

    for line in 0..lines {
        for g in 0..groups {
            let start = g * opts.group_size;
            let end = (start + opts.group_size).min(k);
            let coord = |i: usize| match opts.axis {
                GroupAxis::Cols => (line, i),
                GroupAxis::Rows => (i, line),
            };
            buf.clear();
            buf.extend((start..end).map(|i| {
                let (r, c) = coord(i);
                t.get(r, c)
            }));
            let scale = if buf.is_empty() {
                1.0
            } else {
                store_scale(compute_group_scale(&buf, opts.bits)?, opts.scale_storage)
            };
            for (i, &x) in (start..end).zip(&buf) {
                let (r, c) = coord(i);
                values[r * cols + c] = quantize_value(x, scale, limit);
            }
            scales.push(scale);
        }
    }

    Ok(QuantTensor {
        values,
        rows,
        cols,
        bits: opts.bits,
        group_size: opts.group_size,
        group_axis: opts.axis,
        scales,
        scale_storage: opts.scale_storage,
    })
}

pub fn dequantize(q: &QuantTensor) -> FloatTensor {
    FloatTensor::from_fn(q.rows, q.cols, |r, c| f32::from(q.value(r, c)) * q.scale_at(r, c))
}
