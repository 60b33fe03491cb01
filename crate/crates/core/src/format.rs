//! FLXQ binary container for float, quantized, and packed tensors.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! 0   magic     "FLXQ"
//! 4   version   u16 (= 1)
//! 6   kind      u8   0 float | 1 quant | 2 packed
//! 7   dtype     u8   0 f32 | 1 i8 | 2 u64 words | 3 u32 words
//! 8   ndim      u8   (= 2)
//! 9   dims      ndim x u64 (rows, cols; unpadded for packed tensors)
//! ```
//!
//! followed by the kind-specific body:
//!
//! ```text
//! float:  rows*cols f32, row-major
//! quant:  bits u8, group_axis u8 (0 cols | 1 rows), scale_dtype u8 (0 f32 | 1 f16),
//!         reserved u8 (= 0), group_size u32, scale_count u64,
//!         scales (f32 or f16), rows*cols i8 values, row-major
//! packed: bits u8, signed u8, word_bits u8, reserved u8 (= 0),
//!         chunk_m u32, chunk_k u32, mma_m u32, mma_n u32, mma_k u32,
//!         word_count u64, words (u32 when word_bits = 32, else u64)
//! ```
//!
//! The body must end exactly at the end of the file.

use std::path::Path;

use half::f16;

use crate::bitpack::{PackConfig, PackedTensor};
use crate::quantizer::{FloatTensor, GroupAxis, QuantTensor, ScaleStorage};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLXQ";
pub const VERSION: u16 = 1;

const KIND_FLOAT: u8 = 0;
const KIND_QUANT: u8 = 1;
const KIND_PACKED: u8 = 2;

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;
const DTYPE_U64: u8 = 2;
const DTYPE_U32: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum FlxqObject {
    Float(FloatTensor),
    Quant(QuantTensor),
    Packed(PackedTensor),
}

impl FlxqObject {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FlxqObject::Float(_) => "float tensor",
            FlxqObject::Quant(_) => "quant tensor",
            FlxqObject::Packed(_) => "packed tensor",
        }
    }
}

fn header(out: &mut Vec<u8>, kind: u8, dtype: u8, rows: usize, cols: usize) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[kind, dtype, 2]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
}

pub fn encode(obj: &FlxqObject) -> Vec<u8> {
    let mut out = Vec::new();
    match obj {
        FlxqObject::Float(t) => {
            header(&mut out, KIND_FLOAT, DTYPE_F32, t.rows(), t.cols());
            for v in t.to_row_major().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        FlxqObject::Quant(q) => {
            header(&mut out, KIND_QUANT, DTYPE_I8, q.rows(), q.cols());
            let axis = match q.group_axis() {
                GroupAxis::Cols => 0,
                GroupAxis::Rows => 1,
            };
            let f16_scales = q.scale_storage() == ScaleStorage::F16;
            out.extend_from_slice(&[q.bits(), axis, u8::from(f16_scales), 0]);
            out.extend_from_slice(&(q.group_size() as u32).to_le_bytes());
            out.extend_from_slice(&(q.scales().len() as u64).to_le_bytes());
            for &s in q.scales() {
                if f16_scales {
                    out.extend_from_slice(&f16::from_f32(s).to_le_bytes());
                } else {
                    out.extend_from_slice(&s.to_le_bytes());
                }
            }
            out.extend(q.values().iter().map(|&v| v as u8));
        }
        FlxqObject::Packed(p) => {
            let cfg = p.config();
            let narrow = cfg.word_bits == 32;
            header(&mut out, KIND_PACKED, if narrow { DTYPE_U32 } else { DTYPE_U64 }, p.rows(), p.cols());
            out.extend_from_slice(&[p.bits(), u8::from(p.is_signed()), cfg.word_bits as u8, 0]);
            for v in [cfg.chunk_m, cfg.chunk_k, cfg.mma_m, cfg.mma_n, cfg.mma_k] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.extend_from_slice(&(p.words().len() as u64).to_le_bytes());
            for &w in p.words() {
                if narrow {
                    out.extend_from_slice(&(w as u32).to_le_bytes());
                } else {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            )
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        usize::try_from(self.u64(what)?).map_err(|_| Error::format(at, format!("{what} overflows")))
    }

    /// Checks that exactly `count * width` payload bytes remain.
    fn expect_payload(&self, count: usize, width: usize, what: &str) -> Result<()> {
        let remaining = self.buf.len() - self.pos;
        match count.checked_mul(width) {
            Some(n) if n == remaining => Ok(()),
            Some(n) => Err(Error::format(self.offset(), format!("{what} needs {n} bytes, file holds {remaining}"))),
            None => Err(Error::format(self.offset(), format!("{what} size overflows"))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<FlxqObject> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic (expected \"FLXQ\")"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let kind = c.u8("kind")?;
    let dtype = c.u8("dtype")?;
    let ndim = c.u8("ndim")?;
    if ndim != 2 {
        return Err(Error::format(8, format!("{ndim} dimensions (expected 2)")));
    }
    let rows = c.usize("rows")?;
    let cols = c.usize("cols")?;
    let elems = rows.checked_mul(cols).ok_or_else(|| Error::format(9, format!("{rows}x{cols} overflows")))?;
    let expect_dtype = |want: &[u8]| {
        if want.contains(&dtype) {
            Ok(())
        } else {
            Err(Error::format(7, format!("dtype {dtype} invalid for kind {kind}")))
        }
    };

    match kind {
        KIND_FLOAT => {
            expect_dtype(&[DTYPE_F32])?;
            let at = c.offset();
            c.expect_payload(elems, 4, "float payload")?;
            let data = c
                .take(elems * 4, "float payload")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = FloatTensor::new(data, rows, cols).map_err(|e| Error::format(at, e.to_string()))?;
            Ok(FlxqObject::Float(t))
        }
        KIND_QUANT => {
            expect_dtype(&[DTYPE_I8])?;
            let bits = c.u8("bits")?;
            let axis = match c.u8("group axis")? {
                0 => GroupAxis::Cols,
                1 => GroupAxis::Rows,
                a => return Err(Error::format(c.offset() - 1, format!("unknown group axis {a}"))),
            };
            let scale_f16 = match c.u8("scale dtype")? {
                0 => false,
                1 => true,
                d => return Err(Error::format(c.offset() - 1, format!("unknown scale dtype {d}"))),
            };
            c.u8("reserved")?;
            let group_size = c.u32("group size")? as usize;
            let n_scales = c.usize("scale count")?;
            let width = if scale_f16 { 2 } else { 4 };
            let remaining = bytes.len() - c.pos;
            let need = n_scales.checked_mul(width).and_then(|s| s.checked_add(elems));
            if need != Some(remaining) {
                return Err(Error::format(
                    c.offset(),
                    format!("{n_scales} scales and {elems} values do not match {remaining} payload bytes"),
                ));
            }
            let at = c.offset();
            let scales = c
                .take(n_scales * width, "scales")?
                .chunks_exact(width)
                .map(|b| {
                    if scale_f16 {
                        f16::from_le_bytes([b[0], b[1]]).to_f32()
                    } else {
                        f32::from_le_bytes(b.try_into().expect("4 bytes"))
                    }
                })
                .collect();
            let values = c.take(elems, "values")?.iter().map(|&b| b as i8).collect();
            let storage = if scale_f16 { ScaleStorage::F16 } else { ScaleStorage::Full };
            let q = QuantTensor::from_parts(values, rows, cols, bits, group_size, axis, scales)
                .and_then(|q| q.with_scale_storage(storage))
                .map_err(|e| Error::format(at, e.to_string()))?;
            Ok(FlxqObject::Quant(q))
        }
        KIND_PACKED => {
            expect_dtype(&[DTYPE_U32, DTYPE_U64])?;
            let bits = c.u8("bits")?;
            let signed = c.u8("signed flag")? != 0;
            let word_bits = usize::from(c.u8("word bits")?);
            c.u8("reserved")?;
            if (word_bits == 32) != (dtype == DTYPE_U32) {
                return Err(Error::format(7, format!("dtype {dtype} disagrees with {word_bits}-bit words")));
            }
            let cfg = PackConfig {
                chunk_m: c.u32("chunk_m")? as usize,
                chunk_k: c.u32("chunk_k")? as usize,
                mma_m: c.u32("mma_m")? as usize,
                mma_n: c.u32("mma_n")? as usize,
                mma_k: c.u32("mma_k")? as usize,
                word_bits,
            };
            let cfg_at = c.offset();
            cfg.validate().map_err(|e| Error::format(cfg_at, e.to_string()))?;
            let n_words = c.usize("word count")?;
            let width = word_bits / 8;
            c.expect_payload(n_words, width, "packed words")?;
            let at = c.offset();
            let words = c
                .take(n_words * width, "packed words")?
                .chunks_exact(width)
                .map(|b| {
                    if width == 4 {
                        u64::from(u32::from_le_bytes(b.try_into().expect("4 bytes")))
                    } else {
                        u64::from_le_bytes(b.try_into().expect("8 bytes"))
                    }
                })
                .collect();
            let p = PackedTensor::from_parts(words, bits, signed, rows, cols, cfg)
                .map_err(|e| Error::format(at, e.to_string()))?;
            Ok(FlxqObject::Packed(p))
        }
        k => Err(Error::format(6, format!("unknown kind {k}"))),
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<FlxqObject> {
    decode(&std::fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, obj: &FlxqObject) -> Result<()> {
    std::fs::write(path, encode(obj))?;
    Ok(())
}
