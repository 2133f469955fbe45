//! Byte layouts shared by every on-disk artifact.
//!
//! Tensor ("CTEN"): the 4-byte magic `CTEN`, a `u8` rank, `rank` little-endian
//! `u32` dimensions, a `u8` dtype code (0 = f32, 1 = f64) and the row-major
//! little-endian payload.
//!
//! Bank file: a plain sequence of `(clip_time_s: u32, actor_id: u32, CTEN)`
//! records. Parameter file: a sequence of `(name_len: u32, name, CTEN)`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"CTEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    /// Width of [`Real`] in this build.
    pub fn native() -> Self {
        if core::mem::size_of::<Real>() == 8 {
            Dtype::F64
        } else {
            Dtype::F32
        }
    }
}

fn fmt_err(msg: &str) -> Error {
    Error::Format(String::from(msg))
}

pub fn encode_tensor_into(t: &Tensor, dtype: Dtype, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| fmt_err("rank above 255"))?;
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| fmt_err("dimension above u32::MAX"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(dtype as u8);
    match dtype {
        Dtype::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f64).to_le_bytes())),
    }
    Ok(())
}

pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 8 * t.len());
    encode_tensor_into(t, dtype, &mut out)?;
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| fmt_err("length overflow"))?;
        let s = self.buf.get(self.pos..end).ok_or_else(|| fmt_err("truncated input"))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        if self.take(4)? != MAGIC {
            return Err(fmt_err("bad magic, expected CTEN"));
        }
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt_err("element count overflow"))?;
        let data: Vec<Real> = match self.u8()? {
            0 => self
                .take(n.checked_mul(4).ok_or_else(|| fmt_err("payload overflow"))?)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as Real)
                .collect(),
            1 => self
                .take(n.checked_mul(8).ok_or_else(|| fmt_err("payload overflow"))?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as Real)
                .collect(),
            code => return Err(Error::Format(alloc::format!("unknown dtype code {code}"))),
        };
        Tensor::new(shape, data)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decode one tensor that must span the whole buffer.
pub fn decode_tensor(buf: &[u8]) -> Result<Tensor> {
    let mut r = Reader { buf, pos: 0 };
    let t = r.tensor()?;
    if !r.done() {
        return Err(fmt_err("trailing bytes after tensor"));
    }
    Ok(t)
}

/// One stored bank record.
#[derive(Debug, Clone, PartialEq)]
pub struct BankRecord {
    pub clip_time_s: u32,
    pub actor_id: u32,
    pub feature: Tensor,
}

pub fn encode_bank_records(records: &[BankRecord], dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(&r.clip_time_s.to_le_bytes());
        out.extend_from_slice(&r.actor_id.to_le_bytes());
        encode_tensor_into(&r.feature, dtype, &mut out)?;
    }
    Ok(out)
}

pub fn decode_bank_records(buf: &[u8]) -> Result<Vec<BankRecord>> {
    let mut r = Reader { buf, pos: 0 };
    let mut out = Vec::new();
    while !r.done() {
        let clip_time_s = r.u32()?;
        let actor_id = r.u32()?;
        let feature = r.tensor()?;
        out.push(BankRecord {
            clip_time_s,
            actor_id,
            feature,
        });
    }
    Ok(out)
}

pub fn encode_named_tensors<'a>(items: impl IntoIterator<Item = (&'a str, &'a Tensor)>, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (name, t) in items {
        let len = u32::try_from(name.len()).map_err(|_| fmt_err("name too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor_into(t, dtype, &mut out)?;
    }
    Ok(out)
}

pub fn decode_named_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    let mut out = Vec::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(len)?).map_err(|_| fmt_err("parameter name is not UTF-8"))?;
        out.push((String::from(name), r.tensor()?));
    }
    Ok(out)
}
