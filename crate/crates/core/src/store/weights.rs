//! `WGT1` attention weight manifests.
//!
//! ```text
//! "WGT1", then u32 LE: M, C_e, C_q, C_v, C_o
//! per head m = 0..M:
//!   query  weight C_q×C_e, bias C_q
//!   key    weight C_q×C_e, bias C_q
//!   value  weight C_v×C_e, bias C_v
//! output   weight C_o×(M·C_v), bias C_o
//! ```
//!
//! Matrices are row-major (output index major), all values f32 LE.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Affine, AttentionHead, ProjectionWeights};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"WGT1";

fn push_affine(out: &mut Vec<u8>, a: &Affine) {
    for v in a.weight.iter().chain(&a.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_weights(w: &ProjectionWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    for d in [w.head_count(), w.input_dim(), w.query_dim(), w.value_dim(), w.output_dim()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for head in w.heads() {
        push_affine(&mut out, &head.query);
        push_affine(&mut out, &head.key);
        push_affine(&mut out, &head.value);
    }
    push_affine(&mut out, w.output());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt { offset: self.pos as u64, reason: "truncated weight manifest".into() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn affine(&mut self, in_dim: usize, out_dim: usize) -> Result<Affine> {
        let weight = self.floats(in_dim * out_dim)?;
        let bias = self.floats(out_dim)?;
        Affine::new(in_dim, out_dim, weight, bias)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ProjectionWeights> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Format("bad magic, expected \"WGT1\"".into()));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    }
    let [m, c_e, c_q, c_v, c_o] = dims;
    if dims.contains(&0) {
        return Err(Error::Format(format!("weight manifest has a zero dimension: {dims:?}")));
    }
    let mut heads = Vec::with_capacity(m);
    for _ in 0..m {
        heads.push(AttentionHead {
            query: cur.affine(c_e, c_q)?,
            key: cur.affine(c_e, c_q)?,
            value: cur.affine(c_e, c_v)?,
        });
    }
    let output = cur.affine(m * c_v, c_o)?;
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt { offset: cur.pos as u64, reason: "trailing bytes in weight manifest".into() });
    }
    ProjectionWeights::new(heads, output)
}

pub fn save_weights(path: impl AsRef<Path>, w: &ProjectionWeights) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(w)).map_err(|e| Error::path(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ProjectionWeights> {
    let path = path.as_ref();
    decode_weights(&fs::read(path).map_err(|e| Error::path(path, e))?)
}
