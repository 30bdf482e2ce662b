//! Binary checkpoints: magic `SMCK`, format version, model hash, meta
//! iteration count, parameter tensors and ADAM state. Integers and floats
//! are little-endian; every value is stored as f64.

use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::meta::AdamState;
use crate::snn::ParamSet;

const MAGIC: &[u8; 4] = b"SMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_hash: [u8; 32],
    pub iterations: u64,
    pub params: ParamSet<f64>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new<F: Real>(model_hash: [u8; 32], iterations: u64, params: &ParamSet<F>, adam: &AdamState) -> Self {
        Checkpoint { model_hash, iterations, params: params.cast(), adam: adam.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.model_hash);
        out.extend_from_slice(&self.iterations.to_le_bytes());
        out.extend_from_slice(&(self.params.layers.len() as u32).to_le_bytes());
        for l in &self.params.layers {
            out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
            out.extend_from_slice(l.name.as_bytes());
            put_tensor(&mut out, &l.weight);
            put_tensor(&mut out, &l.bias);
        }
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.adam.m.len() as u32).to_le_bytes());
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            put_tensor(&mut out, m);
            put_tensor(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let model_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let iterations = r.u64()?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(at, "layer name is not UTF-8"))?;
            let weight = r.tensor()?;
            let bias = r.tensor()?;
            layers.push(crate::snn::LayerParams { name, weight, bias });
        }
        let t = r.u64()?;
        let n = r.u32()? as usize;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..n {
            m.push(r.tensor()?);
            v.push(r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { model_hash, iterations, params: ParamSet { layers }, adam: AdamState { m, v, t } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint; refuses one written for a different model unless
    /// `force` is set.
    pub fn load(path: &Path, expected_hash: &[u8; 32], force: bool) -> Result<Self> {
        let ck = Self::from_bytes(&std::fs::read(path)?)?;
        if !force && &ck.model_hash != expected_hash {
            return Err(Error::config(format!(
                "checkpoint {} was written for a different network or frame geometry (hash {} vs {}); use --force to load anyway",
                path.display(),
                hex(&ck.model_hash),
                hex(expected_hash)
            )));
        }
        Ok(ck)
    }
}

fn hex(h: &[u8]) -> String {
    h.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f64>) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.pos, format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor<f64>> {
        let at = self.pos;
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::format(at, format!("tensor rank {ndim} is implausible")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(at, "tensor too large"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(at, "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))
    }
}
