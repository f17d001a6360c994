//! Portable model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "VNET1"                      5 bytes
//! u32 L                        number of layer sizes
//! u32 x L                      layer sizes n_in .. n_out
//! f64 x (L-2)                  dropout rate per hidden layer
//! u64                          initialization seed
//! f64 x n_in                   input shift
//! per layer: f64 x (n_out*n_in) weights (row-major, out x in), f64 x n_out bias
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DVector;

use super::{NetworkModel, Topology};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VNET1";

pub fn encode(model: &NetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let sizes = &model.topology.layer_sizes;
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for &p in &model.topology.dropout {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&model.rng_seed.to_le_bytes());
    for &s in model.input_shift.iter() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for p in model.flat_params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(format!("offset {}", self.pos), "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5)? != CHECKPOINT_MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected VNET1"));
    }
    let n_sizes = r.u32()? as usize;
    if !(2..=1024).contains(&n_sizes) {
        return Err(Error::parse("offset 5", format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let dropout = (0..n_sizes - 2).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let topology = Topology::with_dropout(sizes, dropout)?;
    let seed = r.u64()?;
    let mut model = NetworkModel::init(topology, seed);
    let n_in = model.topology.n_in();
    model.input_shift = DVector::from_vec((0..n_in).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    let params = (0..model.n_params()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    model.set_flat_params(&params)?;
    if r.pos != bytes.len() {
        return Err(Error::parse(format!("offset {}", r.pos), "trailing bytes"));
    }
    Ok(model)
}

pub fn write_checkpoint(model: &NetworkModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<NetworkModel> {
    decode(&fs::read(path)?)
}
