use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"DSEG1";

/// Named parameters with matching gradient buffers, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let grad = Tensor::zeros(value.shape());
        match self.index.get(&name) {
            Some(&i) => {
                self.values[i] = value;
                self.grads[i] = grad;
            }
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.values.push(value);
                self.grads.push(grad);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn grad(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.grads[i]
    }

    pub fn set_grad(&mut self, i: usize, g: Tensor) -> Result<()> {
        if g.shape() != self.values[i].shape() {
            return Err(Error::DimensionMismatch(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                self.names[i],
                self.values[i].shape()
            )));
        }
        self.grads[i] = g;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Flat binary encoding: magic, then per parameter
    /// `u32 name_len | name | u32 rank | u64 dims… | f64 data…`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for (name, t) in self.names.iter().zip(&self.values) {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
        let bad = |m: &str| Error::Format { what: "parameter file", message: m.to_string() };
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing DSEG1 magic"))?;
        let mut cur = Cursor { buf: rest, pos: 0 };
        let mut store = ParamStore::new();
        while !cur.done() {
            let name_len = cur.u32().ok_or_else(|| bad("truncated name length"))? as usize;
            let name = cur.take(name_len).ok_or_else(|| bad("truncated name"))?;
            let name = std::str::from_utf8(name).map_err(|_| bad("name is not utf-8"))?.to_string();
            let rank = cur.u32().ok_or_else(|| bad("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64().ok_or_else(|| bad("truncated dims"))? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 8).ok_or_else(|| bad("truncated data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if store.position(&name).is_some() {
                return Err(bad("duplicate parameter name"));
            }
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamStore::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
