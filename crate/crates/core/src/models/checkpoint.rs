//! Versioned little-endian binary container for model parameters and
//! synthetic sets.
//!
//! ```text
//! magic    8 bytes  "FLAPCKPT"
//! version  u32      1
//! kind     u8       1 = model, 2 = synthetic set
//! model:     spec (u32 length + JSON), step u64, round u64, tensor list
//! synthetic: ipc u32, classes (u32 count + u32 each), labels (u32 count +
//!            u32 each), features tensor
//! tensor:  rank u32, dims u64 each, data f64 bit patterns
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelSpec, ModelState};
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FLAPCKPT";
const VERSION: u32 = 1;
const KIND_MODEL: u8 = 1;
const KIND_SYNTHETIC: u8 = 2;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::Checkpoint("length overflows u32".into()))?;
        self.u32(n)
    }
    fn header(&mut self, kind: u8) -> Result<()> {
        self.0.write_all(MAGIC)?;
        self.u32(VERSION)?;
        self.u8(kind)
    }
    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.len(t.shape().len())?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        for v in t.data() {
            self.u64(v.to_bits())?;
        }
        Ok(())
    }
    fn usizes(&mut self, xs: &[usize]) -> Result<()> {
        self.len(xs.len())?;
        for &x in xs {
            self.len(x)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("unexpected end of data".into()))?;
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
    fn header(&mut self, kind: u8) -> Result<()> {
        if &self.bytes::<8>()? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let found = self.u8()?;
        if found != kind {
            return Err(Error::Checkpoint(format!("expected kind {kind}, found {found}")));
        }
        Ok(())
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            data.push(f64::from_bits(self.u64()?));
        }
        Tensor::from_parts(shape, data)
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}

pub fn write_model(mut out: impl Write, state: &ModelState) -> Result<()> {
    let mut w = Writer(&mut out);
    w.header(KIND_MODEL)?;
    let spec = serde_json::to_vec(state.spec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.len(spec.len())?;
    w.0.write_all(&spec)?;
    w.u64(state.step)?;
    w.u64(state.round)?;
    w.len(state.params().len())?;
    for p in state.params() {
        w.tensor(p)?;
    }
    Ok(())
}

pub fn read_model(input: impl Read) -> Result<ModelState> {
    let mut r = Reader(input);
    r.header(KIND_MODEL)?;
    let n = r.u32()? as usize;
    let mut spec = vec![0u8; n];
    r.0.read_exact(&mut spec)
        .map_err(|_| Error::Checkpoint("unexpected end of data".into()))?;
    let spec: ModelSpec =
        serde_json::from_slice(&spec).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let step = r.u64()?;
    let round = r.u64()?;
    let count = r.u32()? as usize;
    let params = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    let mut state = ModelState::from_params(spec, params)?;
    state.step = step;
    state.round = round;
    Ok(state)
}

pub fn write_synthetic(mut out: impl Write, set: &SyntheticSet) -> Result<()> {
    let mut w = Writer(&mut out);
    w.header(KIND_SYNTHETIC)?;
    w.len(set.ipc())?;
    w.usizes(set.classes())?;
    w.usizes(set.labels())?;
    w.tensor(set.features())
}

pub fn read_synthetic(input: impl Read) -> Result<SyntheticSet> {
    let mut r = Reader(input);
    r.header(KIND_SYNTHETIC)?;
    let ipc = r.u32()? as usize;
    let classes = r.usizes()?;
    let labels = r.usizes()?;
    let features = r.tensor()?;
    let set = SyntheticSet::from_parts(features, classes, ipc)?;
    if set.labels() != labels.as_slice() {
        return Err(Error::Checkpoint("labels are not the balanced layout".into()));
    }
    Ok(set)
}

pub fn save_model(path: impl AsRef<Path>, state: &ModelState) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, state)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    read_model(std::fs::read(path)?.as_slice())
}

pub fn save_synthetic(path: impl AsRef<Path>, set: &SyntheticSet) -> Result<()> {
    let mut buf = Vec::new();
    write_synthetic(&mut buf, set)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn load_synthetic(path: impl AsRef<Path>) -> Result<SyntheticSet> {
    read_synthetic(std::fs::read(path)?.as_slice())
}
