//! The `.svckpt` tensor container.
//!
//! Layout (little endian): magic `SVC1`, u32 entry count, then per entry a
//! u32 name length, the UTF-8 name, a u8 dtype (0 = f32, 1 = u64), a u32
//! rank and u64 dims. Raw tensor data follows in manifest order.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const SVCKPT_MAGIC: &[u8; 4] = b"SVC1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    /// Counters, seeds and other exact integers.
    U64(Vec<u64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: TensorData,
}

/// Ordered named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn push(&mut self, name: impl Into<String>, shape: Vec<u64>, data: TensorData) {
        let name = name.into();
        debug_assert!(self.get(&name).is_none(), "duplicate entry {name}");
        self.entries.push(Entry { name, shape, data });
    }

    /// Stores f64 values as f32; callers keep them f32-representable.
    pub fn put_f64(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        let shape = shape.iter().map(|&d| d as u64).collect();
        self.push(name, shape, TensorData::F32(values.iter().map(|&v| v as f32).collect()));
    }

    pub fn put_u64(&mut self, name: impl Into<String>, values: &[u64]) {
        self.push(name, vec![values.len() as u64], TensorData::U64(values.to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        match self.get(name).map(|e| &e.data) {
            Some(TensorData::F32(v)) => Ok(v.iter().map(|&x| x as f64).collect()),
            Some(_) => Err(Error::format("svckpt", format!("entry `{name}` is not f32"))),
            None => Err(Error::format("svckpt", format!("missing entry `{name}`"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match self.get(name).map(|e| &e.data) {
            Some(TensorData::U64(v)) => Ok(v.clone()),
            Some(_) => Err(Error::format("svckpt", format!("entry `{name}` is not u64"))),
            None => Err(Error::format("svckpt", format!("missing entry `{name}`"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        self.u64s(name)?
            .first()
            .copied()
            .ok_or_else(|| Error::format("svckpt", format!("entry `{name}` is empty")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(SVCKPT_MAGIC);
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            b.extend_from_slice(e.name.as_bytes());
            b.push(match e.data {
                TensorData::F32(_) => 0,
                TensorData::U64(_) => 1,
            });
            b.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for d in &e.shape {
                b.extend_from_slice(&d.to_le_bytes());
            }
        }
        for e in &self.entries {
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(v) => v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
            }
        }
        b
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
            match end {
                Some(end) => {
                    let s = &bytes[pos..end];
                    pos = end;
                    Ok(s)
                }
                None => Err(Error::format("svckpt", "truncated")),
            }
        };
        if take(4)? != SVCKPT_MAGIC {
            return Err(Error::format("svckpt", "bad magic"));
        }
        let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let count = u32_of(take(4)?) as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32_of(take(4)?) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::format("svckpt", "entry name is not UTF-8"))?;
            let dtype = take(1)?[0];
            let rank = u32_of(take(4)?) as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            manifest.push((name, dtype, shape));
        }
        let mut ckpt = Checkpoint::default();
        for (name, dtype, shape) in manifest {
            let n = shape
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| Error::format("svckpt", "tensor size overflows"))?;
            let data = match dtype {
                0 => {
                    let raw = take(n.checked_mul(4).ok_or_else(|| Error::format("svckpt", "tensor size overflows"))?)?;
                    TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                }
                1 => {
                    let raw = take(n.checked_mul(8).ok_or_else(|| Error::format("svckpt", "tensor size overflows"))?)?;
                    TensorData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                other => return Err(Error::format("svckpt", format!("unknown dtype {other}"))),
            };
            debug_assert_eq!(data.len(), n);
            ckpt.entries.push(Entry { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(Error::format("svckpt", "trailing bytes"));
        }
        Ok(ckpt)
    }
}
