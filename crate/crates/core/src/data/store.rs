//! Little-endian binary stores.
//!
//! Feature store: `MCFS`, version u32 = 1, count u32, then per record
//! `id_len u16, id (UTF-8), dim u32, dim x f32`.
//!
//! Flow store: `MCFL`, version u32 = 1, H u32, W u32, T u32, then per field the
//! u-plane followed by the v-plane, row-major f32.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;

use super::FlowField;
use crate::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"MCFS";
const FLOW_MAGIC: &[u8; 4] = b"MCFL";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub values: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Self {
        Self { id: id.into(), values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn write_err(path: &Path, reason: String) -> Error {
    Error::Format { path: path.to_path_buf(), reason }
}

pub fn write_feature_store(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut ids = HashSet::new();
    let dim = records.first().map(|r| r.dim());
    let mut buf = Vec::new();
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if Some(r.dim()) != dim {
            return Err(write_err(path, format!("record `{}` has dim {}, store dim is {}", r.id, r.dim(), dim.unwrap_or(0))));
        }
        if !ids.insert(r.id.as_str()) {
            return Err(write_err(path, format!("duplicate id `{}`", r.id)));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature record `{}`", r.id)));
        }
        let id = r.id.as_bytes();
        let id_len: u16 = id.len().try_into().map_err(|_| write_err(path, format!("id `{}` too long", r.id)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(r.dim() as u32).to_le_bytes());
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.data.len()),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if &found != magic {
            return Err(Error::BadMagic { path: self.path.to_path_buf(), expected: *magic, found });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format { path: self.path.to_path_buf(), reason: format!("unsupported version {version}") });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: format!("{} trailing bytes", self.data.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn read_feature_store(path: &Path) -> Result<Vec<FeatureRecord>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { path, data: &data, pos: 0 };
    c.header(FEATURE_MAGIC)?;
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut dim = None;
    for _ in 0..count {
        let n = c.u16()? as usize;
        let id = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format { path: path.to_path_buf(), reason: "id is not UTF-8".into() })?
            .to_string();
        let d = c.u32()? as usize;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Format { path: path.to_path_buf(), reason: format!("record `{id}` has inconsistent dim {d}") });
        }
        out.push(FeatureRecord { id, values: c.f32s(d)? });
    }
    c.finish()?;
    Ok(out)
}

/// Feature records indexed by id.
#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    dim: usize,
    index: HashMap<String, usize>,
    records: Vec<FeatureRecord>,
}

impl FeatureStore {
    pub fn from_records(records: Vec<FeatureRecord>) -> Self {
        let dim = records.first().map(|r| r.dim()).unwrap_or(0);
        let index = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Self { dim, index, records }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self::from_records(read_feature_store(path)?))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f32]> {
        self.index
            .get(id)
            .map(|&i| self.records[i].values.as_slice())
            .ok_or_else(|| Error::MissingKey(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

pub fn write_flow_store(path: &Path, flows: &[FlowField]) -> Result<()> {
    let (h, w) = flows.first().map(|f| f.dim()).unwrap_or((0, 0));
    let mut buf = Vec::with_capacity(20 + flows.len() * 8 * h * w);
    buf.extend_from_slice(FLOW_MAGIC);
    for v in [VERSION, h as u32, w as u32, flows.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for f in flows {
        if f.dim() != (h, w) {
            return Err(write_err(path, format!("flow of shape {:?} in a {h}x{w} store", f.dim())));
        }
        for v in f.u.iter().chain(f.v.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_flow_store(path: &Path) -> Result<Vec<FlowField>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { path, data: &data, pos: 0 };
    c.header(FLOW_MAGIC)?;
    let (h, w, t) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let mut out = Vec::with_capacity(t.min(1 << 16));
    for _ in 0..t {
        let u = Array2::from_shape_vec((h, w), c.f32s(h * w)?).expect("length checked");
        let v = Array2::from_shape_vec((h, w), c.f32s(h * w)?).expect("length checked");
        out.push(FlowField::new(u, v)?);
    }
    c.finish()?;
    Ok(out)
}
