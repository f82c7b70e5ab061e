//! Binary parameter container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MAII" version name_len name entry_count
//! entry_count x { name_len name rank=4 n c h w f32[n*c*h*w] }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::arch::build_model;
use super::graph::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MAII";
pub const VERSION: u32 = 1;

/// Named tensors under a header label.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub label: String,
    pub entries: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in the container format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload: usize = self.entries.iter().map(|(n, t)| n.len() + 24 + 4 * t.len()).sum();
        let mut out = Vec::with_capacity(16 + self.label.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.label)?;
        put_u32(&mut out, self.entries.len())?;
        for (name, t) in &self.entries {
            put_str(&mut out, name)?;
            put_u32(&mut out, 4)?;
            for d in t.shape().0 {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let label = r.string()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            if rank != 4 {
                return Err(Error::invalid(format!("entry `{name}` has rank {rank}, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32()? as usize;
            }
            let shape = Shape(dims);
            let n = shape.len();
            let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((name, Tensor::from_parts(shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::invalid(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Container { label, entries })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::invalid("name is not valid UTF-8"))
    }
}

pub fn checkpoint_bytes(model: &ModelGraph) -> Result<Vec<u8>> {
    Container {
        label: model.name().to_string(),
        entries: model.params().to_vec(),
    }
    .to_bytes()
}

/// Rebuilds the architecture named in the header and loads every parameter.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let c = Container::from_bytes(bytes)?;
    let mut model = build_model(&c.label, 0)?;
    let mut seen = vec![false; model.params().len()];
    let index: std::collections::HashMap<String, usize> = model
        .param_index()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    for (name, t) in c.entries {
        let i = *index.get(&name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        model.set_param(&name, t)?;
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::MissingParameter(model.params()[i].0.clone()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<()> {
    Container {
        label: model.name().to_string(),
        entries: model.params().to_vec(),
    }
    .write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    checkpoint_from_bytes(&fs::read(path)?)
}
