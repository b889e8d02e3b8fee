use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError};
use crate::autograd::Tensor;

pub const MAGIC: [u8; 4] = *b"CWAY";
pub const FORMAT_VERSION: u32 = 1;

/// Little-endian binary dump: magic, version, `R C k D`, tensor count, then
/// per tensor its name, rank, dims and `f32` data.
pub fn write_checkpoint<W: Write>(model: &Model, out: W) -> Result<(), ModelError> {
    write_checkpoint_with(model, "", out)
}

/// Like [`write_checkpoint`], followed by a length-prefixed UTF-8 metadata
/// block when `meta` is non-empty.
pub fn write_checkpoint_with<W: Write>(model: &Model, meta: &str, mut out: W) -> Result<(), ModelError> {
    let mut buf = Vec::with_capacity(model.param_count() * 4 + 1024);
    buf.extend_from_slice(&MAGIC);
    let c = model.config;
    for v in [FORMAT_VERSION, c.r as u32, c.c as u32, c.kernel as u32, c.d as u32, model.params.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (name, t) in model.names.iter().zip(&model.params) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if !meta.is_empty() {
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
    }
    out.write_all(&buf).map_err(|source| ModelError::Io {
        path: "<stream>".into(),
        source,
    })?;
    out.flush().map_err(|source| ModelError::Io {
        path: "<stream>".into(),
        source,
    })
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelError> {
        if self.data.len() < n {
            return Err(ModelError::Truncated(what));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Model, ModelError> {
    Ok(read_checkpoint_with(input)?.0)
}

/// The model and its metadata block (empty when absent).
pub fn read_checkpoint_with<R: Read>(mut input: R) -> Result<(Model, String), ModelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|source| ModelError::Io {
        path: "<stream>".into(),
        source,
    })?;
    let mut cur = Cursor { data: &bytes };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let config = ModelConfig {
        r: cur.u32("config")? as usize,
        c: cur.u32("config")? as usize,
        kernel: cur.u32("config")? as usize,
        d: cur.u32("config")? as usize,
    };
    let mut model = Model::new(config, 0)?;
    let mut seen = vec![false; model.params.len()];
    let count = cur.u32("tensor count")?;
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = String::from_utf8_lossy(cur.take(len, "name")?).into_owned();
        let idx = model.index_of(&name).ok_or_else(|| ModelError::UnknownTensor(name.clone()))?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u32("dims")? as usize);
        }
        if shape != model.params[idx].shape() {
            return Err(ModelError::TensorShape {
                name,
                expected: model.params[idx].shape().to_vec(),
                got: shape,
            });
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, "tensor data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        model.params[idx] = Tensor::new(shape, data)?;
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(ModelError::MissingTensor(model.names[i].clone()));
    }
    let mut meta = String::new();
    if !cur.data.is_empty() {
        let len = cur.u32("metadata length")? as usize;
        meta = String::from_utf8(cur.take(len, "metadata")?.to_vec()).map_err(|_| ModelError::Truncated("metadata"))?;
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    save_checkpoint_with(model, "", path)
}

pub fn save_checkpoint_with(model: &Model, meta: &str, path: &Path) -> Result<(), ModelError> {
    let file = File::create(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_checkpoint_with(model, meta, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    Ok(load_checkpoint_with(path)?.0)
}

pub fn load_checkpoint_with(path: &Path) -> Result<(Model, String), ModelError> {
    let file = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint_with(BufReader::new(file))
}
