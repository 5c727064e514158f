//! Single-file checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CIRTCKPT"  u32 version=1
//! u32 config_len   config_len bytes of UTF-8 `key = value` lines
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 ndim, ndim × u64 dims, f32 payload
//! ```
//!
//! Tensor names are the dotted paths from [`Parameters::tensors`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{Cirt, InputShape, ModelConfig, Parameters};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CIRTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

pub fn config_kv(config: &ModelConfig, shape: &InputShape) -> Vec<(String, String)> {
    let mut kv = shape.to_kv();
    kv.extend(config.to_kv());
    kv
}

pub fn save_checkpoint(model: &Cirt<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let text: String = config_kv(model.config(), &model.shape())
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    let tensors = model.tensors();
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(text.len() as u32).to_le_bytes())?;
    write(text.as_bytes())?;
    write(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        write(&(t.ndim() as u32).to_le_bytes())?;
        for d in t.shape() {
            write(&(*d as u64).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        write(&payload)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                path: self.path.into(),
                detail: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse {
            path: path.into(),
            detail: "invalid UTF-8".into(),
        })
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let parse_err = |detail: String| Error::Parse {
        path: path.into(),
        detail,
    };
    if r.take(8)? != MAGIC {
        return Err(parse_err("not a checkpoint archive".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(parse_err(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let text = r.string(len)?;
    let config = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(format!("bad config line `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let raw = r.take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| parse_err(e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(parse_err("trailing bytes after the last tensor".into()));
    }
    Ok(Checkpoint { config, tensors })
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Cirt<f32>> {
    let ckpt = read_checkpoint(path.as_ref())?;
    let config = ModelConfig::from_kv(&ckpt.config)?;
    let shape = InputShape::from_kv(&ckpt.config)?;
    let mut model = Cirt::new(config, shape)?;
    apply_tensors(&mut model, &ckpt)?;
    Ok(model)
}

/// Loads a checkpoint, requiring its config to equal `config`/`shape`.
pub fn load_checkpoint_matching(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    shape: &InputShape,
) -> Result<Cirt<f32>> {
    let ckpt = read_checkpoint(path.as_ref())?;
    for (key, expected) in config_kv(config, shape) {
        let found = ckpt
            .config
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| "<missing>".into());
        if found != expected {
            return Err(Error::CheckpointMismatch { key, expected, found });
        }
    }
    let mut model = Cirt::new(config.clone(), *shape)?;
    apply_tensors(&mut model, &ckpt)?;
    Ok(model)
}

fn apply_tensors(model: &mut Cirt<f32>, ckpt: &Checkpoint) -> Result<()> {
    let mut targets = model.tensors_mut();
    if targets.len() != ckpt.tensors.len() {
        return Err(Error::structural(format!(
            "checkpoint holds {} tensors, model has {}",
            ckpt.tensors.len(),
            targets.len()
        )));
    }
    for ((name, dst), (src_name, src)) in targets.iter_mut().zip(&ckpt.tensors) {
        if name != src_name || dst.shape() != src.shape() {
            return Err(Error::structural(format!(
                "checkpoint tensor `{src_name}` {:?} does not fit `{name}` {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.assign(src);
    }
    Ok(())
}
