//! Checkpoints: `manifest.json` plus a raw `params.bin`.
//!
//! `params.bin` is a sequence of records, one per tensor in manifest order:
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, then the values as
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::autodiff::{ParamSet, Tensor};
use crate::data::io::{read_json, write_json};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub data_dim: usize,
    pub seed: u64,
    pub steps: usize,
    pub tensors: Vec<String>,
    pub frozen: Vec<String>,
}

pub fn save_checkpoint(dir: &Path, spec: &ModelSpec, data_dim: usize, seed: u64, steps: usize, params: &ParamSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bin = Vec::new();
    let mut names = Vec::new();
    for (name, t) in params.iter() {
        names.push(name.clone());
        bin.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bin.extend_from_slice(name.as_bytes());
        bin.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            bin.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Checkpoint {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        data_dim,
        seed,
        steps,
        tensors: names,
        frozen: params.frozen_names().cloned().collect(),
    };
    let bin_path = dir.join("params.bin");
    fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
    write_json(&dir.join("manifest.json"), &manifest)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("params.bin truncated at offset {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<(Checkpoint, ParamSet)> {
    let manifest: Checkpoint = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    let bin_path = dir.join("params.bin");
    let buf = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let mut params = ParamSet::new();
    for expected in &manifest.tensors {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        if &name != expected {
            return Err(Error::Format(format!("expected tensor `{expected}`, found `{name}`")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes in params.bin", buf.len() - r.pos)));
    }
    for f in &manifest.frozen {
        params.freeze(f);
    }
    Ok((manifest, params))
}
