//! Checkpoint directories.
//!
//! ```text
//! <dir>/config.txt    model config and run metadata, key=value
//! <dir>/manifest.txt  one line per tensor: name dims offset length
//! <dir>/tensors.bin   tensor containers back to back (64-bit floats)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::config::KeyValues;
use crate::data::{RawTensor, TensorData};
use crate::error::{Error, Result};

use super::{init_model, ModelConfig, ModelParams, Tensor};

const CONFIG_FILE: &str = "config.txt";
const MANIFEST_FILE: &str = "manifest.txt";
const TENSOR_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointContents {
    pub params: ModelParams<f64>,
    /// Keys other than the model config (training step, epoch, ...).
    pub meta: KeyValues,
    /// Tensors that are not model parameters, such as optimizer moments.
    pub extra: Vec<(String, Tensor<f64>)>,
}

impl CheckpointContents {
    pub fn new(params: ModelParams<f64>) -> Self {
        Self { params, meta: KeyValues::new(), extra: Vec::new() }
    }
}

fn model_keys() -> Vec<String> {
    let mut kv = KeyValues::new();
    ModelConfig::default().to_kv(&mut kv);
    kv.keys().map(str::to_string).collect()
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn save_checkpoint(dir: &Path, ckpt: &CheckpointContents) -> Result<()> {
    ckpt.params.check_finite()?;
    fs::create_dir_all(dir)?;
    let mut kv = ckpt.meta.clone();
    let reserved = model_keys();
    if let Some(k) = kv.keys().find(|k| reserved.iter().any(|r| r == k)) {
        return Err(Error::invalid(format!("metadata key {k} collides with a model config key")));
    }
    ckpt.params.config.to_kv(&mut kv);

    let mut entries: Vec<(String, Tensor<f64>)> = Vec::new();
    ckpt.params.for_each(|name, t| entries.push((name.to_string(), t.clone())));
    entries.extend(ckpt.extra.iter().cloned());

    let mut blob = Vec::new();
    let mut manifest = String::new();
    for (name, t) in &entries {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("tensor name {name:?} must be non-empty without spaces")));
        }
        let raw = RawTensor::new(t.shape.iter().map(|&d| d as u64).collect(), TensorData::F64(t.data.clone()))?;
        let offset = blob.len();
        raw.encode(&mut blob)?;
        manifest.push_str(&format!("{name} {} {offset} {}\n", shape_text(&t.shape), blob.len() - offset));
    }
    fs::write(dir.join(CONFIG_FILE), kv.to_text())?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(TENSOR_FILE), blob)?;
    Ok(())
}

fn parse_manifest_line(line: &str) -> Result<(String, Vec<usize>, usize, usize)> {
    let bad = || Error::format(format!("malformed manifest line {line:?}"));
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    let shape = parts[1].split('x').map(|s| s.parse::<usize>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    let offset = parts[2].parse().map_err(|_| bad())?;
    let len = parts[3].parse().map_err(|_| bad())?;
    Ok((parts[0].to_string(), shape, offset, len))
}

pub fn load_checkpoint(dir: &Path) -> Result<CheckpointContents> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("checkpoint directory {} does not exist", dir.display())));
    }
    let kv = KeyValues::load(&dir.join(CONFIG_FILE))?;
    let config = ModelConfig::from_kv(&kv, &ModelConfig::default())?;
    let reserved = model_keys();
    let mut meta = KeyValues::new();
    for k in kv.keys() {
        if !reserved.iter().any(|r| r == k) {
            meta.set(k, kv.raw(k).unwrap_or_default());
        }
    }

    let blob = fs::read(dir.join(TENSOR_FILE))?;
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut tensors: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (name, shape, offset, len) = parse_manifest_line(line)?;
        let end = offset.checked_add(len).filter(|&e| e <= blob.len()).ok_or_else(|| {
            Error::format(format!("tensor {name} lies outside {TENSOR_FILE}"))
        })?;
        let mut cur = Cursor::new(&blob[offset..end]);
        let raw = RawTensor::decode(&mut cur)?;
        if cur.position() as usize != len {
            return Err(Error::format(format!("tensor {name} has trailing bytes")));
        }
        let dims: Vec<usize> = raw.dims.iter().map(|&d| d as usize).collect();
        if dims != shape {
            return Err(Error::format(format!("tensor {name}: manifest shape {shape:?} but payload {dims:?}")));
        }
        order.push(name.clone());
        tensors.insert(name, Tensor { shape, data: raw.data.to_f64() });
    }

    let mut params: ModelParams<f64> = init_model(&config)?;
    let mut err = None;
    params.for_each_mut(|name, t| {
        if err.is_some() {
            return;
        }
        match tensors.remove(name) {
            Some(src) if src.shape == t.shape => *t = src,
            Some(src) => {
                err = Some(Error::format(format!("tensor {name}: expected shape {:?}, found {:?}", t.shape, src.shape)))
            }
            None => err = Some(Error::format(format!("checkpoint is missing tensor {name}"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let extra = order.into_iter().filter_map(|n| tensors.remove(&n).map(|t| (n, t))).collect();
    Ok(CheckpointContents { params, meta, extra })
}
