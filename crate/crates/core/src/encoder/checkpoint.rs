//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! magic  "LORBCKPT"          8 bytes
//! version                    u32
//! tensor count
//! per tensor: name length, name bytes (UTF-8), rank, dims…, data as f64 LE
//! frozen bitmap: bit count, then ceil(count/8) bytes, LSB first
//! config length, config as canonical JSON
//! ```
//!
//! A LoRA delta file uses the same container but holds only the LoRA pairs
//! and carries `"kind": "lora-delta"` in its config.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::model::ScoringModel;
use super::params::{Param, ParamStore};
use crate::autodiff::Tensor;
use crate::canonical::to_canonical_json;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::peft::{attach_lora, AdaptationConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LORBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Model,
    LoraDelta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: Kind,
    encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vocabulary>,
    adaptation: Option<AdaptationConfig>,
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_len(r: &mut impl Read, limit: u64, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    if v > limit {
        return Err(Error::Checkpoint(format!("{what} {v} exceeds limit {limit}")));
    }
    Ok(v as usize)
}

fn write_container<'a>(
    w: &mut impl Write,
    params: impl ExactSizeIterator<Item = &'a Param>,
    header: &Header,
) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u64(w, params.len() as u64)?;
    let mut frozen = Vec::with_capacity(params.len());
    for p in params {
        put_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        put_u64(w, p.tensor.shape().len() as u64)?;
        for &d in p.tensor.shape() {
            put_u64(w, d as u64)?;
        }
        for &x in p.tensor.data() {
            w.write_all(&x.to_le_bytes())?;
        }
        frozen.push(p.frozen);
    }
    put_u64(w, frozen.len() as u64)?;
    let mut bytes = vec![0u8; frozen.len().div_ceil(8)];
    for (i, &f) in frozen.iter().enumerate() {
        if f {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)?;
    let json = to_canonical_json(header)?;
    put_u64(w, json.len() as u64)?;
    w.write_all(json.as_bytes())?;
    Ok(())
}

fn read_container(r: &mut impl Read) -> Result<(ParamStore, Header)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    let ver = u32::from_le_bytes(ver);
    if ver != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {ver}")));
    }
    let count = get_len(r, 1 << 20, "tensor count")?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let name_len = get_len(r, 4096, "name length")?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = get_len(r, 8, "rank")?;
        let dims = (0..rank)
            .map(|_| get_len(r, 1 << 32, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(name, Tensor::new(dims, data)?)?;
    }
    let bits = get_len(r, 1 << 20, "bitmap length")?;
    if bits != count {
        return Err(Error::Checkpoint(format!("bitmap covers {bits} of {count} tensors")));
    }
    let mut bytes = vec![0u8; bits.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    for (i, p) in store.iter_mut().enumerate() {
        p.frozen = bytes[i / 8] & (1 << (i % 8)) != 0;
    }
    let json_len = get_len(r, 1 << 30, "config length")?;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    Ok((store, header))
}

pub fn write_checkpoint(w: &mut impl Write, model: &ScoringModel) -> Result<()> {
    let header = Header {
        kind: Kind::Model,
        encoder: model.config.clone(),
        vocab: Some(model.vocab.clone()),
        adaptation: model.adaptation.clone(),
    };
    write_container(w, model.params.iter(), &header)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ScoringModel> {
    let (params, header) = read_container(r)?;
    let Kind::Model = header.kind else {
        return Err(Error::Checkpoint(
            "expected a model checkpoint, found a LoRA delta".into(),
        ));
    };
    let vocab = header
        .vocab
        .ok_or_else(|| Error::Checkpoint("model checkpoint without vocabulary".into()))?;
    header.encoder.validate()?;
    if vocab.len() != header.encoder.vocab_size {
        return Err(Error::Checkpoint("vocabulary size mismatch".into()));
    }
    Ok(ScoringModel {
        config: header.encoder,
        vocab,
        params,
        adaptation: header.adaptation,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ScoringModel) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScoringModel> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

/// Writes only the LoRA pairs of `model`, so they can be shipped apart
/// from the base checkpoint.
pub fn write_lora_delta(w: &mut impl Write, model: &ScoringModel) -> Result<()> {
    let Some(AdaptationConfig::Lora(_)) = &model.adaptation else {
        return Err(Error::NoLora);
    };
    let header = Header {
        kind: Kind::LoraDelta,
        encoder: model.config.clone(),
        vocab: None,
        adaptation: model.adaptation.clone(),
    };
    let pairs: Vec<&Param> = model.params.iter().filter(|p| p.role.is_lora()).collect();
    write_container(w, pairs.into_iter(), &header)
}

pub fn save_lora_delta(path: impl AsRef<Path>, model: &ScoringModel) -> Result<()> {
    let mut buf = Vec::new();
    write_lora_delta(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Attaches the LoRA configuration stored in a delta file to `base` and
/// loads its pair weights.
pub fn read_lora_delta(base: ScoringModel, r: &mut impl Read) -> Result<ScoringModel> {
    let (pairs, header) = read_container(r)?;
    let (Kind::LoraDelta, Some(AdaptationConfig::Lora(cfg))) = (header.kind, header.adaptation) else {
        return Err(Error::Checkpoint("not a LoRA delta file".into()));
    };
    if header.encoder != base.config {
        return Err(Error::Checkpoint("delta was trained on a different encoder".into()));
    }
    let mut model = attach_lora(base, &cfg)?;
    for p in pairs.iter() {
        let slot = model
            .params
            .get_mut(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{}`", p.name)))?;
        if slot.tensor.shape() != p.tensor.shape() {
            return Err(Error::shape("load_lora_delta", slot.tensor.shape(), p.tensor.shape()));
        }
        slot.tensor = p.tensor.clone();
    }
    Ok(model)
}

pub fn load_lora_delta(base: ScoringModel, path: impl AsRef<Path>) -> Result<ScoringModel> {
    let bytes = std::fs::read(path)?;
    read_lora_delta(base, &mut bytes.as_slice())
}
