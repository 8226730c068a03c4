//! On-disk checkpoint format.
//!
//! A checkpoint is a directory holding `meta.json` and one `<name>.f32` file
//! per parameter array. Each array file is an 8-byte-aligned header
//! (`u32` rank, then one `u32` per dimension, little-endian) followed by the
//! values as little-endian IEEE-754 single precision floats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::layers::{ParamTensor, Params};
use super::models::{Lpg, SegNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lpg,
    Seg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: usize,
    pub role: Role,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    pub arch: ArchConfig,
    /// Parameter arrays in network order, with their learning-rate group.
    pub params: Vec<(String, super::layers::ParamGroup)>,
}

pub fn encode_array(shape: &[usize], values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (1 + shape.len() + values.len()));
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    let word = |i: usize| -> std::result::Result<u32, String> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| "truncated header".to_string())
    };
    let rank = word(0)? as usize;
    let shape: Vec<usize> = (0..rank).map(|i| word(1 + i).map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[4 * (1 + rank).min(bytes.len() / 4)..];
    if body.len() != 4 * count || bytes.len() < 4 * (1 + rank) {
        return Err(format!("expected {count} values for shape {shape:?}, found {} bytes", body.len()));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((shape, values))
}

fn file_name(param: &str) -> String {
    format!("{param}.f32")
}

pub fn save<S: Scalar>(dir: &Path, meta: &CheckpointMeta, params: &Params<S>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in &params.tensors {
        let values: Vec<f32> = t.data.iter().map(|v| v.to_f32_lossy()).collect();
        let path = dir.join(file_name(&t.name));
        fs::write(&path, encode_array(&t.shape, &values)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

pub fn load_params<S: Scalar>(dir: &Path, meta: &CheckpointMeta) -> Result<Params<S>> {
    let mut tensors = Vec::with_capacity(meta.params.len());
    for (name, group) in &meta.params {
        let path = dir.join(file_name(name));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (shape, values) = decode_array(&bytes).map_err(|d| Error::checkpoint(&path, d))?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::checkpoint(&path, format!("non-finite value {bad}")));
        }
        tensors.push(ParamTensor {
            name: name.clone(),
            shape,
            group: *group,
            data: values.into_iter().map(|v| S::from_f64_lossy(v as f64)).collect(),
        });
    }
    Ok(Params { tensors })
}

pub fn meta_for<S: Scalar>(
    stage: usize,
    role: Role,
    seed: u64,
    config_hash: &str,
    metrics: BTreeMap<String, f64>,
    arch: &ArchConfig,
    params: &Params<S>,
) -> CheckpointMeta {
    CheckpointMeta {
        stage,
        role,
        seed,
        config_hash: config_hash.to_string(),
        metrics,
        arch: arch.clone(),
        params: params.tensors.iter().map(|t| (t.name.clone(), t.group)).collect(),
    }
}

fn expect_role(dir: &Path, meta: &CheckpointMeta, role: Role) -> Result<()> {
    if meta.role != role {
        return Err(Error::checkpoint(dir, format!("checkpoint role is {:?}, expected {role:?}", meta.role)));
    }
    Ok(())
}

pub fn load_seg<S: Scalar>(dir: &Path) -> Result<(SegNet<S>, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    expect_role(dir, &meta, Role::Seg)?;
    let params = load_params(dir, &meta)?;
    let net = SegNet::from_parts(meta.arch.clone(), params).map_err(|e| Error::checkpoint(dir, e.to_string()))?;
    Ok((net, meta))
}

pub fn load_lpg<S: Scalar>(dir: &Path) -> Result<(Lpg<S>, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    expect_role(dir, &meta, Role::Lpg)?;
    let params = load_params(dir, &meta)?;
    let lpg = Lpg::from_parts(meta.arch.clone(), params).map_err(|e| Error::checkpoint(dir, e.to_string()))?;
    Ok((lpg, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_header_layout() {
        let bytes = encode_array(&[2, 1], &[1.0, -2.5]);
        assert_eq!(&bytes[..12], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(decode_array(&bytes).unwrap(), (vec![2, 1], vec![1.0, -2.5]));
    }

    #[test]
    fn truncated_array_is_rejected() {
        let bytes = encode_array(&[3], &[1.0, 2.0, 3.0]);
        assert!(decode_array(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_array(&bytes[..2]).is_err());
    }
}
