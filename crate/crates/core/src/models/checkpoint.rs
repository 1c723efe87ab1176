//! Model checkpoint files: a JSON header (architecture spec,
//! hyperparameters, seed, optional harness metadata) followed by a flat
//! little-endian f64 parameter block in the header's declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::train::TrainConfig;
use crate::nn::Tensor;

use super::{build, HitModel, ModelError, ModelSpec};

const MAGIC: &[u8; 8] = b"HSPCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub spec: ModelSpec,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub params: Vec<ParamDecl>,
    /// Free-form harness metadata (feature scalers, split info, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    model: &HitModel,
    train: Option<&TrainConfig>,
    seed: u64,
    extra: serde_json::Value,
) -> Result<(), ModelError> {
    let params = model.graph.parameters();
    let header = CheckpointHeader {
        version: 1,
        spec: model.spec.clone(),
        train: train.cloned(),
        seed,
        params: params
            .iter()
            .map(|(name, t)| ParamDecl {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        extra,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| ModelError::Spec(format!("header: {e}")))?;

    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header_json.len() + total * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &params {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| ModelError::Spec(format!("write {}: {e}", path.display())))?;
    fs::rename(&tmp, path).map_err(|e| ModelError::Spec(format!("rename {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(HitModel, CheckpointHeader), ModelError> {
    let bytes =
        fs::read(path).map_err(|e| ModelError::Spec(format!("read {}: {e}", path.display())))?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::Spec(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(ModelError::Spec("truncated checkpoint header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| ModelError::Spec(format!("bad header: {e}")))?;

    let mut model = build(&header.spec, 0)?;
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let block = &bytes[header_end..];
    if block.len() != expected * 8 {
        return Err(ModelError::Spec(format!(
            "parameter block holds {} bytes, header implies {}",
            block.len(),
            expected * 8
        )));
    }
    let mut offset = 0;
    for decl in &header.params {
        let numel: usize = decl.shape.iter().product();
        let data: Vec<f64> = block[offset * 8..(offset + numel) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += numel;
        let tensor = Tensor::from_vec(&decl.shape, data)
            .map_err(|e| ModelError::Spec(format!("parameter {}: {e}", decl.name)))?;
        model.graph.set_param(&decl.name, tensor)?;
    }
    Ok((model, header))
}
