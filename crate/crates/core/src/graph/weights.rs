//! Weight file format.
//!
//! Little-endian binary: magic "CAYK", version u32, block count u32, then
//! one block per parameterized node in audit-table order. Each block is an
//! array count followed by length-prefixed f32 arrays:
//!
//! - conv-bn-act: weights, gamma, beta, running mean, running variance
//! - head:        weights, bias
//! - coordinate-attention: compress weights, compress bias, gamma, beta,
//!   running mean, running variance, row-gate weights, row-gate bias,
//!   column-gate weights, column-gate bias
//!
//! Batch-norm epsilon is fixed at 1e-5 and not stored. A JSON manifest
//! mirroring the layer table is written next to the binary.

use super::model::{Model, NodeParams};
use super::plan::plan_model;
use super::{GraphError, NetConfig};
use crate::scalar::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const WEIGHT_MAGIC: [u8; 4] = *b"CAYK";
pub const WEIGHT_VERSION: u32 = 1;

/// Sidecar manifest mirroring the audit table.
#[derive(Debug, Serialize, Deserialize)]
pub struct WeightManifest {
    pub tool_version: String,
    pub seed: u64,
    pub total_params: u64,
    pub layers: Vec<super::plan::LayerRow>,
}

fn node_arrays<R: Real>(params: &NodeParams<R>) -> Option<Vec<Vec<f32>>> {
    let flat = |t: &Tensor<R>| t.data().iter().map(|v| v.into_f64() as f32).collect::<Vec<_>>();
    let vecf = |v: &[R]| v.iter().map(|x| x.into_f64() as f32).collect::<Vec<_>>();
    match params {
        NodeParams::None => None,
        NodeParams::ConvBn { conv, bn } => Some(vec![
            flat(&conv.weights),
            vecf(&bn.gamma),
            vecf(&bn.beta),
            vecf(&bn.running_mean),
            vecf(&bn.running_var),
        ]),
        NodeParams::Head { conv } => Some(vec![
            flat(&conv.weights),
            vecf(conv.bias.as_deref().unwrap_or(&[])),
        ]),
        NodeParams::Ca(p) => Some(vec![
            flat(&p.f1.weights),
            vecf(p.f1.bias.as_deref().unwrap_or(&[])),
            vecf(&p.bn.gamma),
            vecf(&p.bn.beta),
            vecf(&p.bn.running_mean),
            vecf(&p.bn.running_var),
            flat(&p.fh.weights),
            vecf(p.fh.bias.as_deref().unwrap_or(&[])),
            flat(&p.fw.weights),
            vecf(p.fw.bias.as_deref().unwrap_or(&[])),
        ]),
    }
}

/// Writes the binary weight file and its JSON manifest (at `<path>.json`).
pub fn save_weights<R: Real>(model: &Model<R>, path: &Path) -> Result<(), GraphError> {
    let blocks: Vec<Vec<Vec<f32>>> = model
        .node_params()
        .iter()
        .filter_map(node_arrays)
        .collect();

    let mut out = Vec::new();
    out.write_all(&WEIGHT_MAGIC).unwrap();
    out.write_all(&WEIGHT_VERSION.to_le_bytes()).unwrap();
    out.write_all(&(blocks.len() as u32).to_le_bytes()).unwrap();
    for block in &blocks {
        out.write_all(&(block.len() as u32).to_le_bytes()).unwrap();
        for array in block {
            out.write_all(&(array.len() as u32).to_le_bytes()).unwrap();
            for v in array {
                out.write_all(&v.to_le_bytes()).unwrap();
            }
        }
    }
    std::fs::write(path, &out).map_err(|e| GraphError::WeightFile(e.to_string()))?;

    let manifest = WeightManifest {
        tool_version: crate::TOOL_VERSION.to_owned(),
        seed: model.seed(),
        total_params: model.param_count(),
        layers: model.describe(),
    };
    let manifest_path = manifest_path(path);
    std::fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )
    .map_err(|e| GraphError::WeightFile(e.to_string()))?;
    Ok(())
}

pub fn manifest_path(weight_path: &Path) -> std::path::PathBuf {
    let mut os = weight_path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32, GraphError> {
        let mut buf = [0u8; 4];
        (&self.data[self.pos.min(self.data.len())..])
            .read_exact(&mut buf)
            .map_err(|_| GraphError::WeightFile("truncated weight file".into()))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(buf))
    }

    fn f32_array(&mut self, len: usize) -> Result<Vec<f32>, GraphError> {
        let bytes = len * 4;
        if self.pos + bytes > self.data.len() {
            return Err(GraphError::WeightFile("truncated weight file".into()));
        }
        let out = self.data[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += bytes;
        Ok(out)
    }
}

/// Loads a weight file into a fresh model for the given configuration. The
/// plan derived from the configuration must match the file's block layout.
pub fn load_weights<R: Real>(cfg: &NetConfig, path: &Path) -> Result<Model<R>, GraphError> {
    let data = std::fs::read(path).map_err(|e| GraphError::WeightFile(e.to_string()))?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if data.len() < 4 || data[..4] != WEIGHT_MAGIC {
        return Err(GraphError::WeightFile("bad magic, not a weight file".into()));
    }
    cur.pos = 4;
    let version = cur.u32()?;
    if version != WEIGHT_VERSION {
        return Err(GraphError::WeightFile(format!(
            "unsupported version {version}, expected {WEIGHT_VERSION}"
        )));
    }
    let block_count = cur.u32()? as usize;

    // Build a template model (zero seed) to obtain the parameter layout,
    // then overwrite every array from the file.
    let plan = plan_model(cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut params = {
        let template: Model<R> = Model::from_parts(
            plan.clone(),
            super::model::build_model::<R>(cfg, 0)?.node_params().to_vec(),
            0,
        );
        let _ = &mut rng;
        template.node_params().to_vec()
    };

    let expected_blocks = params
        .iter()
        .filter(|p| !matches!(p, NodeParams::None))
        .count();
    if block_count != expected_blocks {
        return Err(GraphError::WeightFile(format!(
            "file has {block_count} blocks, configuration expects {expected_blocks}"
        )));
    }

    for p in params.iter_mut() {
        if matches!(p, NodeParams::None) {
            continue;
        }
        let array_count = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(array_count);
        for _ in 0..array_count {
            let len = cur.u32()? as usize;
            arrays.push(cur.f32_array(len)?);
        }
        fill_node(p, &arrays)?;
    }
    if cur.pos != data.len() {
        return Err(GraphError::WeightFile(format!(
            "{} trailing bytes after last block",
            data.len() - cur.pos
        )));
    }
    Ok(Model::from_parts(plan, params, 0))
}

fn fill_tensor<R: Real>(t: &mut Tensor<R>, src: &[f32], what: &str) -> Result<(), GraphError> {
    if t.len() != src.len() {
        return Err(GraphError::WeightFile(format!(
            "{what}: expected {} values, file has {}",
            t.len(),
            src.len()
        )));
    }
    *t = Tensor::from_parts(
        t.shape(),
        src.iter().map(|&v| R::from_f64(v as f64)).collect(),
    );
    Ok(())
}

fn fill_vec<R: Real>(v: &mut [R], src: &[f32], what: &str) -> Result<(), GraphError> {
    if v.len() != src.len() {
        return Err(GraphError::WeightFile(format!(
            "{what}: expected {} values, file has {}",
            v.len(),
            src.len()
        )));
    }
    for (dst, s) in v.iter_mut().zip(src) {
        *dst = R::from_f64(*s as f64);
    }
    Ok(())
}

fn fill_node<R: Real>(p: &mut NodeParams<R>, arrays: &[Vec<f32>]) -> Result<(), GraphError> {
    let need = |n: usize| -> Result<(), GraphError> {
        if arrays.len() != n {
            Err(GraphError::WeightFile(format!(
                "block has {} arrays, expected {n}",
                arrays.len()
            )))
        } else {
            Ok(())
        }
    };
    match p {
        NodeParams::None => {}
        NodeParams::ConvBn { conv, bn } => {
            need(5)?;
            fill_tensor(&mut conv.weights, &arrays[0], "conv weights")?;
            fill_vec(&mut bn.gamma, &arrays[1], "bn gamma")?;
            fill_vec(&mut bn.beta, &arrays[2], "bn beta")?;
            fill_vec(&mut bn.running_mean, &arrays[3], "bn mean")?;
            fill_vec(&mut bn.running_var, &arrays[4], "bn var")?;
        }
        NodeParams::Head { conv } => {
            need(2)?;
            fill_tensor(&mut conv.weights, &arrays[0], "head weights")?;
            if let Some(b) = conv.bias.as_mut() {
                fill_vec(b, &arrays[1], "head bias")?;
            }
        }
        NodeParams::Ca(ca) => {
            need(10)?;
            fill_tensor(&mut ca.f1.weights, &arrays[0], "ca compress weights")?;
            if let Some(b) = ca.f1.bias.as_mut() {
                fill_vec(b, &arrays[1], "ca compress bias")?;
            }
            fill_vec(&mut ca.bn.gamma, &arrays[2], "ca gamma")?;
            fill_vec(&mut ca.bn.beta, &arrays[3], "ca beta")?;
            fill_vec(&mut ca.bn.running_mean, &arrays[4], "ca mean")?;
            fill_vec(&mut ca.bn.running_var, &arrays[5], "ca var")?;
            fill_tensor(&mut ca.fh.weights, &arrays[6], "ca row-gate weights")?;
            if let Some(b) = ca.fh.bias.as_mut() {
                fill_vec(b, &arrays[7], "ca row-gate bias")?;
            }
            fill_tensor(&mut ca.fw.weights, &arrays[8], "ca column-gate weights")?;
            if let Some(b) = ca.fw.bias.as_mut() {
                fill_vec(b, &arrays[9], "ca column-gate bias")?;
            }
        }
    }
    Ok(())
}
