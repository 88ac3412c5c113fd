//! Binary checkpoints: a length-prefixed JSON header (format version, model
//! config, ordered tensor manifest) followed by raw little-endian f32 data in
//! manifest order. Save -> load -> save is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::encoder::{EncoderWeights, ModelConfig};
use crate::tensor::Tensor;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: ModelConfig,
    manifest: Vec<TensorSpec>,
    /// Optimizer moment tensors (name.m / name.v pairs) plus step count,
    /// appended after the weights when present.
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    step: usize,
    hyper: super::OptimizerHyper,
    manifest: Vec<TensorSpec>,
}

/// Everything a checkpoint file holds.
#[derive(Debug)]
pub struct CheckpointContents {
    pub weights: EncoderWeights<f32>,
    pub optimizer: Option<super::AdamWState<f32>>,
    pub manifest_names: Vec<String>,
}

fn io_err(e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(e.to_string())
}

pub fn save_checkpoint(
    weights: &EncoderWeights<f32>,
    optimizer: Option<&super::AdamWState<f32>>,
    path: &Path,
) -> Result<(), TrainError> {
    let named = weights.named_tensors();
    let manifest: Vec<TensorSpec> = named
        .iter()
        .map(|(n, t)| TensorSpec {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    // Optimizer moments follow the weights, two tensors per parameter.
    let moment_tensors: Vec<(String, Tensor<f32>)> = optimizer
        .map(|state| {
            state
                .moments()
                .into_iter()
                .flat_map(|(name, (m, v))| {
                    [
                        (format!("{name}.m"), m.clone()),
                        (format!("{name}.v"), v.clone()),
                    ]
                })
                .collect()
        })
        .unwrap_or_default();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: weights.config.clone(),
        manifest,
        optimizer: optimizer.map(|state| OptimizerHeader {
            step: state.step_count(),
            hyper: state.hyper,
            manifest: moment_tensors
                .iter()
                .map(|(n, t)| TensorSpec {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        }),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;

    let mut payload: Vec<u8> = Vec::new();
    payload.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    payload.extend_from_slice(&header_json);
    for (_, tensor) in &named {
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (_, tensor) in &moment_tensors {
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    // Atomic write: temp file in the same directory, then rename.
    let tmp = path.with_extension("tmp_ckpt");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&payload).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointContents, TrainError> {
    let bytes = fs::read(path).map_err(io_err)?;
    if bytes.len() < 8 {
        return Err(TrainError::Checkpoint("file too short".to_string()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(TrainError::Checkpoint("truncated header".to_string()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| TrainError::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }

    // Shapes the config dictates, in manifest order.
    let mut weights = EncoderWeights::<f32>::init(&header.config, 0)
        .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = weights
        .named_tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();

    // Every expected tensor must appear, with the right shape.
    for (name, shape) in &expected {
        match header.manifest.iter().find(|s| &s.name == name) {
            None => return Err(TrainError::MissingTensor(name.clone())),
            Some(spec) if &spec.shape != shape => {
                return Err(TrainError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: spec.shape.clone(),
                })
            }
            Some(_) => {}
        }
    }
    for spec in &header.manifest {
        if !expected.iter().any(|(n, _)| n == &spec.name) {
            return Err(TrainError::Checkpoint(format!(
                "unexpected tensor {} for this config",
                spec.name
            )));
        }
    }

    // Read tensors in file manifest order.
    let mut offset = 8 + header_len;
    let mut loaded: Vec<(String, Tensor<f32>)> = Vec::with_capacity(header.manifest.len());
    for spec in &header.manifest {
        let count: usize = spec.shape.iter().product();
        let bytes_needed = count * 4;
        if bytes.len() < offset + bytes_needed {
            return Err(TrainError::Checkpoint(format!(
                "truncated data for {}",
                spec.name
            )));
        }
        let data: Vec<f32> = bytes[offset..offset + bytes_needed]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push((spec.name.clone(), Tensor::from_vec(spec.shape.clone(), data)));
        offset += bytes_needed;
    }

    for (name, dst) in weights.named_tensors_mut() {
        let (_, src) = loaded
            .iter()
            .find(|(n, _)| n == &name)
            .expect("presence validated above");
        *dst = src.clone();
    }

    let optimizer = match &header.optimizer {
        None => None,
        Some(opt) => {
            let mut moments = Vec::new();
            for spec in &opt.manifest {
                let count: usize = spec.shape.iter().product();
                let bytes_needed = count * 4;
                if bytes.len() < offset + bytes_needed {
                    return Err(TrainError::Checkpoint(format!(
                        "truncated optimizer data for {}",
                        spec.name
                    )));
                }
                let data: Vec<f32> = bytes[offset..offset + bytes_needed]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                moments.push((
                    spec.name.clone(),
                    Tensor::from_vec(spec.shape.clone(), data),
                ));
                offset += bytes_needed;
            }
            Some(super::AdamWState::from_parts(opt.hyper, opt.step, moments)?)
        }
    };

    Ok(CheckpointContents {
        manifest_names: header.manifest.iter().map(|s| s.name.clone()).collect(),
        optimizer,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("helm_lm_ckpt_tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = ModelConfig::new(13, 8, 2, 2);
        let weights = EncoderWeights::<f32>::init(&cfg, 3).unwrap();
        let p1 = tmp("a.ckpt");
        let p2 = tmp("b.ckpt");
        save_checkpoint(&weights, None, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.weights, weights);
        save_checkpoint(&loaded.weights, None, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_tensor_is_named_in_error() {
        let cfg = ModelConfig::new(13, 8, 2, 2);
        let weights = EncoderWeights::<f32>::init(&cfg, 3).unwrap();
        let path = tmp("missing.ckpt");
        save_checkpoint(&weights, None, &path).unwrap();
        // Corrupt: rewrite the header dropping one manifest entry.
        let bytes = fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
        let manifest = header["manifest"].as_array_mut().unwrap();
        let removed = manifest
            .iter()
            .position(|s| s["name"] == "mlm_head.decoder.bias")
            .unwrap();
        manifest.remove(removed);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(&(new_header.len() as u64).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[8 + header_len..]);
        fs::write(&path, out).unwrap();
        match load_checkpoint(&path) {
            Err(TrainError::MissingTensor(name)) => {
                assert_eq!(name, "mlm_head.decoder.bias");
            }
            other => panic!("expected MissingTensor, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig::new(13, 8, 2, 2);
        let weights = EncoderWeights::<f32>::init(&cfg, 3).unwrap();
        let path = tmp("shape.ckpt");
        save_checkpoint(&weights, None, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
        header["manifest"][0]["shape"] = serde_json::json!([7, 8]);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(&(new_header.len() as u64).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[8 + header_len..]);
        fs::write(&path, out).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TrainError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn optimizer_state_round_trips() {
        let cfg = ModelConfig::new(13, 8, 2, 2);
        let mut weights = EncoderWeights::<f32>::init(&cfg, 3).unwrap();
        let mut state = super::super::AdamWState::<f32>::new(Default::default());
        // Produce non-trivial moments with one real update.
        state.begin_step();
        let grad = crate::tensor::Tensor::full(vec![cfg.vocab_size, cfg.hidden], 0.01f32);
        let mut emb = weights.token_embedding.clone();
        state.update("token_embedding", &mut emb, &grad, 1e-3).unwrap();
        weights.token_embedding = emb;

        let p1 = tmp("opt_a.ckpt");
        let p2 = tmp("opt_b.ckpt");
        save_checkpoint(&weights, Some(&state), &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        let restored = loaded.optimizer.expect("optimizer present");
        assert_eq!(restored.step_count(), 1);
        assert_eq!(
            restored.moments().len(),
            state.moments().len()
        );
        save_checkpoint(&loaded.weights, Some(&restored), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn manifest_mirrors_ablation_flags() {
        let cfg = ModelConfig::new(13, 8, 2, 2).vanilla();
        let weights = EncoderWeights::<f32>::init(&cfg, 3).unwrap();
        let path = tmp("vanilla.ckpt");
        save_checkpoint(&weights, None, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded
            .manifest_names
            .iter()
            .all(|n| !n.contains("rel") && !n.contains("conv")));
    }
}
