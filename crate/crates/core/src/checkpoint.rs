//! Checkpoint files: one line of compact JSON header, then a flat block of
//! little-endian f64 values.
//!
//! The block holds every parameter tensor in declared layer order (encoder,
//! visual map, semantic map; `W0, b0, W1, b1, ...` within each network, weights
//! row-major with shape `(in, out)`). When optimizer state is present the
//! first-moment buffers follow, then the second-moment buffers, in the order
//! of the trainable tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{MlpParams, MlpSpec, ModelParams};
use crate::optim::AdamState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub tensor_lens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub encoder: Option<MlpSpec>,
    pub visual_map: MlpSpec,
    pub semantic_map: MlpSpec,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub param_count: usize,
    pub optimizer: Option<OptimizerHeader>,
}

pub const FORMAT: &str = "gzsl-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        optimizer: Option<AdamState>,
        seed: u64,
        epoch: usize,
        config_hash: String,
    ) -> Self {
        let header = CheckpointHeader {
            format: FORMAT.to_string(),
            encoder: params.encoder.as_ref().map(|e| e.spec.clone()),
            visual_map: params.visual_map.spec.clone(),
            semantic_map: params.semantic_map.spec.clone(),
            seed,
            epoch,
            config_hash,
            param_count: params.num_params(),
            optimizer: optimizer.as_ref().map(|s| OptimizerHeader {
                step_count: s.step_count,
                lr: s.lr,
                beta1: s.beta1,
                beta2: s.beta2,
                epsilon: s.epsilon,
                tensor_lens: s.m.iter().map(Vec::len).collect(),
            }),
        };
        Self {
            header,
            params,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        let mut push = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, t) in self.params.named_tensors() {
            push(t);
        }
        if let Some(s) = &self.optimizer {
            s.m.iter().for_each(|t| push(t));
            s.v.iter().for_each(|t| push(t));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| bad(format!("invalid header: {e}")))?;
        if header.format != FORMAT {
            return Err(bad(format!("unsupported format '{}'", header.format)));
        }
        let body = &bytes[nl + 1..];
        if body.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let opt_len: usize = header
            .optimizer
            .as_ref()
            .map_or(0, |o| 2 * o.tensor_lens.iter().sum::<usize>());
        if values.len() != header.param_count + opt_len {
            return Err(bad(format!(
                "expected {} values, found {}",
                header.param_count + opt_len,
                values.len()
            )));
        }

        let mut params = ModelParams {
            encoder: header.encoder.as_ref().map(MlpParams::zeros),
            visual_map: MlpParams::zeros(&header.visual_map),
            semantic_map: MlpParams::zeros(&header.semantic_map),
        };
        if params.num_params() != header.param_count {
            return Err(bad("param_count disagrees with the network specs".into()));
        }
        let mut cursor = 0;
        for (_, t) in params.named_tensors_mut() {
            t.copy_from_slice(&values[cursor..cursor + t.len()]);
            cursor += t.len();
        }
        params.validate()?;

        let optimizer = header.optimizer.as_ref().map(|o| {
            let mut take = |n: usize| {
                let v = values[cursor..cursor + n].to_vec();
                cursor += n;
                v
            };
            let m = o.tensor_lens.iter().map(|&n| take(n)).collect();
            let v = o.tensor_lens.iter().map(|&n| take(n)).collect();
            AdamState {
                step_count: o.step_count,
                m,
                v,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                lr: o.lr,
            }
        });
        Ok(Self {
            header,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
