//! Compact convolutional delineation network with explicit forward and
//! gradient computation, trainable on the CPU at desk scale.

mod gradcheck;
mod net;
mod train;

pub use gradcheck::gradient_check;
pub use train::{train, OptimizerKind, TrainConfig, TrainContext, TrainSample};

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureTensor;
use crate::error::{Error, Result};
use crate::grid_codec::PredictionGrid;

/// Head output channels: 3 classes x (confidence, start, end).
pub(crate) const HEAD_FIELDS: usize = 9;

/// One depthwise-separable block: depthwise 3x3 (with a stride along the
/// time axis) followed by a pointwise 1x1 to `channels` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    pub time_stride: usize,
}

/// Network shape. The product of the block time strides must equal
/// `n_frames / n_intervals` so the head lands exactly on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_leads: usize,
    pub n_mel: usize,
    pub n_frames: usize,
    pub n_intervals: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_leads: 12,
            n_mel: 48,
            n_frames: 200,
            n_intervals: 50,
            stem_channels: 16,
            blocks: vec![
                BlockSpec { channels: 16, time_stride: 1 },
                BlockSpec { channels: 32, time_stride: 2 },
                BlockSpec { channels: 64, time_stride: 1 },
                BlockSpec { channels: 64, time_stride: 2 },
            ],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_leads", self.n_leads),
            ("n_mel", self.n_mel),
            ("n_frames", self.n_frames),
            ("n_intervals", self.n_intervals),
            ("stem_channels", self.stem_channels),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.blocks.is_empty() {
            return Err(Error::config("at least one block required"));
        }
        if self.n_frames % self.n_intervals != 0 {
            return Err(Error::config(format!(
                "n_frames {} not divisible by n_intervals {}",
                self.n_frames, self.n_intervals
            )));
        }
        let mut width = self.n_frames;
        let mut stride_product = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.time_stride == 0 {
                return Err(Error::config(format!("block {i} has zero channels or stride")));
            }
            if width % b.time_stride != 0 {
                return Err(Error::config(format!(
                    "block {i} stride {} does not divide the running frame count {width}",
                    b.time_stride
                )));
            }
            width /= b.time_stride;
            stride_product *= b.time_stride;
        }
        if stride_product != self.n_frames / self.n_intervals {
            return Err(Error::config(format!(
                "time stride product {stride_product} must equal n_frames/n_intervals = {}",
                self.n_frames / self.n_intervals
            )));
        }
        Ok(())
    }
}

pub(crate) struct BlockLayout {
    pub in_channels: usize,
    pub out_channels: usize,
    pub time_stride: usize,
    pub dw_w: Range<usize>,
    pub dw_gamma: Range<usize>,
    pub dw_beta: Range<usize>,
    pub pw_w: Range<usize>,
    pub pw_gamma: Range<usize>,
    pub pw_beta: Range<usize>,
}

/// Offsets of every named parameter tensor inside the flat vector.
pub(crate) struct Layout {
    pub stem_w: Range<usize>,
    pub stem_gamma: Range<usize>,
    pub stem_beta: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Layout {
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let stem_w = take(config.stem_channels * config.n_leads * 9);
        let stem_gamma = take(config.stem_channels);
        let stem_beta = take(config.stem_channels);
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut in_channels = config.stem_channels;
        for b in &config.blocks {
            let dw_w = take(in_channels * 9);
            let dw_gamma = take(in_channels);
            let dw_beta = take(in_channels);
            let pw_w = take(b.channels * in_channels);
            let pw_gamma = take(b.channels);
            let pw_beta = take(b.channels);
            blocks.push(BlockLayout {
                in_channels,
                out_channels: b.channels,
                time_stride: b.time_stride,
                dw_w,
                dw_gamma,
                dw_beta,
                pw_w,
                pw_gamma,
                pw_beta,
            });
            in_channels = b.channels;
        }
        let head_w = take(HEAD_FIELDS * in_channels);
        let head_b = take(HEAD_FIELDS);
        Layout {
            stem_w,
            stem_gamma,
            stem_beta,
            blocks,
            head_w,
            head_b,
            total: cursor,
        }
    }
}

/// Flat parameter vector with named views per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    /// Named parameter views: (name, offset range).
    pub fn views(&self) -> Vec<(String, Range<usize>)> {
        let layout = self.layout();
        let mut out = vec![
            ("stem.weight".to_string(), layout.stem_w.clone()),
            ("stem.gamma".to_string(), layout.stem_gamma.clone()),
            ("stem.beta".to_string(), layout.stem_beta.clone()),
        ];
        for (i, b) in layout.blocks.iter().enumerate() {
            out.push((format!("block{i}.dw.weight"), b.dw_w.clone()));
            out.push((format!("block{i}.dw.gamma"), b.dw_gamma.clone()));
            out.push((format!("block{i}.dw.beta"), b.dw_beta.clone()));
            out.push((format!("block{i}.pw.weight"), b.pw_w.clone()));
            out.push((format!("block{i}.pw.gamma"), b.pw_gamma.clone()));
            out.push((format!("block{i}.pw.beta"), b.pw_beta.clone()));
        }
        out.push(("head.weight".to_string(), layout.head_w.clone()));
        out.push(("head.bias".to_string(), layout.head_b.clone()));
        out
    }
}

/// Builds a model with fan-in-scaled uniform initialization, deterministic
/// in the config's seed.
pub fn build_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut data = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init_uniform = |range: Range<usize>, fan_in: usize, data: &mut [f64]| {
        let bound = (1.0 / fan_in as f64).sqrt();
        for v in &mut data[range] {
            *v = rng.random_range(-bound..bound);
        }
    };

    init_uniform(layout.stem_w.clone(), config.n_leads * 9, &mut data);
    data[layout.stem_gamma.clone()].fill(1.0);
    for b in &layout.blocks {
        init_uniform(b.dw_w.clone(), 9, &mut data);
        data[b.dw_gamma.clone()].fill(1.0);
        init_uniform(b.pw_w.clone(), b.in_channels, &mut data);
        data[b.pw_gamma.clone()].fill(1.0);
    }
    let c_last = layout.blocks.last().map(|b| b.out_channels).unwrap();
    init_uniform(layout.head_w.clone(), c_last, &mut data);

    Ok(ModelParams {
        config: config.clone(),
        data,
    })
}

/// Runs the network on one feature tensor. Pure and deterministic; every
/// output lies strictly inside (0, 1).
pub fn forward(params: &ModelParams, features: &FeatureTensor) -> Result<PredictionGrid> {
    let config = &params.config;
    if features.n_leads != config.n_leads
        || features.n_mel != config.n_mel
        || features.n_frames != config.n_frames
    {
        return Err(Error::config(format!(
            "feature tensor {}x{}x{} does not match model input {}x{}x{}",
            features.n_leads,
            features.n_mel,
            features.n_frames,
            config.n_leads,
            config.n_mel,
            config.n_frames
        )));
    }
    let input = net::Tensor {
        c: features.n_leads,
        h: features.n_mel,
        w: features.n_frames,
        data: features.data.clone(),
    };
    let (grid, _) = net::forward_full(params, &input);
    Ok(grid)
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    epoch: usize,
    param_count: usize,
}

/// Writes `manifest.json` plus `params.bin` (little-endian float32) into
/// `dir`.
pub fn save_checkpoint(params: &ModelParams, epoch: usize, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        config: params.config.clone(),
        epoch,
        param_count: params.data.len(),
    };
    let mut blob = Vec::with_capacity(params.data.len() * 4);
    for &v in &params.data {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let bin_path = dir.join("params.bin");
    std::fs::write(&bin_path, &blob).map_err(|e| Error::io(&bin_path, e))?;
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

/// Loads a checkpoint directory, rejecting manifests whose config does not
/// match the parameter blob.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ModelParams, usize)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::malformed(&manifest_path, e.to_string()))?;
    manifest.config.validate()?;
    let layout = Layout::new(&manifest.config);
    if layout.total != manifest.param_count {
        return Err(Error::malformed(
            &manifest_path,
            format!(
                "manifest declares {} parameters but the config implies {}",
                manifest.param_count, layout.total
            ),
        ));
    }
    let bin_path = dir.join("params.bin");
    let blob = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if blob.len() != layout.total * 4 {
        return Err(Error::malformed(
            &bin_path,
            format!(
                "blob holds {} bytes, config implies {}",
                blob.len(),
                layout.total * 4
            ),
        ));
    }
    let data: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::malformed(&bin_path, "non-finite parameter value"));
    }
    Ok((
        ModelParams {
            config: manifest.config,
            data,
        },
        manifest.epoch,
    ))
}

/// Short, stable identifier of a parameter vector (hash of the float32
/// serialization).
pub fn checkpoint_id(params: &ModelParams) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for &v in &params.data {
        hasher.update((v as f32).to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_leads: 1,
        n_mel: 8,
        n_frames: 8,
        n_intervals: 2,
        stem_channels: 4,
        blocks: vec![
            BlockSpec { channels: 4, time_stride: 2 },
            BlockSpec { channels: 8, time_stride: 2 },
        ],
        seed: 7,
    }
}
