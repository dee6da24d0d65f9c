//! Training orchestration: configuration schema, data preparation, the
//! optimizer, the four training phases, pseudo-label generation, and the
//! ablation grid runner.

mod ablation;
mod optim;
mod pseudo;
mod train;

pub use ablation::{default_grid, run_ablation, AblationEntry, AblationOutcome};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use pseudo::{
    attach_pseudo_labels, load_pseudo_labels, pseudo_label_for_scene, write_pseudo_labels,
    PseudoMode, PseudoSource,
};
pub use train::{
    eval_coarse_only, eval_model, noisy_pretrain, train_coarse, train_e2e, transfer_finetune,
    EvalSummary, TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, RgbImage};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::ModelConfig;
use crate::scenegen::{DegradeSpec, LoadedScene, SceneParams};
use crate::substrate::{sample_box, SampleBox, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub np_epochs: usize,
    pub coarse_epochs: usize,
    pub e2e_epochs: usize,
    pub transfer_epochs: usize,
    pub lr: f64,
    /// Random patches sampled per training step.
    pub patches_per_step: usize,
    pub seed: u64,
    /// Keep the coarse branch fixed during the end-to-end phase.
    pub freeze_coarse_e2e: bool,
    /// Learning-rate multiplier for `coarse.*` parameters during the joint
    /// phases (end-to-end and transfer); 1.0 trains both branches equally.
    pub coarse_lr_scale: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            np_epochs: 24,
            coarse_epochs: 8,
            e2e_epochs: 16,
            transfer_epochs: 2,
            lr: 1e-3,
            patches_per_step: 2,
            seed: 0,
            freeze_coarse_e2e: false,
            coarse_lr_scale: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig { rows: 4, cols: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub edge_tau: f32,
    pub boundary_theta: f64,
    pub see_window: usize,
    /// Fuse the base layout with the two half-patch-shifted layouts.
    pub consistency: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            edge_tau: crate::metrics::DEFAULT_EDGE_TAU,
            boundary_theta: crate::metrics::DEFAULT_BOUNDARY_THETA,
            see_window: crate::metrics::DEFAULT_SEE_WINDOW,
            consistency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetPaths {
    pub root: String,
    pub train_split: String,
    pub val_split: String,
    pub test_split: String,
}

impl Default for DatasetPaths {
    fn default() -> Self {
        DatasetPaths {
            root: "data/synthetic".into(),
            train_split: "train".into(),
            val_split: "val".into(),
            test_split: "test".into(),
        }
    }
}

/// Checkpoint initialization for the training commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InitConfig {
    /// Checkpoint whose `coarse.*` parameters seed the coarse branch.
    pub coarse_ckpt: Option<String>,
    /// Checkpoint for the refiner branch (noisy-pretraining output).
    pub refiner_ckpt: Option<String>,
    /// Name-prefix filter for the refiner checkpoint, e.g.
    /// `refiner.encoder.` to load the encoder only.
    pub refiner_filter: Option<String>,
}

/// Transfer-phase wiring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Student initialization (model trained on the target domain).
    pub student_ckpt: Option<String>,
    /// Frozen teacher producing the pseudo labels.
    pub teacher_ckpt: Option<String>,
    pub pseudo_mode: pseudo::PseudoMode,
    /// Offline pseudo-label directory; written when absent.
    pub pseudo_dir: Option<String>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            student_ckpt: None,
            teacher_ckpt: None,
            pseudo_mode: pseudo::PseudoMode::Offline,
            pseudo_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub checkpoint: Option<String>,
    pub split: String,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            checkpoint: None,
            split: "test".into(),
        }
    }
}

fn default_gen_splits() -> Vec<crate::scenegen::SplitSpec> {
    vec![
        crate::scenegen::SplitSpec {
            name: "train".into(),
            count: 64,
            seed_start: 0,
        },
        crate::scenegen::SplitSpec {
            name: "val".into(),
            count: 8,
            seed_start: 10_000,
        },
        crate::scenegen::SplitSpec {
            name: "test".into(),
            count: 12,
            seed_start: 20_000,
        },
    ]
}

/// The experiment configuration serialized as JSON; every run writes the
/// resolved copy next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetPaths,
    pub scene: SceneParams,
    pub degrade: Option<DegradeSpec>,
    pub gen_splits: Vec<crate::scenegen::SplitSpec>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub tiling: TilingConfig,
    pub eval: EvalConfig,
    pub init: InitConfig,
    pub transfer: TransferConfig,
    pub infer: InferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetPaths::default(),
            scene: SceneParams::default(),
            degrade: None,
            gen_splits: default_gen_splits(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            tiling: TilingConfig::default(),
            eval: EvalConfig::default(),
            init: InitConfig::default(),
            transfer: TransferConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.schedule.patches_per_step == 0 {
            return Err(Error::config("patches_per_step must be >= 1"));
        }
        if self.tiling.rows == 0 || self.tiling.cols == 0 {
            return Err(Error::config("tiling grid must be >= 1x1"));
        }
        Ok(())
    }
}

/// Apply one dotted-key override (`a.b.c=value`) onto a JSON config tree.
/// The value is parsed as JSON when possible, else taken as a string.
pub fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.is_empty() {
        return Err(Error::config("empty override key"));
    }
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {part:?} is not an object")))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    let leaf = parts[parts.len() - 1];
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    node.as_object_mut()
        .ok_or_else(|| Error::config(format!("override {key:?}: parent is not an object")))?
        .insert(leaf.to_string(), value);
    Ok(())
}

/// A scene prepared for training: cached downsampled image/labels and
/// optional dense pseudo labels.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub seed: u64,
    pub rgb: RgbImage,
    /// `[1, 3, patch_h, patch_w]` bilinear downsample of the full image.
    pub rgb_ds: Tensor<f32>,
    /// Stored labels (clean, degraded, or sparse).
    pub depth: DepthMap,
    /// Mask-aware box downsample of the labels at the coarse resolution.
    pub depth_ds: DepthMap,
    /// Clean labels for evaluation, when the stored ones are degraded.
    pub clean: Option<DepthMap>,
    /// Dense teacher labels for the transfer phase.
    pub pseudo: Option<DepthMap>,
}

impl TrainScene {
    pub fn eval_depth(&self) -> &DepthMap {
        self.clean.as_ref().unwrap_or(&self.depth)
    }
}

/// Mask-aware box-average downsample by integer factors.
pub fn downsample_depth(depth: &DepthMap, out_h: usize, out_w: usize) -> Result<DepthMap> {
    let (h, w) = (depth.height(), depth.width());
    if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 {
        return Err(Error::config(format!(
            "downsample {h}x{w} -> {out_h}x{out_w} must use integer factors"
        )));
    }
    let (fy, fx) = (h / out_h, w / out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    let mut valid = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for yy in oy * fy..(oy + 1) * fy {
                for xx in ox * fx..(ox + 1) * fx {
                    if depth.is_valid(yy, xx) {
                        sum += depth.at(yy, xx) as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                values.push((sum / n as f64) as f32);
                valid.push(true);
            } else {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    DepthMap::new(out_h, out_w, values, valid)
}

/// Prepare loaded scenes for training at the given patch resolution.
pub fn prepare_scenes(
    loaded: &[LoadedScene],
    patch_h: usize,
    patch_w: usize,
) -> Result<Vec<TrainScene>> {
    loaded
        .iter()
        .map(|s| {
            let rgb_ds = sample_box(&s.rgb.to_tensor(), &SampleBox::full(), patch_h, patch_w)?;
            let depth_ds = downsample_depth(&s.depth, patch_h, patch_w)?;
            Ok(TrainScene {
                seed: s.seed,
                rgb: s.rgb.clone(),
                rgb_ds,
                depth: s.depth.clone(),
                depth_ds,
                clean: s.clean_depth.clone(),
                pseudo: None,
            })
        })
        .collect()
}

/// Mean valid depth across a scene set (the noisy-pretraining base depth).
pub fn dataset_mean_depth(scenes: &[TrainScene]) -> Result<f32> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for s in scenes {
        for (&v, &m) in s.depth.values().iter().zip(s.depth.valid()) {
            if m {
                sum += v as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("dataset has no valid depth pixels".into()));
    }
    Ok((sum / n as f64) as f32)
}
