//! TOML run configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use vins::dataio::{BoundingBox, PatchSpec, SpriteConfig};
use vins::evaluation::WindowDetectorConfig;
use vins::models::{DiscConfig, GeneratorConfig, Method, ModelConfig};
use vins::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SpriteConfig,
    pub data: DataConfig,
    /// Defaults to [`desk_model`] when absent.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub insert: InsertConfig,
    pub eval: EvalConfig,
    pub detector: WindowDetectorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// The last `holdout` videos are kept out of training and used for
    /// evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { holdout: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsertConfig {
    pub source: String,
    pub target: String,
    pub object_id: i64,
    /// Region at the first frame; drawn from the target ROI when absent.
    pub placement: Option<BoundingBox>,
    pub start: usize,
    pub end: usize,
    pub static_placement: bool,
    pub feather_px: usize,
    pub allow_untrained: bool,
}

impl Default for InsertConfig {
    fn default() -> Self {
        Self {
            source: "video_000".into(),
            target: "video_001".into(),
            object_id: 1,
            placement: None,
            start: 0,
            end: 8,
            static_placement: false,
            feather_px: vins::inference::DEFAULT_FEATHER_PX,
            allow_untrained: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_insertions: usize,
    /// Frames per insertion.
    pub frames: usize,
    pub seed: u64,
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_insertions: 200,
            frames: 1,
            seed: 0,
            iou_threshold: 0.5,
        }
    }
}

/// Small networks on 64x32 patches that train on a CPU in minutes.
pub fn desk_model() -> ModelConfig {
    ModelConfig::new(
        GeneratorConfig {
            base_filters: 8,
            n_levels: 4,
            patch: PatchSpec {
                height: 64,
                width: 32,
            },
            history_len: 2,
            history_weights: vec![0.5, 0.5],
        },
        DiscConfig {
            base_filters: 8,
            n_layers: 3,
            embed_hidden: 32,
            video_window: 4,
        },
        Method::Ours,
    )
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(desk_model)
    }

    /// Replaces every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self.detector.seed = seed;
    }

    /// Training settings with the pair patch taken from the model.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.pairing.patch = self.model().patch();
        t
    }
}
