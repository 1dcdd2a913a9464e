//! Generators, discriminators and their parameters.
//!
//! All parameters of one experiment live in a single [`ParamSet`] keyed by
//! `"<net>.<layer>.<kind>"`. The network prefixes are:
//!
//! | prefix | network |
//! |--------|---------|
//! | `g`    | insertion generator (image or video) |
//! | `f`    | reverse generator of the cycle baseline |
//! | `di`   | image discriminator (`D` / `D_B` for baselines) |
//! | `da`   | second image discriminator of the cycle baseline |
//! | `de`   | embedding discriminator |
//! | `dv`   | video discriminator |

pub mod api;
pub mod checkpoint;
pub mod nets;
mod params;

pub use api::{
    combine_history_features, forward_generator_image, forward_generator_video,
    score_embedding_disc, score_image_disc, score_video_disc, tile_embedding, GeneratorOutput,
};
pub use params::{Bound, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::PatchSpec;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_filters: usize,
    pub n_levels: usize,
    pub patch: PatchSpec,
    pub history_len: usize,
    pub history_weights: Vec<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            n_levels: 4,
            patch: PatchSpec::default(),
            history_len: 2,
            history_weights: vec![0.5, 0.5],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        if self.base_filters < 8 {
            return Err(invalid(format!(
                "base_filters must be at least 8, got {}",
                self.base_filters
            )));
        }
        if self.n_levels == 0 {
            return Err(invalid("n_levels must be positive"));
        }
        let div = 1usize << self.n_levels;
        if self.patch.height % div != 0 || self.patch.width % div != 0 {
            return Err(invalid(format!(
                "patch {}x{} is not divisible by 2^{} for a {}-level generator",
                self.patch.height, self.patch.width, self.n_levels, self.n_levels
            )));
        }
        if self.history_weights.len() != self.history_len {
            return Err(invalid(format!(
                "{} history weights for history length {}",
                self.history_weights.len(),
                self.history_len
            )));
        }
        if self
            .history_weights
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(invalid("history weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// Channels of encoder level `k`.
    pub fn channels(&self, k: usize) -> usize {
        self.base_filters << k
    }

    /// Length of the bottleneck embedding.
    pub fn embedding_len(&self) -> usize {
        self.channels(self.n_levels - 1)
    }

    /// Same network without a history path.
    pub fn image_variant(&self) -> GeneratorConfig {
        GeneratorConfig {
            history_len: 0,
            history_weights: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub base_filters: usize,
    pub n_layers: usize,
    /// Hidden width of the embedding discriminator.
    pub embed_hidden: usize,
    /// Frames seen by the video discriminator.
    pub video_window: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            n_layers: 3,
            embed_hidden: 64,
            video_window: 6,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self, patch: PatchSpec) -> Result<()> {
        if self.base_filters == 0
            || self.n_layers == 0
            || self.embed_hidden == 0
            || self.video_window == 0
        {
            return Err(invalid("discriminator sizes must be positive"));
        }
        let div = 1usize << self.n_layers;
        if patch.height % div != 0 || patch.width % div != 0 {
            return Err(invalid(format!(
                "patch {}x{} is not divisible by 2^{} for the discriminators",
                patch.height, patch.width, self.n_layers
            )));
        }
        Ok(())
    }
}

/// Which objective a bundle is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    AdvOnly,
    Pixel,
    Perceptual,
    Cycle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::AdvOnly => "adv_only",
            Method::Pixel => "pixel",
            Method::Perceptual => "perceptual",
            Method::Cycle => "cycle",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Method::Ours
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ours" => Method::Ours,
            "adv_only" => Method::AdvOnly,
            "pixel" => Method::Pixel,
            "perceptual" => Method::Perceptual,
            "cycle" => Method::Cycle,
            other => return Err(invalid(format!("unknown method `{}`", other))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub disc: DiscConfig,
    pub method: Method,
}

impl ModelConfig {
    pub fn new(generator: GeneratorConfig, disc: DiscConfig, method: Method) -> Self {
        Self {
            generator,
            disc,
            method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.disc.validate(self.generator.patch)?;
        if self.method.is_baseline() && self.generator.history_len > 0 {
            return Err(invalid(
                "baseline models are image-only; set history_len = 0",
            ));
        }
        Ok(())
    }

    pub fn patch(&self) -> PatchSpec {
        self.generator.patch
    }
}

/// Every network of one experiment plus its training step.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub step: u64,
}

impl ModelBundle {
    /// Freshly initialized networks for `config`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let gcfg = &config.generator;
        let d = &config.disc;
        nets::init_generator(&mut params, "g", gcfg, &mut rng);
        match config.method {
            Method::Ours => {
                nets::init_image_disc(&mut params, "di", d, gcfg.embedding_len(), &mut rng);
                nets::init_embed_disc(&mut params, "de", d, gcfg.embedding_len(), &mut rng);
                nets::init_video_disc(&mut params, "dv", d, gcfg.embedding_len(), &mut rng);
            }
            Method::Cycle => {
                nets::init_generator(&mut params, "f", gcfg, &mut rng);
                nets::init_image_disc(&mut params, "di", d, 0, &mut rng);
                nets::init_image_disc(&mut params, "da", d, 0, &mut rng);
            }
            _ => nets::init_image_disc(&mut params, "di", d, 0, &mut rng),
        }
        Ok(Self {
            config,
            params,
            step: 0,
        })
    }

    /// Video-stage bundle whose shared layers come from a trained image
    /// bundle; history layers and the video discriminator start fresh.
    pub fn from_image_bundle(
        image: &ModelBundle,
        generator: GeneratorConfig,
        seed: u64,
    ) -> Result<Self> {
        if image.config.generator.image_variant() != generator.image_variant() {
            return Err(crate::Error::ConfigMismatch(
                "image and video generators differ beyond the history path".into(),
            ));
        }
        let config = ModelConfig {
            generator,
            ..image.config.clone()
        };
        let mut out = Self::new(config, seed)?;
        for (name, t) in image.params.iter() {
            if name.starts_with("dv.") {
                continue;
            }
            if let Some(slot) = out.params.get_mut(name) {
                if slot.shape() == t.shape() {
                    *slot = t.clone();
                }
            }
        }
        Ok(out)
    }

    pub fn generator(&self) -> &GeneratorConfig {
        &self.config.generator
    }
}
