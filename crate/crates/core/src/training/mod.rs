//! Alternating discriminator/generator optimization for both stages, with
//! Adam, history noise and resumable checkpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use autodiff::{Graph, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Frame, VideoClip};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    BaselineObjective, FeatureExtractor, ImageObjective, LossReport, Objective,
    RandomConvExtractor, VideoObjective,
};
use crate::models::checkpoint::{
    bundle_from_checkpoint, bundle_to_checkpoint, read_checkpoint, write_checkpoint, RngState,
};
use crate::models::{Method, ModelBundle, ModelConfig, ParamSet};
use crate::pairing::{
    make_mask, sample_sequence_batch, PairingConfig, SequenceBatch, TrainingBatch,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub lambda_fake: f64,
    pub noise_std: f64,
    pub iters: u64,
    pub seed: u64,
    /// Frames per training sequence in the video stage.
    pub seq_len: usize,
    /// Write a log line every this many steps.
    pub log_every: u64,
    pub pairing: PairingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1,
            lambda_fake: crate::losses::LAMBDA_FAKE,
            noise_std: 0.01,
            iters: 2000,
            seed: 0,
            seq_len: 8,
            log_every: 10,
            pairing: PairingConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("eps must be positive"));
        }
        if self.batch_size != 1 {
            return Err(invalid("only batch_size = 1 is supported"));
        }
        if !(self.lambda_fake >= 0.0) {
            return Err(invalid("lambda_fake must be non-negative"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be non-negative"));
        }
        if self.seq_len == 0 {
            return Err(invalid("seq_len must be positive"));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be positive"));
        }
        self.pairing.patch.validate()
    }
}

/// Adds `std * z` to every value and clamps to `[0, 1]`.
pub fn perturb(values: &mut [f64], std: f64, rng: &mut dyn RngCore) {
    if std == 0.0 {
        return;
    }
    for v in values {
        let z: f64 = rng.sample(StandardNormal);
        *v = (*v + std * z).clamp(0.0, 1.0);
    }
}

pub fn inject_history_noise(
    frames: &[Frame],
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Frame>> {
    if !(noise_std >= 0.0) {
        return Err(invalid(format!(
            "noise_std must be non-negative, got {}",
            noise_std
        )));
    }
    frames
        .iter()
        .map(|f| {
            let mut px = f.pixels().to_vec();
            perturb(&mut px, noise_std, rng);
            Frame::new(f.height(), f.width(), px, f.index())
        })
        .collect()
}

/// Model, Adam moments, step counter (the bundle's) and the random stream.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub adam_m: ParamSet,
    pub adam_v: ParamSet,
    pub rng: ChaCha8Rng,
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.bundle == other.bundle
            && self.adam_m == other.adam_m
            && self.adam_v == other.adam_v
            && RngState::capture(&self.rng) == RngState::capture(&other.rng)
    }
}

impl TrainState {
    pub fn new(bundle: ModelBundle, seed: u64) -> Self {
        let adam_m = bundle.params.zeros_like();
        let adam_v = bundle.params.zeros_like();
        Self {
            bundle,
            adam_m,
            adam_v,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&self) -> u64 {
        self.bundle.step
    }

    fn adam(&mut self, grads: BTreeMap<String, Tensor>, cfg: &TrainConfig) {
        let t = (self.bundle.step + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (name, grad) in grads {
            let p = self
                .bundle
                .params
                .get_mut(&name)
                .expect("gradient of a known parameter");
            let m = self
                .adam_m
                .get_mut(&name)
                .expect("moment of a known parameter");
            let v = self
                .adam_v
                .get_mut(&name)
                .expect("moment of a known parameter");
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in grad.data().iter().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                p[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReports {
    pub step: u64,
    pub g: LossReport,
    pub d: LossReport,
}

/// One discriminator update on detached generator outputs, then one
/// generator update through the updated discriminators.
pub fn train_step(
    state: &mut TrainState,
    obj: &dyn Objective,
    cfg: &TrainConfig,
) -> Result<StepReports> {
    let step = state.bundle.step;
    let mut g1 = Graph::new();
    let mut b1 = crate::models::Bound::default();
    b1.bind(&mut g1, &state.bundle.params, obj.generator_nets(), true);
    let fwd = obj.forward(&mut g1, &b1, &mut state.rng)?;

    let mut g2 = Graph::new();
    let b2 = crate::models::Bound::new(&mut g2, &state.bundle.params, obj.disc_nets(), true);
    let fwd2 = fwd.detach_into(&g1, &mut g2);
    let dt = obj.d_terms(&mut g2, &b2, &fwd2)?;
    let d_total = dt.total(&mut g2);
    let d_report = dt.report(&g2, d_total);
    d_report.check_finite(step)?;
    let d_grads = collect_grads(&g2, g2.backward(d_total), &b2);
    state.adam(d_grads, cfg);

    b1.bind(&mut g1, &state.bundle.params, obj.disc_nets(), false);
    let gt = obj.g_terms(&mut g1, &b1, &fwd)?;
    let g_total = gt.total(&mut g1);
    let g_report = gt.report(&g1, g_total);
    g_report.check_finite(step)?;
    let gen: Vec<String> = obj
        .generator_nets()
        .iter()
        .map(|n| format!("{}.", n))
        .collect();
    let mut g_grads = collect_grads(&g1, g1.backward(g_total), &b1);
    g_grads.retain(|k, _| gen.iter().any(|p| k.starts_with(p.as_str())));
    state.adam(g_grads, cfg);

    if !state.bundle.params.all_finite() {
        return Err(Error::NonFinite {
            component: "parameters".into(),
            step,
        });
    }
    state.bundle.step += 1;
    Ok(StepReports {
        step,
        g: g_report,
        d: d_report,
    })
}

fn collect_grads(
    g: &Graph,
    mut grads: autodiff::Gradients,
    b: &crate::models::Bound,
) -> BTreeMap<String, Tensor> {
    b.iter()
        .filter(|(_, &id)| g.requires_grad(id))
        .map(|(name, &id)| {
            let t = grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(g.value(id).shape()));
            (name.clone(), t)
        })
        .collect()
}

fn require_method(state: &TrainState, want: &[Method]) -> Result<()> {
    let m = state.bundle.config.method;
    if !want.contains(&m) {
        return Err(invalid(format!(
            "this training step does not apply to method `{}`",
            m.name()
        )));
    }
    Ok(())
}

pub fn train_step_image(
    state: &mut TrainState,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
) -> Result<StepReports> {
    require_method(state, &[Method::Ours])?;
    let config = state.bundle.config.clone();
    let obj = ImageObjective {
        config: &config,
        batch,
        lambda: cfg.lambda_fake,
    };
    train_step(state, &obj, cfg)
}

pub fn train_step_video(
    state: &mut TrainState,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
) -> Result<StepReports> {
    require_method(state, &[Method::Ours])?;
    let config = state.bundle.config.clone();
    let need = config.generator.history_len + config.disc.video_window;
    if batch.len() < need {
        return Err(invalid(format!(
            "video training needs sequences of at least {} frames, got {}",
            need,
            batch.len()
        )));
    }
    let obj = VideoObjective {
        config: &config,
        batch,
        lambda: cfg.lambda_fake,
        noise_std: cfg.noise_std,
    };
    train_step(state, &obj, cfg)
}

pub fn train_step_baseline(
    state: &mut TrainState,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<StepReports> {
    require_method(
        state,
        &[
            Method::AdvOnly,
            Method::Pixel,
            Method::Perceptual,
            Method::Cycle,
        ],
    )?;
    let config = state.bundle.config.clone();
    let mask = make_mask(cfg.pairing.patch, cfg.pairing.coverage)?;
    let obj = BaselineObjective {
        kind: config.method,
        config: &config,
        batch,
        mask: &mask,
        extractor,
    };
    train_step(state, &obj, cfg)
}

const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut ckpt = bundle_to_checkpoint(&state.bundle);
    ckpt.config["train"] = serde_json::to_value(cfg).expect("train config serializes");
    ckpt.rng = Some(RngState::capture(&state.rng));
    for (name, t) in state.adam_m.iter() {
        ckpt.arrays.insert(format!("{}{}", ADAM_M, name), t.clone());
    }
    for (name, t) in state.adam_v.iter() {
        ckpt.arrays.insert(format!("{}{}", ADAM_V, name), t.clone());
    }
    write_checkpoint(&ckpt, path)
}

/// Restores a training state. With `expected`, a checkpoint written for a
/// different model config is rejected.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(TrainState, Option<TrainConfig>)> {
    let ckpt = read_checkpoint(path)?;
    let bundle = bundle_from_checkpoint(&ckpt, path, expected)?;
    let bad = |m: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message: m,
    };
    let rng = ckpt
        .rng
        .ok_or_else(|| bad("no random state; this is a model-only checkpoint".into()))?
        .restore();
    let mut adam_m = bundle.params.zeros_like();
    let mut adam_v = bundle.params.zeros_like();
    for (prefix, set) in [(ADAM_M, &mut adam_m), (ADAM_V, &mut adam_v)] {
        for (name, t) in set.iter_mut() {
            let stored = ckpt
                .arrays
                .get(&format!("{}{}", prefix, name))
                .ok_or_else(|| bad(format!("missing optimizer moment `{}{}`", prefix, name)))?;
            if stored.shape() != t.shape() {
                return Err(bad(format!(
                    "optimizer moment `{}{}` has the wrong shape",
                    prefix, name
                )));
            }
            *t = stored.clone();
        }
    }
    let train = match ckpt.config.get("train") {
        Some(v) => Some(
            serde_json::from_value(v.clone()).map_err(|e| bad(format!("train config: {}", e)))?,
        ),
        None => None,
    };
    Ok((
        TrainState {
            bundle,
            adam_m,
            adam_v,
            rng,
        },
        train,
    ))
}

/// Which objective a training run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Image,
    Video,
}

/// Draws a batch from `clips` with the state's random stream and takes one
/// step of the objective matching the bundle's method.
pub fn train_on_clips(
    state: &mut TrainState,
    clips: &[VideoClip],
    stage: Stage,
    cfg: &TrainConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<StepReports> {
    let len = match stage {
        Stage::Image => 1,
        Stage::Video => cfg.seq_len,
    };
    let seq = sample_sequence_batch(clips, len, &cfg.pairing, &mut state.rng)?;
    match (stage, state.bundle.config.method) {
        (Stage::Image, Method::Ours) => train_step_image(state, &seq.steps[0], cfg),
        (Stage::Video, Method::Ours) => train_step_video(state, &seq, cfg),
        (Stage::Image, _) => train_step_baseline(state, &seq.steps[0], cfg, extractor),
        (Stage::Video, m) => Err(invalid(format!(
            "baseline `{}` has no video stage",
            m.name()
        ))),
    }
}

/// Runs until the state reaches `cfg.iters` steps, writing one JSON line per
/// logged step to `log`. Returns the last step's reports.
pub fn train(
    state: &mut TrainState,
    clips: &[VideoClip],
    stage: Stage,
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<Option<StepReports>> {
    cfg.validate()?;
    let extractor = RandomConvExtractor::default();
    let mut last = None;
    while state.step() < cfg.iters {
        let r = train_on_clips(state, clips, stage, cfg, &extractor)?;
        if r.step % cfg.log_every == 0 || state.step() == cfg.iters {
            let line = serde_json::json!({
                "step": r.step,
                "g_total": r.g.total,
                "d_total": r.d.total,
                "g": r.g.components,
                "d": r.d.components,
            });
            writeln!(log, "{}", line).map_err(|e| Error::Io {
                path: "<training log>".into(),
                source: e,
            })?;
            tracing::info!(step = r.step, g = r.g.total, d = r.d.total, "training");
        }
        last = Some(r);
    }
    Ok(last)
}
