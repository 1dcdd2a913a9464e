use autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::iou;
use crate::dataio::{crop_patch, BoundingBox, Frame, PatchSpec, VideoClip};
use crate::error::{invalid, Result};
use crate::losses::{nll_fake, nll_real};
use crate::models::{nets, Bound, DiscConfig, ParamSet};
use crate::pairing::OBJECT_MARGIN;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Source of object detections.
pub trait Detector {
    /// Detections in `frame`. With `near`, detections that cannot overlap
    /// that box may be left out.
    fn detect(&self, frame: &Frame, near: Option<&BoundingBox>) -> Result<Vec<Detection>>;
}

/// Echoes known boxes, frame by frame, with score 1.
#[derive(Clone, Debug, Default)]
pub struct GroundTruthDetector {
    pub boxes: std::collections::BTreeMap<usize, Vec<BoundingBox>>,
}

impl GroundTruthDetector {
    pub fn from_results(results: &[crate::inference::CompositeResult]) -> Self {
        let mut boxes = std::collections::BTreeMap::<usize, Vec<BoundingBox>>::new();
        for r in results {
            for (f, b) in r.video.frames().iter().zip(&r.per_frame_regions) {
                boxes.entry(f.index()).or_default().push(*b);
            }
        }
        Self { boxes }
    }
}

impl Detector for GroundTruthDetector {
    fn detect(&self, frame: &Frame, _near: Option<&BoundingBox>) -> Result<Vec<Detection>> {
        Ok(self
            .boxes
            .get(&frame.index())
            .map(|v| {
                v.iter()
                    .map(|&bbox| Detection { bbox, score: 1.0 })
                    .collect()
            })
            .unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowDetectorConfig {
    /// Windows are resampled to this size before scoring.
    pub input: PatchSpec,
    pub base_filters: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Ratio between consecutive window heights.
    pub scale_step: f64,
    /// Window stride as a fraction of the window height.
    pub stride: f64,
    pub min_height: f64,
}

impl Default for WindowDetectorConfig {
    fn default() -> Self {
        Self {
            input: PatchSpec {
                height: 32,
                width: 16,
            },
            base_filters: 8,
            train_steps: 1500,
            batch: 16,
            lr: 1e-3,
            seed: 0,
            scale_step: 1.2,
            stride: 0.125,
            min_height: 16.0,
        }
    }
}

/// Sliding-window object classifier: a small convolutional scorer applied
/// to windows at the object-crop aspect.
#[derive(Clone, Debug)]
pub struct WindowDetector {
    pub config: WindowDetectorConfig,
    params: ParamSet,
}

const NET: &str = "det";

impl WindowDetector {
    fn disc(&self) -> DiscConfig {
        disc_config(&self.config)
    }

    /// Logits of `windows` in `frame`.
    pub fn score_windows(&self, frame: &Frame, windows: &[BoundingBox]) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let crops = windows
            .iter()
            .map(|w| crop_patch(frame, w, self.config.input))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Frame> = crops.iter().collect();
        let x = Frame::stack(&refs)?;
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &self.params, &[NET], false);
        let xi = g.constant(x);
        let z = nets::image_disc(&mut g, &b, NET, &self.disc(), xi, None);
        Ok(g.value(z).data().to_vec())
    }

    fn windows(&self, h: usize, w: usize, near: Option<&BoundingBox>) -> Vec<BoundingBox> {
        let aspect = self.config.input.aspect();
        let step = self.config.scale_step;
        let mut heights = Vec::new();
        match near {
            Some(r) => {
                // Equal-aspect boxes overlap with IoU >= 0.5 only within a
                // height ratio of sqrt 2.
                let mut s = 1.0 / std::f64::consts::SQRT_2;
                while s <= std::f64::consts::SQRT_2 + 1e-9 {
                    heights.push(r.h * s);
                    s *= step;
                }
            }
            None => {
                let mut hh = self.config.min_height;
                while hh <= h as f64 {
                    heights.push(hh);
                    hh *= step;
                }
            }
        }
        let mut out = Vec::new();
        for bh in heights {
            let bw = bh * aspect;
            let stride = (bh * self.config.stride).max(1.0);
            let (x0, x1, y0, y1) = match near {
                Some(r) => {
                    let (cx, cy) = r.center();
                    (
                        cx - 0.4 * r.w.max(bw),
                        cx + 0.4 * r.w.max(bw),
                        cy - 0.4 * r.h.max(bh),
                        cy + 0.4 * r.h.max(bh),
                    )
                }
                None => (bw / 2.0, w as f64 - bw / 2.0, bh / 2.0, h as f64 - bh / 2.0),
            };
            let mut cy = y0;
            while cy <= y1 + 1e-9 {
                let mut cx = x0;
                while cx <= x1 + 1e-9 {
                    if let Ok(b) = BoundingBox::from_center(cx, cy, bw, bh) {
                        if b.intersects_frame(h, w) {
                            out.push(b);
                        }
                    }
                    cx += stride;
                }
                cy += stride;
            }
        }
        out
    }
}

impl Detector for WindowDetector {
    fn detect(&self, frame: &Frame, near: Option<&BoundingBox>) -> Result<Vec<Detection>> {
        let windows = self.windows(frame.height(), frame.width(), near);
        let logits = self.score_windows(frame, &windows)?;
        Ok(windows
            .into_iter()
            .zip(logits)
            .map(|(bbox, z)| Detection {
                bbox,
                score: 1.0 / (1.0 + (-z).exp()),
            })
            .collect())
    }
}

fn disc_config(cfg: &WindowDetectorConfig) -> DiscConfig {
    DiscConfig {
        base_filters: cfg.base_filters,
        n_layers: 3,
        ..DiscConfig::default()
    }
}

/// Object windows of one frame: annotation boxes with the crop margin at the
/// detector aspect.
fn object_windows(clip: &VideoClip, frame: usize, spec: PatchSpec) -> Vec<BoundingBox> {
    clip.tracks
        .iter()
        .filter_map(|t| t.boxes.get(&frame))
        .map(|b| b.with_margin_and_aspect(OBJECT_MARGIN, spec.height, spec.width))
        .collect()
}

fn sample_example(
    clips: &[VideoClip],
    spec: PatchSpec,
    positive: bool,
    rng: &mut impl Rng,
) -> Option<Frame> {
    let clip = &clips[rng.random_range(0..clips.len())];
    let frame = &clip.frames.frames()[rng.random_range(0..clip.frames.len())];
    let (h, w) = (frame.height(), frame.width());
    let objects = object_windows(clip, frame.index(), spec);
    let bbox = if positive {
        if objects.is_empty() {
            return None;
        }
        let o = objects[rng.random_range(0..objects.len())];
        let s = rng.random_range(0.9..1.1);
        let (cx, cy) = o.center();
        BoundingBox::from_center(
            cx + rng.random_range(-0.06..0.06) * o.w,
            cy + rng.random_range(-0.06..0.06) * o.h,
            o.w * s,
            o.h * s,
        )
        .ok()?
    } else if !objects.is_empty() && rng.random_bool(0.5) {
        // Misaligned window on an object: shifted or badly scaled.
        let o = objects[rng.random_range(0..objects.len())];
        let s = rng.random_range(0.5..2.0);
        let (cx, cy) = o.center();
        let b = BoundingBox::from_center(
            cx + rng.random_range(-0.8..0.8) * o.w,
            cy + rng.random_range(-0.8..0.8) * o.h,
            o.w * s,
            o.h * s,
        )
        .ok()?;
        if !b.intersects_frame(h, w) || objects.iter().any(|o| iou(o, &b) >= 0.3) {
            return None;
        }
        b
    } else {
        let reference = objects.first().map(|o| o.h).unwrap_or(h as f64 / 3.0);
        let bh = reference * rng.random_range(0.5..1.6);
        let bw = bh * spec.aspect();
        let b = BoundingBox::from_center(
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
            bw,
            bh,
        )
        .ok()?;
        if !b.intersects_frame(h, w) || objects.iter().any(|o| iou(o, &b) >= 0.3) {
            return None;
        }
        b
    };
    crop_patch(frame, &bbox, spec).ok()
}

/// Trains a window detector on annotated clips.
pub fn train_window_detector(
    clips: &[VideoClip],
    cfg: &WindowDetectorConfig,
) -> Result<WindowDetector> {
    cfg.input.validate()?;
    if clips.iter().all(|c| c.tracks.is_empty()) {
        return Err(invalid("detector training needs annotated objects"));
    }
    if cfg.batch < 2 || cfg.train_steps == 0 || !(cfg.lr > 0.0) {
        return Err(invalid(
            "detector training needs batch >= 2, steps > 0 and lr > 0",
        ));
    }
    let disc = disc_config(cfg);
    disc.validate(cfg.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::default();
    nets::init_image_disc(&mut params, NET, &disc, 0, &mut rng);
    let mut m = params.zeros_like();
    let mut v = params.zeros_like();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let n_pos = cfg.batch / 2;
    for step in 0..cfg.train_steps {
        let mut crops = Vec::with_capacity(cfg.batch);
        for k in 0..cfg.batch {
            let positive = k < n_pos;
            loop {
                if let Some(c) = sample_example(clips, cfg.input, positive, &mut rng) {
                    crops.push(c);
                    break;
                }
            }
        }
        let refs: Vec<&Frame> = crops.iter().collect();
        let x = Frame::stack(&refs)?;
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &params, &[NET], true);
        let xi = g.constant(x);
        let z = nets::image_disc(&mut g, &b, NET, &disc, xi, None);
        let zp = g.slice(z, 0, 0, n_pos);
        let zn = g.slice(z, 0, n_pos, cfg.batch - n_pos);
        let lp = nll_real(&mut g, zp);
        let ln = nll_fake(&mut g, zn);
        let loss = g.add(lp, ln);
        let grads = g.backward(loss);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for (name, &id) in b.iter() {
            let gr: &Tensor = match grads.get(id) {
                Some(gr) => gr,
                None => continue,
            };
            let p = params.get_mut(name).expect("bound parameter").data_mut();
            let mm = m.get_mut(name).expect("moment").data_mut();
            let vv = v.get_mut(name).expect("moment").data_mut();
            for (i, &gi) in gr.data().iter().enumerate() {
                mm[i] = b1 * mm[i] + (1.0 - b1) * gi;
                vv[i] = b2 * vv[i] + (1.0 - b2) * gi * gi;
                p[i] -= cfg.lr * (mm[i] / c1) / ((vv[i] / c2).sqrt() + eps);
            }
        }
    }
    Ok(WindowDetector {
        config: cfg.clone(),
        params,
    })
}
