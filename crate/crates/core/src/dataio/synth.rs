//! Procedural sprite videos with exact masks and boxes.
//!
//! Each video has a drifting multi-wave background texture and a handful of
//! two-tone sprites (ellipses, boxes and pedestrian-like figures) moving
//! along linear-plus-sinusoid paths that bounce inside the ROI.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{VideoClip, MAX_MASK_OBJECTS};
use super::frame::{Frame, FrameSequence};
use super::geometry::{BoundingBox, Track};
use super::mask::BinaryMask;
use crate::error::{invalid, Result};

pub const SYNTH_FPS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpriteConfig {
    pub n_videos: usize,
    pub n_frames: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub n_objects: usize,
    pub seed: u64,
}

impl Default for SpriteConfig {
    fn default() -> Self {
        Self {
            n_videos: 40,
            n_frames: 24,
            frame_height: 96,
            frame_width: 128,
            n_objects: 3,
            seed: 0,
        }
    }
}

impl SpriteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.n_frames == 0 {
            return Err(invalid("n_videos and n_frames must be positive"));
        }
        if self.frame_height < 32 || self.frame_width < 32 {
            return Err(invalid(format!(
                "frame size {}x{} is below the 32x32 minimum",
                self.frame_height, self.frame_width
            )));
        }
        if self.n_objects as i64 > MAX_MASK_OBJECTS {
            return Err(invalid(format!(
                "at most {} objects per video, got {}",
                MAX_MASK_OBJECTS, self.n_objects
            )));
        }
        Ok(())
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Background {
    base: [f64; 3],
    waves: Vec<Wave>,
    drift: (f64, f64),
    shade: f64,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let base = [0.0; 3].map(|_: f64| rng.random_range(0.25..0.75));
        let waves = (0..3)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let freq = rng.random_range(0.04..0.16) * std::f64::consts::TAU;
                Wave {
                    kx: freq * angle.cos(),
                    ky: freq * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [0.0; 3].map(|_: f64| rng.random_range(0.02..0.09)),
                }
            })
            .collect();
        let drift = (rng.random_range(-0.6..0.6), rng.random_range(-0.2..0.2));
        let shade = rng.random_range(-0.15..0.15);
        Self {
            base,
            waves,
            drift,
            shade,
        }
    }

    fn at(&self, x: f64, y: f64, t: f64, height: f64) -> [f64; 3] {
        let (sx, sy) = (x + self.drift.0 * t, y + self.drift.1 * t);
        let mut out = self.base;
        for w in &self.waves {
            let s = (w.kx * sx + w.ky * sy + w.phase).sin();
            for c in 0..3 {
                out[c] += w.amp[c] * s;
            }
        }
        let g = self.shade * (y / height - 0.5);
        out.map(|v| (v + g).clamp(0.02, 0.98))
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Ellipse,
    Block,
    Figure,
}

struct Sprite {
    id: i64,
    shape: Shape,
    w: f64,
    h: f64,
    top: [f64; 3],
    bottom: [f64; 3],
    start: (f64, f64),
    velocity: (f64, f64),
    bob_amp: f64,
    bob_freq: f64,
    bob_phase: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Folds `v` into `[lo, hi]` as a triangle wave, i.e. a bouncing path.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    if m <= span {
        lo + m
    } else {
        lo + 2.0 * span - m
    }
}

impl Sprite {
    fn random(id: i64, rng: &mut ChaCha8Rng, roi: &BoundingBox, frame_h: f64) -> Self {
        let shape = match rng.random_range(0..3) {
            0 => Shape::Ellipse,
            1 => Shape::Block,
            _ => Shape::Figure,
        };
        let h = rng.random_range(0.28..0.42) * frame_h;
        let w = h * rng.random_range(0.4..0.55);
        let hue = rng.random::<f64>();
        let top = hsv(hue, rng.random_range(0.6..1.0), rng.random_range(0.55..1.0));
        let hue2 = (hue + rng.random_range(0.2..0.8)).fract();
        let bottom = hsv(
            hue2,
            rng.random_range(0.5..1.0),
            rng.random_range(0.35..0.9),
        );
        let start = (
            roi.x + rng.random::<f64>() * roi.w,
            roi.y + rng.random::<f64>() * roi.h,
        );
        let speed = rng.random_range(0.4..1.6);
        let angle = rng.random_range(-0.5..0.5)
            + if rng.random::<bool>() {
                0.0
            } else {
                std::f64::consts::PI
            };
        Self {
            id,
            shape,
            w,
            h,
            top,
            bottom,
            start,
            velocity: (speed * angle.cos(), speed * angle.sin()),
            bob_amp: rng.random_range(0.0..2.0),
            bob_freq: rng.random_range(0.3..0.8),
            bob_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn center(&self, t: f64, roi: &BoundingBox) -> (f64, f64) {
        let cx = reflect(self.start.0 + self.velocity.0 * t, roi.x, roi.right());
        let cy = reflect(self.start.1 + self.velocity.1 * t, roi.y, roi.bottom())
            + self.bob_amp * (self.bob_freq * t + self.bob_phase).sin();
        (cx, cy.clamp(roi.y, roi.bottom()))
    }

    /// Color at normalized offsets `u, v` in `[-1, 1]`, if inside the shape.
    fn shade(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let inside = match self.shape {
            Shape::Ellipse => u * u + v * v <= 1.0,
            Shape::Block => u.abs() <= 0.85 && v.abs() <= 1.0,
            Shape::Figure => {
                let hu = u * self.w / 2.0;
                let hv = (v + 0.72) * self.h / 2.0;
                let head = hu * hu + hv * hv <= (0.14 * self.h).powi(2);
                let body = u * u + ((v - 0.2) / 0.8).powi(2) <= 1.0;
                head || body
            }
        };
        if !inside {
            return None;
        }
        let base = if v < 0.0 { self.top } else { self.bottom };
        let k = 1.0 - 0.15 * u.abs();
        Some(base.map(|c| (c * k).clamp(0.0, 1.0)))
    }
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}

/// The ROI sprites move within: the lower-middle band of the frame.
pub fn default_roi(height: usize, width: usize) -> BoundingBox {
    let (h, w) = (height as f64, width as f64);
    BoundingBox {
        x: 0.1 * w,
        y: 0.35 * h,
        w: 0.8 * w,
        h: 0.43 * h,
    }
}

/// Generates one clip from an explicit rng (used for dedicated long clips).
pub fn generate_clip(
    name: &str,
    n_frames: usize,
    height: usize,
    width: usize,
    n_objects: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VideoClip> {
    let roi = default_roi(height, width);
    let bg = Background::random(rng);
    let sprites: Vec<Sprite> = (1..=n_objects as i64)
        .map(|id| Sprite::random(id, rng, &roi, height as f64))
        .collect();
    let mut frames = Vec::with_capacity(n_frames);
    let mut tracks: Vec<Track> = sprites.iter().map(|s| Track::new(s.id)).collect();
    let mut masks: BTreeMap<i64, BTreeMap<usize, BinaryMask>> = BTreeMap::new();
    for t in 0..n_frames {
        let tf = t as f64;
        let mut px = vec![0.0; height * width * 3];
        for y in 0..height {
            for x in 0..width {
                let c = bg.at(x as f64 + 0.5, y as f64 + 0.5, tf, height as f64);
                px[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&c);
            }
        }
        for (s, track) in sprites.iter().zip(tracks.iter_mut()) {
            let (cx, cy) = s.center(tf, &roi);
            let mut mask = BinaryMask::empty(height, width);
            let y0 = ((cy - s.h / 2.0).floor().max(0.0)) as usize;
            let y1 = ((cy + s.h / 2.0).ceil().min(height as f64)) as usize;
            let x0 = ((cx - s.w / 2.0).floor().max(0.0)) as usize;
            let x1 = ((cx + s.w / 2.0).ceil().min(width as f64)) as usize;
            for y in y0..y1 {
                let v = (y as f64 + 0.5 - cy) / (s.h / 2.0);
                for x in x0..x1 {
                    let u = (x as f64 + 0.5 - cx) / (s.w / 2.0);
                    if let Some(col) = s.shade(u, v) {
                        mask.set(y, x, true);
                        px[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&col);
                    }
                }
            }
            if let Some((bx0, by0, bx1, by1)) = mask.bounds() {
                track.boxes.insert(
                    t,
                    BoundingBox::new(
                        bx0 as f64,
                        by0 as f64,
                        (bx1 - bx0 + 1) as f64,
                        (by1 - by0 + 1) as f64,
                    )?,
                );
                masks.entry(s.id).or_default().insert(t, mask);
            }
        }
        px.iter_mut().for_each(|v| *v = quantize(*v));
        frames.push(Frame::new(height, width, px, t)?);
    }
    Ok(VideoClip {
        name: name.to_string(),
        frames: FrameSequence::new(frames, SYNTH_FPS)?,
        tracks,
        masks,
        roi,
    })
}

/// Deterministic sprite dataset: video `k` depends only on `(seed, k)`.
pub fn generate_sprite_dataset(cfg: &SpriteConfig) -> Result<Vec<VideoClip>> {
    cfg.validate()?;
    (0..cfg.n_videos)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            generate_clip(
                &format!("video_{:03}", k),
                cfg.n_frames,
                cfg.frame_height,
                cfg.frame_width,
                cfg.n_objects,
                &mut rng,
            )
        })
        .collect()
}
