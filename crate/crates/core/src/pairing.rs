//! The blend operator and the fake/real training pairs built with it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::sampling::sample_placement_with;
use crate::dataio::{
    crop_mask, crop_patch, scale_trajectory, BinaryMask, BoundingBox, Frame, PatchSpec, Track,
    VideoClip,
};
use crate::error::{invalid, Error, Result};

/// Margin added on each side of an annotation box when cropping objects.
pub const OBJECT_MARGIN: f64 = 0.1;

/// Size of the centered ones-rectangle relative to the patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskCoverage {
    pub frac_w: f64,
    pub frac_h: f64,
}

impl Default for MaskCoverage {
    fn default() -> Self {
        Self {
            frac_w: 0.5,
            frac_h: 0.75,
        }
    }
}

/// Fixed `H x W` mask of zeros and ones used by [`blend`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlendMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl BlendMask {
    /// Arbitrary 0/1 mask; rejects any other value.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask values for {}x{}",
                values.len(),
                height,
                width
            )));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("blend mask entries must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn to_binary(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |y, x| self.get(y, x) == 1.0)
    }
}

/// Nearest integer to `v` with the same parity as `n`, within `[0, n]`.
fn round_with_parity(v: f64, n: usize) -> usize {
    let k = ((v - (n % 2) as f64) / 2.0).round() as i64;
    (2 * k + (n % 2) as i64).clamp(0, n as i64) as usize
}

/// Centered rectangle of ones covering `frac_w x frac_h` of the patch.
///
/// Side lengths are rounded to the parity of the patch side so the
/// rectangle is exactly centered.
pub fn make_mask(spec: PatchSpec, coverage: MaskCoverage) -> Result<BlendMask> {
    spec.validate()?;
    for (name, f) in [("frac_w", coverage.frac_w), ("frac_h", coverage.frac_h)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid(format!("{} must lie in (0, 1), got {}", name, f)));
        }
    }
    let (h, w) = (spec.height, spec.width);
    let mw = round_with_parity(coverage.frac_w * w as f64, w).max(if w % 2 == 0 { 2 } else { 1 });
    let mh = round_with_parity(coverage.frac_h * h as f64, h).max(if h % 2 == 0 { 2 } else { 1 });
    let (x0, y0) = ((w - mw) / 2, (h - mh) / 2);
    let mut values = vec![0.0; h * w];
    for y in y0..y0 + mh {
        for x in x0..x0 + mw {
            values[y * w + x] = 1.0;
        }
    }
    Ok(BlendMask {
        height: h,
        width: w,
        values,
    })
}

/// `u * m/2 + r * (1 - m/2)` per pixel and channel.
pub fn blend(u: &Frame, r: &Frame, m: &BlendMask) -> Result<Frame> {
    if !u.same_size(r) || u.height() != m.height || u.width() != m.width {
        return Err(invalid(format!(
            "blend of {}x{} object, {}x{} region and {}x{} mask",
            u.height(),
            u.width(),
            r.height(),
            r.width(),
            m.height,
            m.width
        )));
    }
    let pixels = u
        .pixels()
        .iter()
        .zip(r.pixels())
        .enumerate()
        .map(|(i, (&a, &b))| {
            let half = m.values[i / 3] / 2.0;
            a * half + b * (1.0 - half)
        })
        .collect();
    Frame::new(u.height(), u.width(), pixels, r.index())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairKind {
    /// Object of B blended into a region of A.
    FakeA,
    /// Object of B blended into a region of B.
    FakeB,
    /// Object of A blended into a region of B; no target.
    Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlendedPair {
    pub input: Frame,
    pub target: Option<Frame>,
    pub kind: PairKind,
}

impl BlendedPair {
    pub fn new(input: Frame, target: Option<Frame>, kind: PairKind) -> Result<Self> {
        if target.is_some() == (kind == PairKind::Real) {
            return Err(invalid(format!(
                "{:?} pair with target present = {}",
                kind,
                target.is_some()
            )));
        }
        if let Some(t) = &target {
            if !t.same_size(&input) {
                return Err(invalid("pair input and target differ in size"));
            }
        }
        Ok(Self {
            input,
            target,
            kind,
        })
    }
}

/// The unblended patches a batch was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSources {
    pub u_a: Frame,
    pub u_b: Frame,
    pub r_a: Frame,
    pub r_b: Frame,
    /// Object mask of `u_a` at patch resolution, when the clip has masks.
    pub u_a_mask: Option<BinaryMask>,
}

/// One real pair and both fake pairs at a single time step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub real: BlendedPair,
    pub fake_a: BlendedPair,
    pub fake_b: BlendedPair,
    pub sources: PatchSources,
}

impl TrainingBatch {
    pub fn from_sources(sources: PatchSources, m: &BlendMask) -> Result<Self> {
        let real = BlendedPair::new(blend(&sources.u_a, &sources.r_b, m)?, None, PairKind::Real)?;
        let fake_a = BlendedPair::new(
            blend(&sources.u_b, &sources.r_a, m)?,
            Some(sources.u_b.clone()),
            PairKind::FakeA,
        )?;
        let fake_b = BlendedPair::new(
            blend(&sources.u_b, &sources.r_b, m)?,
            Some(sources.u_b.clone()),
            PairKind::FakeB,
        )?;
        Ok(Self {
            real,
            fake_a,
            fake_b,
            sources,
        })
    }
}

/// Consecutive per-frame batches for the video stage.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub steps: Vec<TrainingBatch>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub patch: PatchSpec,
    pub coverage: MaskCoverage,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            patch: PatchSpec::default(),
            coverage: MaskCoverage::default(),
        }
    }
}

/// An object picked for cropping: a track and a window of frames it covers.
struct ObjectWindow<'a> {
    track: &'a Track,
    start: usize,
}

fn pick_object<'a>(
    clip: &'a VideoClip,
    len: usize,
    rng: &mut impl Rng,
) -> Result<ObjectWindow<'a>> {
    let usable: Vec<(&Track, Vec<usize>)> = clip
        .tracks
        .iter()
        .map(|t| (t, t.window_starts(len)))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(invalid(format!(
            "video {} has no object track covering {} consecutive frames",
            clip.name, len
        )));
    }
    let (track, starts) = &usable[rng.random_range(0..usable.len())];
    Ok(ObjectWindow {
        track,
        start: starts[rng.random_range(0..starts.len())],
    })
}

fn object_boxes(obj: &ObjectWindow, len: usize, spec: PatchSpec) -> Vec<BoundingBox> {
    (obj.start..obj.start + len)
        .map(|f| obj.track.boxes[&f].with_margin_and_aspect(OBJECT_MARGIN, spec.height, spec.width))
        .collect()
}

fn clip_frame(clip: &VideoClip, index: usize) -> Result<&Frame> {
    clip.frame(index)
        .ok_or_else(|| invalid(format!("video {} has no frame {}", clip.name, index)))
}

/// Region boxes in `clip` that follow `motion` scaled to the placement.
fn region_boxes(
    clip: &VideoClip,
    motion: &[BoundingBox],
    placement: Option<BoundingBox>,
    spec: PatchSpec,
    rng: &mut impl Rng,
) -> Result<Vec<BoundingBox>> {
    let reference = clip
        .median_object_height()
        .ok_or_else(|| invalid(format!("video {} has no annotated objects", clip.name)))?;
    let (h, w) = clip
        .frames
        .frame_size()
        .ok_or_else(|| invalid(format!("video {} has no frames", clip.name)))?;
    for _ in 0..64 {
        let place = match placement {
            Some(p) => p,
            None => sample_placement_with(&clip.frames, &clip.roi, reference, spec, rng)?,
        };
        let boxes = scale_trajectory(motion, place.h, place.center())?;
        if boxes.iter().all(|b| b.intersects_frame(h, w)) {
            return Ok(boxes);
        }
        if placement.is_some() {
            break;
        }
    }
    Err(invalid(format!(
        "could not place a {}-frame region inside video {}",
        motion.len(),
        clip.name
    )))
}

/// Draws `len` consecutive training steps from videos `a` and `b`.
pub fn make_sequence_batch_with(
    a: &VideoClip,
    b: &VideoClip,
    placement: Option<BoundingBox>,
    len: usize,
    cfg: &PairingConfig,
    rng: &mut impl Rng,
) -> Result<SequenceBatch> {
    if len == 0 {
        return Err(invalid("sequence length must be positive"));
    }
    let spec = cfg.patch;
    let m = make_mask(spec, cfg.coverage)?;
    let obj_a = pick_object(a, len, rng)?;
    let obj_b = pick_object(b, len, rng)?;
    let boxes_ua = object_boxes(&obj_a, len, spec);
    let boxes_ub = object_boxes(&obj_b, len, spec);
    let boxes_rb = region_boxes(b, &boxes_ua, placement, spec, rng)?;
    let boxes_ra = region_boxes(a, &boxes_ub, None, spec, rng)?;
    let start_in = |clip: &VideoClip, rng: &mut dyn rand::RngCore| -> Result<usize> {
        let n = clip.frames.len();
        if n < len {
            return Err(invalid(format!(
                "video {} is shorter than {} frames",
                clip.name, len
            )));
        }
        Ok(clip.frames.frames()[rng.random_range(0..=n - len)].index())
    };
    let ra_start = start_in(a, rng)?;
    let rb_start = start_in(b, rng)?;
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let fa = obj_a.start + t;
        let u_a = crop_patch(clip_frame(a, fa)?, &boxes_ua[t], spec)?;
        let u_a_mask = a
            .mask(obj_a.track.object_id, fa)
            .map(|mk| crop_mask(mk, &boxes_ua[t], spec));
        let u_b = crop_patch(clip_frame(b, obj_b.start + t)?, &boxes_ub[t], spec)?;
        let r_a = crop_patch(clip_frame(a, ra_start + t)?, &boxes_ra[t], spec)?;
        let r_b = crop_patch(clip_frame(b, rb_start + t)?, &boxes_rb[t], spec)?;
        let sources = PatchSources {
            u_a,
            u_b,
            r_a,
            r_b,
            u_a_mask,
        };
        steps.push(TrainingBatch::from_sources(sources, &m)?);
    }
    Ok(SequenceBatch { steps })
}

/// Single-step batch from videos `a` and `b`, deterministic per seed.
///
/// `placement` fixes the region in `b`; otherwise one is sampled in its ROI.
pub fn make_training_batch(
    a: &VideoClip,
    b: &VideoClip,
    placement: Option<BoundingBox>,
    rng_seed: u64,
    cfg: &PairingConfig,
) -> Result<TrainingBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seq = make_sequence_batch_with(a, b, placement, 1, cfg, &mut rng)?;
    Ok(seq.steps.remove(0))
}

pub fn make_sequence_batch(
    a: &VideoClip,
    b: &VideoClip,
    placement: Option<BoundingBox>,
    len: usize,
    rng_seed: u64,
    cfg: &PairingConfig,
) -> Result<SequenceBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    make_sequence_batch_with(a, b, placement, len, cfg, &mut rng)
}

/// Picks two distinct videos (when there are two) and draws a sequence.
pub fn sample_sequence_batch(
    clips: &[VideoClip],
    len: usize,
    cfg: &PairingConfig,
    rng: &mut impl Rng,
) -> Result<SequenceBatch> {
    if clips.is_empty() {
        return Err(invalid("no videos to draw training pairs from"));
    }
    let ia = rng.random_range(0..clips.len());
    let ib = if clips.len() > 1 {
        (ia + rng.random_range(1..clips.len())) % clips.len()
    } else {
        ia
    };
    make_sequence_batch_with(&clips[ia], &clips[ib], None, len, cfg, rng)
}
