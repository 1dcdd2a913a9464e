//! Rendering an object track from one video into another.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::dataset::write_frame_dir;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::sampling::sample_placement_with;
use crate::dataio::{
    crop_mask, crop_patch, sample_bilinear, scale_trajectory, BinaryMask, BoundingBox, Frame,
    FrameSequence, PatchSpec, VideoClip,
};
use crate::error::{invalid, io_err, Result};
use crate::losses::history_slots;
use crate::models::{forward_generator_image, forward_generator_video, ModelBundle};
use crate::pairing::{blend, make_mask, MaskCoverage, OBJECT_MARGIN};

pub const DEFAULT_FEATHER_PX: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionRequest {
    /// Track in the source video to insert.
    pub object_id: i64,
    /// Region in the target at the first frame of the range.
    pub placement: BoundingBox,
    /// Frame numbers `[start, end)`, shared by source and target.
    pub frame_range: (usize, usize),
    /// Keep the region fixed instead of following the object's motion.
    #[serde(default)]
    pub static_placement: bool,
    #[serde(default = "default_feather")]
    pub feather_px: usize,
    #[serde(default)]
    pub coverage: MaskCoverage,
    /// Render with a bundle that has never been trained.
    #[serde(default)]
    pub allow_untrained: bool,
}

fn default_feather() -> usize {
    DEFAULT_FEATHER_PX
}

impl InsertionRequest {
    pub fn new(object_id: i64, placement: BoundingBox, frame_range: (usize, usize)) -> Self {
        Self {
            object_id,
            placement,
            frame_range,
            static_placement: false,
            feather_px: DEFAULT_FEATHER_PX,
            coverage: MaskCoverage::default(),
            allow_untrained: false,
        }
    }
}

/// Patch-level inputs of one rendered frame, kept for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPatch {
    pub u_a: Frame,
    pub r_b: Frame,
    pub u_a_mask: Option<BinaryMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResult {
    pub video: FrameSequence,
    pub per_frame_regions: Vec<BoundingBox>,
    pub patches: FrameSequence,
    pub inputs: Vec<RenderedPatch>,
    /// The region left the target frame before the end of the range.
    pub truncated: bool,
}

/// Renders `request` into `target` with the bundle's generator, feeding back
/// the last rendered patches as history and compositing every patch.
pub fn render_insertion(
    bundle: &ModelBundle,
    source: &VideoClip,
    target: &FrameSequence,
    request: &InsertionRequest,
) -> Result<CompositeResult> {
    if bundle.step == 0 && !request.allow_untrained {
        return Err(invalid(
            "the model has not been trained (step 0); pass allow_untrained to render anyway",
        ));
    }
    let spec = bundle.config.patch();
    let m = make_mask(spec, request.coverage)?;
    let n = bundle.generator().history_len;
    let mut boot: Option<Frame> = None;
    render_with(spec, source, target, request, |k, inp, prev| {
        let x = blend(&inp.u_a, &inp.r_b, &m)?;
        if n == 0 {
            return Ok(forward_generator_image(bundle, &x)?.output);
        }
        if boot.is_none() {
            boot = Some(forward_generator_image(bundle, &x)?.output);
        }
        let hist = history_slots(k, n, boot.as_ref().expect("set above"), prev);
        let refs: Vec<&Frame> = hist.iter().collect();
        Ok(forward_generator_video(bundle, &x, &refs)?.output)
    })
}

/// Shared insertion loop: crops the inputs of every frame, asks `patch_fn`
/// for the rendered patch (given the earlier ones) and composites it.
pub(crate) fn render_with(
    spec: PatchSpec,
    source: &VideoClip,
    target: &FrameSequence,
    request: &InsertionRequest,
    mut patch_fn: impl FnMut(usize, &RenderedPatch, &[Frame]) -> Result<Frame>,
) -> Result<CompositeResult> {
    let (start, end) = request.frame_range;
    if end <= start {
        return Err(invalid(format!("empty frame range [{}, {})", start, end)));
    }
    let track = source.track(request.object_id).ok_or_else(|| {
        invalid(format!(
            "video {} has no object {}",
            source.name, request.object_id
        ))
    })?;
    if !track.covers(start, end - start) {
        return Err(invalid(format!(
            "object {} is not annotated on every frame of [{}, {})",
            request.object_id, start, end
        )));
    }
    let (th, tw) = target
        .frame_size()
        .ok_or_else(|| invalid("empty target sequence"))?;
    for t in start..end {
        if source.frame(t).is_none() || target.by_index(t).is_none() {
            return Err(invalid(format!(
                "frame {} is missing from the source or the target",
                t
            )));
        }
    }
    if !request.placement.intersects_frame(th, tw) {
        return Err(invalid(format!(
            "placement {:?} misses the {}x{} target",
            request.placement, th, tw
        )));
    }

    let u_boxes: Vec<BoundingBox> = (start..end)
        .map(|t| track.boxes[&t].with_margin_and_aspect(OBJECT_MARGIN, spec.height, spec.width))
        .collect();
    let regions = if request.static_placement {
        vec![request.placement; u_boxes.len()]
    } else {
        scale_trajectory(&u_boxes, request.placement.h, request.placement.center())?
    };

    let mut video = Vec::new();
    let mut patches: Vec<Frame> = Vec::new();
    let mut inputs = Vec::new();
    let mut used_regions = Vec::new();
    let mut truncated = false;
    for (k, t) in (start..end).enumerate() {
        let region = regions[k];
        if !region.inside_frame(th, tw) {
            tracing::warn!(
                frame = t,
                "insertion region left the target frame; truncating"
            );
            truncated = true;
            break;
        }
        let scene = target.by_index(t).expect("checked above");
        let inp = RenderedPatch {
            u_a: crop_patch(source.frame(t).expect("checked above"), &u_boxes[k], spec)?,
            u_a_mask: source
                .mask(request.object_id, t)
                .map(|mk| crop_mask(mk, &u_boxes[k], spec)),
            r_b: crop_patch(scene, &region, spec)?,
        };
        let out = patch_fn(k, &inp, &patches)?.with_index(t);
        video.push(composite_full_frame(
            scene,
            &out,
            &region,
            request.feather_px,
        )?);
        patches.push(out);
        inputs.push(inp);
        used_regions.push(region);
    }
    if video.is_empty() {
        return Err(invalid(
            "the insertion region leaves the target at the first frame",
        ));
    }
    Ok(CompositeResult {
        video: FrameSequence::new(video, target.fps())?,
        per_frame_regions: used_regions,
        patches: FrameSequence::new(patches, target.fps())?,
        inputs,
        truncated,
    })
}

/// An insertion of an object of `clips[source]` into `clips[target]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedInsertion {
    pub source: usize,
    pub target: usize,
    pub request: InsertionRequest,
}

/// Draws `n` insertions of `len` frames between distinct videos, each with a
/// placement inside the target's ROI whose whole trajectory stays in frame.
pub fn plan_insertions(
    clips: &[VideoClip],
    n: usize,
    len: usize,
    spec: PatchSpec,
    seed: u64,
) -> Result<Vec<PlannedInsertion>> {
    if clips.len() < 2 {
        return Err(invalid("planning insertions needs at least two videos"));
    }
    if len == 0 {
        return Err(invalid("insertions need at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(invalid(format!(
                "could only plan {} of {} insertions",
                out.len(),
                n
            )));
        }
        let source = rng.random_range(0..clips.len());
        let target = (source + rng.random_range(1..clips.len())) % clips.len();
        let (src, tgt) = (&clips[source], &clips[target]);
        let tracks: Vec<_> = src
            .tracks
            .iter()
            .filter(|t| !t.window_starts(len).is_empty())
            .collect();
        if tracks.is_empty() {
            continue;
        }
        let track = tracks[rng.random_range(0..tracks.len())];
        let starts = track.window_starts(len);
        let start = starts[rng.random_range(0..starts.len())];
        if tgt.frames.len() < start + len {
            continue;
        }
        let Some(reference) = tgt.median_object_height() else {
            continue;
        };
        let placement = sample_placement_with(&tgt.frames, &tgt.roi, reference, spec, &mut rng)?;
        let u_boxes: Vec<BoundingBox> = (start..start + len)
            .map(|t| track.boxes[&t].with_margin_and_aspect(OBJECT_MARGIN, spec.height, spec.width))
            .collect();
        let (h, w) = tgt.frames.frame_size().expect("nonempty target");
        let regions = scale_trajectory(&u_boxes, placement.h, placement.center())?;
        if regions.iter().all(|r| r.inside_frame(h, w)) {
            out.push(PlannedInsertion {
                source,
                target,
                request: InsertionRequest::new(track.object_id, placement, (start, start + len)),
            });
        }
    }
    Ok(out)
}

/// Pastes `patch`, resampled to `region`, over `scene`. Opacity ramps
/// linearly from 0 at the region border to 1 at `feather_px` inside it.
pub fn composite_full_frame(
    scene: &Frame,
    patch: &Frame,
    region: &BoundingBox,
    feather_px: usize,
) -> Result<Frame> {
    let (h, w) = (scene.height(), scene.width());
    if !region.inside_frame(h, w) {
        return Err(invalid(format!(
            "region {:?} is not inside the {}x{} scene",
            region, h, w
        )));
    }
    let (ph, pw) = (patch.height() as f64, patch.width() as f64);
    let feather = feather_px as f64;
    let y0 = region.y.floor() as usize;
    let y1 = (region.bottom().ceil() as usize).min(h);
    let x0 = region.x.floor() as usize;
    let x1 = (region.right().ceil() as usize).min(w);
    let mut px = scene.pixels().to_vec();
    for y in y0..y1 {
        let cy = y as f64 + 0.5;
        for x in x0..x1 {
            let cx = x as f64 + 0.5;
            if !region.contains_point(cx, cy) {
                continue;
            }
            let d = (cx - region.x)
                .min(region.right() - cx)
                .min(cy - region.y)
                .min(region.bottom() - cy);
            let alpha = if feather == 0.0 {
                1.0
            } else {
                (d / feather).min(1.0)
            };
            let sy = (cy - region.y) * ph / region.h - 0.5;
            let sx = (cx - region.x) * pw / region.w - 0.5;
            let v = sample_bilinear(patch, sy, sx);
            let i = (y * w + x) * 3;
            for c in 0..3 {
                px[i + c] = if alpha >= 1.0 {
                    v[c]
                } else {
                    px[i + c] + alpha * (v[c] - px[i + c])
                };
            }
        }
    }
    Frame::new(h, w, px, scene.index())
}

#[derive(Serialize)]
struct RegionRecord {
    frame: usize,
    region: BoundingBox,
}

#[derive(Serialize)]
struct RenderManifest {
    frames_dir: &'static str,
    patches_dir: &'static str,
    truncated: bool,
    regions: Vec<RegionRecord>,
}

/// Writes `frames/`, `patches/` and `regions.json` under `dir`.
pub fn write_composite(result: &CompositeResult, dir: &Path) -> Result<()> {
    write_frame_dir(&result.video, &dir.join("frames"))?;
    write_frame_dir(&result.patches, &dir.join("patches"))?;
    let manifest = RenderManifest {
        frames_dir: "frames",
        patches_dir: "patches",
        truncated: result.truncated,
        regions: result
            .video
            .frames()
            .iter()
            .zip(&result.per_frame_regions)
            .map(|(f, r)| RegionRecord {
                frame: f.index(),
                region: *r,
            })
            .collect(),
    };
    let path = dir.join("regions.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}
