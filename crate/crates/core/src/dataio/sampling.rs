//! Patch cropping, placement sampling and trajectory scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frame::{Frame, FrameSequence};
use super::geometry::{BoundingBox, PatchSpec};
use super::mask::BinaryMask;
use crate::error::{invalid, Result};

/// Bilinear sample at continuous pixel coordinates (pixel centers sit on
/// integers); coordinates outside the frame replicate the edge.
#[inline]
pub fn sample_bilinear(frame: &Frame, sy: f64, sx: f64) -> [f64; 3] {
    let (h, w) = (frame.height(), frame.width());
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = frame.get(y0, x0, c) + fx * (frame.get(y0, x1, c) - frame.get(y0, x0, c));
        let bot = frame.get(y1, x0, c) + fx * (frame.get(y1, x1, c) - frame.get(y1, x0, c));
        *o = (top + fy * (bot - top)).clamp(0.0, 1.0);
    }
    out
}

/// Source coordinate of output pixel `i` when `len` source pixels starting
/// at `start` are resampled to `n` output pixels.
#[inline]
pub(crate) fn source_coord(start: f64, len: f64, i: usize, n: usize) -> f64 {
    start + (i as f64 + 0.5) * len / n as f64 - 0.5
}

/// Resamples `bbox` of `frame` to a `spec`-sized patch.
///
/// Parts of the box outside the frame take the nearest edge pixel.
pub fn crop_patch(frame: &Frame, bbox: &BoundingBox, spec: PatchSpec) -> Result<Frame> {
    if !bbox.intersects_frame(frame.height(), frame.width()) {
        return Err(invalid(format!(
            "crop box {:?} lies outside the {}x{} frame",
            bbox,
            frame.height(),
            frame.width()
        )));
    }
    let (ph, pw) = (spec.height, spec.width);
    let mut pixels = Vec::with_capacity(ph * pw * 3);
    for i in 0..ph {
        let sy = source_coord(bbox.y, bbox.h, i, ph);
        for j in 0..pw {
            let sx = source_coord(bbox.x, bbox.w, j, pw);
            pixels.extend_from_slice(&sample_bilinear(frame, sy, sx));
        }
    }
    Frame::new(ph, pw, pixels, frame.index())
}

/// Resamples a binary mask the same way [`crop_patch`] resamples pixels,
/// thresholding the interpolated coverage at one half.
pub fn crop_mask(mask: &BinaryMask, bbox: &BoundingBox, spec: PatchSpec) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let at = |y: usize, x: usize| if mask.get(y, x) { 1.0 } else { 0.0 };
    BinaryMask::from_fn(spec.height, spec.width, |i, j| {
        let sy = source_coord(bbox.y, bbox.h, i, spec.height).clamp(0.0, (h - 1) as f64);
        let sx = source_coord(bbox.x, bbox.w, j, spec.width).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
            + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
        v >= 0.5
    })
}

/// Draws a placement box whose center is uniform in `roi` and whose height
/// is uniform in `[0.5, 1.5] * reference_height`, at the patch aspect.
pub fn sample_placement(
    scene: &FrameSequence,
    roi: &BoundingBox,
    reference_height: f64,
    spec: PatchSpec,
    rng_seed: u64,
) -> Result<BoundingBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_placement_with(scene, roi, reference_height, spec, &mut rng)
}

pub(crate) fn sample_placement_with<R: Rng>(
    scene: &FrameSequence,
    roi: &BoundingBox,
    reference_height: f64,
    spec: PatchSpec,
    rng: &mut R,
) -> Result<BoundingBox> {
    let (h, w) = scene
        .frame_size()
        .ok_or_else(|| invalid("placement in an empty scene"))?;
    if !roi.inside_frame(h, w) {
        return Err(invalid(format!(
            "roi {:?} exceeds the {}x{} scene",
            roi, h, w
        )));
    }
    if !(reference_height > 0.0) {
        return Err(invalid("reference object height must be positive"));
    }
    let min_h = 0.5 * reference_height;
    if roi.h < min_h || roi.w < min_h * spec.aspect() {
        return Err(invalid(format!(
            "roi {:?} is smaller than the minimum {}x{} placement",
            roi,
            min_h * spec.aspect(),
            min_h
        )));
    }
    let cx = roi.x + rng.random::<f64>() * roi.w;
    let cy = roi.y + rng.random::<f64>() * roi.h;
    let bh = reference_height * (0.5 + rng.random::<f64>());
    BoundingBox::from_center(cx, cy, bh * spec.aspect(), bh)
}

/// Rescales a trajectory by `target_height / traj[0].h`, anchoring the first
/// center at `anchor`: box extents and frame-to-frame displacements scale
/// by the same factor.
pub fn scale_trajectory(
    traj: &[BoundingBox],
    target_height: f64,
    anchor: (f64, f64),
) -> Result<Vec<BoundingBox>> {
    let first = traj.first().ok_or_else(|| invalid("empty trajectory"))?;
    if !(target_height > 0.0) {
        return Err(invalid(format!(
            "target height must be positive, got {}",
            target_height
        )));
    }
    let s = target_height / first.h;
    let (c0x, c0y) = first.center();
    traj.iter()
        .map(|b| {
            let (cx, cy) = b.center();
            BoundingBox::from_center(
                anchor.0 + s * (cx - c0x),
                anchor.1 + s * (cy - c0y),
                s * b.w,
                s * b.h,
            )
        })
        .collect()
}
