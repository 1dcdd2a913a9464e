//! Insertion quality metrics, detector recall and non-learned compositing
//! baselines.

mod detector;
mod poisson;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use detector::{
    train_window_detector, Detection, Detector, GroundTruthDetector, WindowDetector,
    WindowDetectorConfig,
};
pub use poisson::{poisson_blend, poisson_residual, poisson_solve, PoissonField, POISSON_TOL};

use crate::dataio::{BinaryMask, BoundingBox, Frame, FrameSequence, PatchSpec, VideoClip};
use crate::error::{invalid, Error, Result};
use crate::inference::{render_with, CompositeResult, InsertionRequest};

/// Detections below this score are ignored when counting recall.
pub const DETECTION_SCORE_CUTOFF: f64 = 0.5;

/// Pixels of `v` strictly closer (RGB Euclidean) to `u` than to `r`.
pub fn delta_mask(v: &Frame, u: &Frame, r: &Frame) -> Result<BinaryMask> {
    if !v.same_size(u) || !v.same_size(r) {
        return Err(invalid("delta mask needs three frames of one size"));
    }
    let (vp, up, rp) = (v.pixels(), u.pixels(), r.pixels());
    Ok(BinaryMask::from_fn(v.height(), v.width(), |y, x| {
        let i = (y * v.width() + x) * 3;
        let du: f64 = (0..3).map(|c| (vp[i + c] - up[i + c]).powi(2)).sum();
        let dr: f64 = (0..3).map(|c| (vp[i + c] - rp[i + c]).powi(2)).sum();
        du < dr
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OisReport {
    pub precision: f64,
    pub recall: f64,
    pub ois: f64,
}

impl OisReport {
    /// Harmonic mean of `precision` and `recall`, 0 when both are 0.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let s = precision + recall;
        let ois = if s > 0.0 {
            2.0 * precision * recall / s
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            ois,
        }
    }
}

/// Overlap of the object mask `s_a` with the changed-toward-object mask.
pub fn ois_score(s_a: &BinaryMask, s_delta: &BinaryMask) -> Result<OisReport> {
    if !s_a.same_size(s_delta.height(), s_delta.width()) {
        return Err(invalid(format!(
            "object mask is {}x{} but the delta mask is {}x{}",
            s_a.height(),
            s_a.width(),
            s_delta.height(),
            s_delta.width()
        )));
    }
    let both = s_a
        .bits()
        .iter()
        .zip(s_delta.bits())
        .filter(|(a, d)| **a && **d)
        .count() as f64;
    let (na, nd) = (s_a.count(), s_delta.count());
    let p = if nd == 0 { 0.0 } else { both / nd as f64 };
    let r = if na == 0 { 0.0 } else { both / na as f64 };
    Ok(OisReport::from_pr(p, r))
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `u` on the mask, `r` elsewhere.
pub fn copy_paste_baseline(u: &Frame, r: &Frame, s_a: &BinaryMask) -> Result<Frame> {
    if !u.same_size(r) || !s_a.same_size(u.height(), u.width()) {
        return Err(invalid(
            "copy-paste needs a source, target and mask of one size",
        ));
    }
    let mut px = r.pixels().to_vec();
    for (i, &on) in s_a.bits().iter().enumerate() {
        if on {
            px[i * 3..i * 3 + 3].copy_from_slice(&u.pixels()[i * 3..i * 3 + 3]);
        }
    }
    Frame::new(u.height(), u.width(), px, r.index())
}

/// Non-learned ways of producing the inserted patch from the object mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compositor {
    CopyPaste,
    Poisson,
}

impl std::str::FromStr for Compositor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "copy_paste" => Ok(Compositor::CopyPaste),
            "poisson" => Ok(Compositor::Poisson),
            other => Err(invalid(format!("unknown compositor `{}`", other))),
        }
    }
}

/// The mask with its outermost ring of pixels cleared.
pub fn clear_border(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x) && y > 0 && x > 0 && y + 1 < h && x + 1 < w
    })
}

/// Renders `request` like the learned models, producing each patch from the
/// source object mask instead. Poisson blending drops mask pixels on the
/// patch border, where the equation has no neighbors to use.
pub fn render_baseline(
    kind: Compositor,
    spec: PatchSpec,
    source: &VideoClip,
    target: &FrameSequence,
    request: &InsertionRequest,
) -> Result<CompositeResult> {
    render_with(spec, source, target, request, |_, inp, _| {
        let mask = inp.u_a_mask.as_ref().ok_or_else(|| {
            invalid(format!(
                "object {} has no mask to composite with",
                request.object_id
            ))
        })?;
        match kind {
            Compositor::CopyPaste => copy_paste_baseline(&inp.u_a, &inp.r_b, mask),
            Compositor::Poisson => {
                let inner = clear_border(mask);
                if inner.count() == 0 {
                    return Ok(inp.r_b.clone());
                }
                poisson_blend(&inp.u_a, &inp.r_b, &inner)
            }
        }
    })
}

/// OIS of every rendered frame, with the source object mask as `s_A`.
pub fn insertion_ois(result: &CompositeResult) -> Result<Vec<OisReport>> {
    result
        .patches
        .frames()
        .iter()
        .zip(&result.inputs)
        .map(|(v, inp)| {
            let s_a = inp.u_a_mask.as_ref().ok_or_else(|| {
                invalid(format!("frame {} has no object mask for OIS", v.index()))
            })?;
            ois_score(s_a, &delta_mask(v, &inp.u_a, &inp.r_b)?)
        })
        .collect()
}

/// For every result and rendered frame, whether some detection scoring at
/// least [`DETECTION_SCORE_CUTOFF`] overlaps the inserted region with IoU at
/// least `iou_threshold`.
pub fn detector_matches(
    results: &[CompositeResult],
    detector: &dyn Detector,
    iou_threshold: f64,
) -> Result<Vec<Vec<bool>>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(invalid(format!(
            "IoU threshold must be in (0, 1], got {}",
            iou_threshold
        )));
    }
    results
        .iter()
        .enumerate()
        .map(|(ri, res)| {
            res.video
                .frames()
                .iter()
                .zip(&res.per_frame_regions)
                .map(|(frame, region)| {
                    let dets =
                        detector
                            .detect(frame, Some(region))
                            .map_err(|e| Error::Detector {
                                result: ri,
                                frame: frame.index(),
                                message: e.to_string(),
                            })?;
                    Ok(dets.iter().any(|d| {
                        d.score >= DETECTION_SCORE_CUTOFF && iou(&d.bbox, region) >= iou_threshold
                    }))
                })
                .collect()
        })
        .collect()
}

/// Fraction of inserted regions, over all frames of all results, that the
/// detector finds.
pub fn detector_recall(
    results: &[CompositeResult],
    detector: &dyn Detector,
    iou_threshold: f64,
) -> Result<f64> {
    let matches = detector_matches(results, detector, iou_threshold)?;
    let total: usize = matches.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(invalid("no rendered frames to measure recall on"));
    }
    let hit = matches.iter().flatten().filter(|m| **m).count();
    Ok(hit as f64 / total as f64)
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: String,
    pub precision: f64,
    pub recall: f64,
    pub ois: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched: Option<bool>,
}

impl SampleRecord {
    pub fn new(sample: impl Into<String>, report: OisReport, matched: Option<bool>) -> Self {
        Self {
            sample: sample.into(),
            precision: report.precision,
            recall: report.recall,
            ois: report.ois,
            matched,
        }
    }
}

/// Means over a set of [`SampleRecord`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub samples: usize,
    pub precision: f64,
    pub recall: f64,
    pub ois: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector_recall: Option<f64>,
}

impl EvalSummary {
    pub fn from_records(method: impl Into<String>, records: &[SampleRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let matched: Vec<bool> = records.iter().filter_map(|r| r.matched).collect();
        Self {
            method: method.into(),
            samples: records.len(),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            ois: mean(|r| r.ois),
            detector_recall: (!matched.is_empty())
                .then(|| matched.iter().filter(|m| **m).count() as f64 / matched.len() as f64),
        }
    }
}

/// One JSON line per record, then one `{"summary": ...}` line.
pub fn write_report(
    records: &[SampleRecord],
    summary: &EvalSummary,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    for r in records {
        writeln!(
            out,
            "{}",
            serde_json::to_string(r).expect("record serializes")
        )?;
    }
    writeln!(out, "{}", serde_json::json!({ "summary": summary }))
}
