use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box in pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(invalid("bounding box has non-finite coordinates"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(invalid(format!(
                "bounding box extent {}x{} is not positive",
                w, h
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Overlap area with `other`.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Whether the box overlaps a `height x width` frame with positive area.
    pub fn intersects_frame(&self, height: usize, width: usize) -> bool {
        self.x < width as f64 && self.right() > 0.0 && self.y < height as f64 && self.bottom() > 0.0
    }

    pub fn inside_frame(&self, height: usize, width: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.right() <= width as f64
            && self.bottom() <= height as f64
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    /// Box grown by `frac` of its extent on every side, then widened or
    /// heightened about its center to the `height : width` aspect.
    pub fn with_margin_and_aspect(&self, frac: f64, height: usize, width: usize) -> BoundingBox {
        let (cx, cy) = self.center();
        let mut w = self.w * (1.0 + 2.0 * frac);
        let mut h = self.h * (1.0 + 2.0 * frac);
        let aspect = width as f64 / height as f64;
        if w / h < aspect {
            w = h * aspect;
        } else {
            h = w / aspect;
        }
        BoundingBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Boxes of one object, keyed by frame number.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub object_id: i64,
    pub boxes: BTreeMap<usize, BoundingBox>,
}

impl Track {
    pub fn new(object_id: i64) -> Self {
        Self {
            object_id,
            boxes: BTreeMap::new(),
        }
    }

    /// Frames `start..start + len` if the track covers all of them.
    pub fn covers(&self, start: usize, len: usize) -> bool {
        (start..start + len).all(|f| self.boxes.contains_key(&f))
    }

    /// Start frames of every fully-covered window of `len` frames.
    pub fn window_starts(&self, len: usize) -> Vec<usize> {
        self.boxes
            .keys()
            .copied()
            .filter(|&s| self.covers(s, len))
            .collect()
    }
}

/// Median box height over every annotated object-frame.
pub fn median_box_height(tracks: &[Track]) -> Option<f64> {
    let mut hs: Vec<f64> = tracks
        .iter()
        .flat_map(|t| t.boxes.values().map(|b| b.h))
        .collect();
    if hs.is_empty() {
        return None;
    }
    hs.sort_by(|a, b| a.total_cmp(b));
    let n = hs.len();
    Some(if n % 2 == 1 {
        hs[n / 2]
    } else {
        (hs[n / 2 - 1] + hs[n / 2]) / 2.0
    })
}

/// Resolution of the object and region patches all learning happens on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 64,
        }
    }
}

impl PatchSpec {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let spec = Self { height, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v < 16 || v % 2 != 0 {
                return Err(invalid(format!(
                    "patch {} must be even and at least 16, got {}",
                    name, v
                )));
            }
        }
        Ok(())
    }

    /// Width over height.
    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}
