use autodiff::Tensor;

use crate::error::{invalid, Error, Result};

/// Smallest frame side accepted anywhere in the pipeline.
pub const MIN_FRAME_SIDE: usize = 8;

/// One RGB image with values in `[0, 1]`, stored row-major with interleaved
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    index: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, index: usize) -> Result<Self> {
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(invalid(format!(
                "frame {}x{} is smaller than {}x{}",
                height, width, MIN_FRAME_SIDE, MIN_FRAME_SIDE
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {}x{}x3 frame",
                pixels.len(),
                height,
                width
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {} outside [0, 1]", bad)));
        }
        Ok(Self {
            height,
            width,
            pixels,
            index,
        })
    }

    /// Builds a frame from `f(y, x, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        index: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, pixels, index)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, 0, |_, _, c| rgb[c])
    }

    /// Builds a frame from a `[N, 3, H, W]` tensor sample, clamping into
    /// `[0, 1]`.
    pub fn from_tensor(t: &Tensor, sample: usize, index: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 3 || sample >= s[0] {
            return Err(Error::Shape(format!(
                "cannot read sample {} of {:?} as an RGB frame",
                sample, s
            )));
        }
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let base = sample * 3 * plane;
        let d = t.data();
        let mut pixels = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                let v = d[base + c * plane + p];
                if !v.is_finite() {
                    return Err(invalid("non-finite value in network output"));
                }
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        Self::new(h, w, pixels, index)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[1, 3, H, W]` planar tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[c * plane + p] = self.pixels[p * 3 + c];
            }
        }
        Tensor::new(&[1, 3, self.height, self.width], data)
    }

    /// Stacks frames of equal size into a `[N, 3, H, W]` tensor.
    pub fn stack(frames: &[&Frame]) -> Result<Tensor> {
        let first = frames
            .first()
            .ok_or_else(|| invalid("cannot stack an empty frame list"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
        for f in frames {
            if f.height != h || f.width != w {
                return Err(Error::Shape(format!(
                    "frame {}x{} in a stack of {}x{}",
                    f.height, f.width, h, w
                )));
            }
            data.extend_from_slice(f.to_tensor().data());
        }
        Ok(Tensor::new(&[frames.len(), 3, h, w], data))
    }
}

/// Ordered frames of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(invalid(format!("fps must be positive, got {}", fps)));
        }
        for pair in frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(invalid(format!(
                    "frame indices not strictly increasing ({} then {})",
                    pair[0].index, pair[1].index
                )));
            }
            if !pair[0].same_size(&pair[1]) {
                return Err(Error::Shape("frames of one sequence differ in size".into()));
            }
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of the frames, if any.
    pub fn frame_size(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.height, f.width))
    }

    /// Frame with the given frame number.
    pub fn by_index(&self, index: usize) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels_and_tiny_frames() {
        assert!(Frame::filled(8, 8, [0.5, 1.2, 0.0]).is_err());
        assert!(Frame::filled(4, 8, [0.5, 0.5, 0.5]).is_err());
        assert!(Frame::filled(8, 8, [0.0, 1.0, 0.5]).is_ok());
    }

    #[test]
    fn tensor_round_trip() {
        let f = Frame::from_fn(8, 9, 3, |y, x, c| ((y * 9 + x) * 3 + c) as f64 / 216.0).unwrap();
        let t = f.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 8, 9]);
        assert_eq!(Frame::from_tensor(&t, 0, 3).unwrap(), f);
    }

    #[test]
    fn sequence_requires_increasing_indices() {
        let a = Frame::filled(8, 8, [0.1; 3]).unwrap();
        let b = a.clone().with_index(1);
        assert!(FrameSequence::new(vec![a.clone(), b.clone()], 10.0).is_ok());
        assert!(FrameSequence::new(vec![b, a], 10.0).is_err());
    }
}
