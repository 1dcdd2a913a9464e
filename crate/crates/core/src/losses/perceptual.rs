use autodiff::{ConvSpec, Graph, NodeId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::Frame;
use crate::error::{invalid, Result};

/// Fixed feature maps for the perceptual distance.
pub trait FeatureExtractor: Send + Sync {
    /// Activations of every layer used by the distance, each `[N, C, H, W]`.
    fn features(&self, g: &mut Graph, x: NodeId) -> Vec<NodeId>;
}

/// The input itself as the only layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, _g: &mut Graph, x: NodeId) -> Vec<NodeId> {
        vec![x]
    }
}

/// Two ReLU convolution layers with frozen random weights: 3x3 stride 1
/// then 4x4 stride 2. Weights use He scaling so activations keep their
/// magnitude.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    layers: Vec<(Tensor, ConvSpec)>,
}

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |shape: [usize; 4]| {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let n = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid normal");
            Tensor::from_fn(&shape, |_| n.sample(&mut rng))
        };
        Self {
            layers: vec![
                (make([8, 3, 3, 3]), ConvSpec::new2d(1, 1)),
                (make([16, 8, 4, 4]), ConvSpec::new2d(2, 1)),
            ],
        }
    }
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        Self::new(0)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, g: &mut Graph, x: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (w, spec) in &self.layers {
            let wi = g.constant(w.clone());
            let c = g.conv(h, wi, None, *spec);
            h = g.relu(c);
            out.push(h);
        }
        out
    }
}

/// `sum_l |phi_l(a) - phi_l(b)|^2 / (C_l H_l W_l)` for single-sample inputs.
pub fn perceptual_graph(
    g: &mut Graph,
    extractor: &dyn FeatureExtractor,
    a: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let fa = extractor.features(g, a);
    let fb = extractor.features(g, b);
    if fa.is_empty() || fa.len() != fb.len() {
        return Err(invalid("feature extractor returned mismatched layer lists"));
    }
    let mut parts = Vec::with_capacity(fa.len());
    for (&x, &y) in fa.iter().zip(&fb) {
        if g.value(x).shape() != g.value(y).shape() || g.value(x).ndim() != 4 {
            return Err(invalid(format!(
                "feature layer shapes {:?} and {:?} differ",
                g.value(x).shape(),
                g.value(y).shape()
            )));
        }
        let d = g.sub(x, y);
        let sq = g.square(d);
        // Mean over C*H*W per sample; inputs here are single samples.
        let n = g.value(sq).shape()[0] as f64;
        let m = g.mean(sq);
        parts.push(g.scale(m, n));
    }
    let ones = vec![1.0; parts.len()];
    Ok(g.weighted_sum(&parts, &ones))
}

pub fn perceptual_distance(a: &Frame, b: &Frame, extractor: &dyn FeatureExtractor) -> Result<f64> {
    if !a.same_size(b) {
        return Err(invalid(
            "perceptual distance of frames with different sizes",
        ));
    }
    let mut g = Graph::new();
    let ai = g.constant(a.to_tensor());
    let bi = g.constant(b.to_tensor());
    let d = perceptual_graph(&mut g, extractor, ai, bi)?;
    Ok(g.value(d).item())
}
