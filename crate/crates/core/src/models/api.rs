//! Frame-level entry points wrapping the graph builders.

use autodiff::{Graph, Tensor};

use super::nets;
use super::params::Bound;
use super::{GeneratorConfig, ModelBundle};
use crate::dataio::{Frame, FrameSequence};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput {
    pub output: Frame,
    pub embedding: Vec<f64>,
}

fn check_patch(bundle: &ModelBundle, f: &Frame, what: &str) -> Result<()> {
    let p = bundle.config.patch();
    if f.height() != p.height || f.width() != p.width {
        return Err(invalid(format!(
            "{} is {}x{}, model patch is {}x{}",
            what,
            f.height(),
            f.width(),
            p.height,
            p.width
        )));
    }
    Ok(())
}

fn run_generator(
    bundle: &ModelBundle,
    cfg: &GeneratorConfig,
    blended: &Frame,
    history: &[&Frame],
) -> Result<GeneratorOutput> {
    check_patch(bundle, blended, "generator input")?;
    for h in history {
        check_patch(bundle, h, "history frame")?;
    }
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &bundle.params, &["g"], false);
    let x = g.constant(blended.to_tensor());
    let hist: Vec<_> = history.iter().map(|h| g.constant(h.to_tensor())).collect();
    let out = nets::generator(&mut g, &b, "g", cfg, x, &hist);
    Ok(GeneratorOutput {
        output: Frame::from_tensor(g.value(out.output), 0, blended.index())?,
        embedding: g.value(out.embedding).data().to_vec(),
    })
}

/// Runs the generator without a history path.
///
/// For a bundle configured with history this uses only the shared encoder
/// and decoder weights, which is the image-stage network.
pub fn forward_generator_image(bundle: &ModelBundle, blended: &Frame) -> Result<GeneratorOutput> {
    run_generator(bundle, &bundle.generator().image_variant(), blended, &[])
}

/// Runs the generator with `history_len` previous frames, oldest first.
pub fn forward_generator_video(
    bundle: &ModelBundle,
    blended: &Frame,
    history: &[&Frame],
) -> Result<GeneratorOutput> {
    let n = bundle.generator().history_len;
    if history.len() != n {
        return Err(invalid(format!(
            "{} history frames for history length {}",
            history.len(),
            n
        )));
    }
    run_generator(bundle, bundle.generator(), blended, history)
}

/// `sum_n w[n] * features[n]`, elementwise.
pub fn combine_history_features(features: &[&Tensor], w: &[f64]) -> Result<Tensor> {
    if features.is_empty() || features.len() != w.len() {
        return Err(invalid(format!(
            "{} feature maps with {} weights",
            features.len(),
            w.len()
        )));
    }
    let shape = features[0].shape();
    if features.iter().any(|f| f.shape() != shape) {
        return Err(Error::Shape("history feature maps differ in shape".into()));
    }
    let mut g = Graph::new();
    let ids: Vec<_> = features.iter().map(|f| g.constant((*f).clone())).collect();
    let out = g.weighted_sum(&ids, w);
    Ok(g.value(out).clone())
}

/// `[E, h, w]` array holding `e` at every location.
pub fn tile_embedding(e: &[f64], h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 || e.is_empty() {
        return Err(invalid("tile_embedding needs a non-empty vector and grid"));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, e.len()], e.to_vec()));
    let t = g.tile(x, &[h, w]);
    Ok(g.value(t).clone().reshape(&[e.len(), h, w]))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_embedding(bundle: &ModelBundle, e: &[f64]) -> Result<()> {
    let want = bundle.generator().embedding_len();
    if e.len() != want {
        return Err(invalid(format!(
            "embedding of length {}, expected {}",
            e.len(),
            want
        )));
    }
    Ok(())
}

/// Image discriminator probability. `conditioning` is the embedding to
/// tile; it must be present exactly when the discriminator is conditional.
pub fn score_image_disc(
    bundle: &ModelBundle,
    image: &Frame,
    conditioning: Option<&[f64]>,
) -> Result<f64> {
    check_patch(bundle, image, "discriminator input")?;
    let conv0 = bundle
        .params
        .get("di.conv0.w")
        .ok_or_else(|| invalid("bundle has no image discriminator"))?;
    let conditional = conv0.shape()[1] > 3;
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &bundle.params, &["di"], false);
    let x = g.constant(image.to_tensor());
    let cond = match (conditional, conditioning) {
        (true, Some(e)) => {
            check_embedding(bundle, e)?;
            Some(g.constant(Tensor::new(&[1, e.len()], e.to_vec())))
        }
        (false, None) => None,
        (true, None) => return Err(invalid("conditional discriminator needs an embedding")),
        (false, Some(_)) => return Err(invalid("unconditioned discriminator given an embedding")),
    };
    let logit = nets::image_disc(&mut g, &b, "di", &bundle.config.disc, x, cond);
    Ok(sigmoid(g.value(logit).item()))
}

pub fn score_embedding_disc(bundle: &ModelBundle, e: &[f64]) -> Result<f64> {
    check_embedding(bundle, e)?;
    if !bundle.params.has_net("de") {
        return Err(invalid("bundle has no embedding discriminator"));
    }
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &bundle.params, &["de"], false);
    let x = g.constant(Tensor::new(&[1, e.len()], e.to_vec()));
    let logit = nets::embed_disc(&mut g, &b, "de", x);
    Ok(sigmoid(g.value(logit).item()))
}

/// Video discriminator probability on a clip of exactly `video_window`
/// frames with one conditioning embedding per frame.
pub fn score_video_disc(
    bundle: &ModelBundle,
    clip: &FrameSequence,
    conditioning: &[Vec<f64>],
) -> Result<f64> {
    let window = bundle.config.disc.video_window;
    if clip.len() != window {
        return Err(invalid(format!(
            "clip of {} frames, video window is {}",
            clip.len(),
            window
        )));
    }
    if conditioning.len() != window {
        return Err(invalid(format!(
            "{} conditioning vectors for {} frames",
            conditioning.len(),
            window
        )));
    }
    if !bundle.params.has_net("dv") {
        return Err(invalid("bundle has no video discriminator"));
    }
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &bundle.params, &["dv"], false);
    let mut frames = Vec::with_capacity(window);
    for f in clip.frames() {
        check_patch(bundle, f, "clip frame")?;
        frames.push(g.constant(f.to_tensor()));
    }
    let mut cond = Vec::with_capacity(window);
    for e in conditioning {
        check_embedding(bundle, e)?;
        cond.push(g.constant(Tensor::new(&[1, e.len()], e.clone())));
    }
    let x = nets::stack_time(&mut g, &frames);
    let logit = nets::video_disc(&mut g, &b, "dv", &bundle.config.disc, x, &cond);
    Ok(sigmoid(g.value(logit).item()))
}
