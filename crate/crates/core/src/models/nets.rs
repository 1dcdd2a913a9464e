//! Parameter initialization and graph construction for every network.
//!
//! Images enter as `[N, 3, H, W]` tensors; video clips as `[N, 3, T, H, W]`.
//! Discriminators return raw logits of shape `[N, 1]`.

use autodiff::{ConvSpec, Graph, NodeId, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Bound, ParamSet};
use super::{DiscConfig, GeneratorConfig};

pub const KERNEL: usize = 4;
pub const LEAK: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

fn gaussian(shape: &[usize], mean: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(mean, INIT_STD).expect("valid normal");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

fn add_norm(p: &mut ParamSet, name: &str, channels: usize, rng: &mut impl Rng) {
    p.insert(format!("{}.gamma", name), gaussian(&[channels], 1.0, rng));
    p.insert(format!("{}.beta", name), Tensor::zeros(&[channels]));
}

fn add_conv(p: &mut ParamSet, name: &str, shape: &[usize], bias: usize, rng: &mut impl Rng) {
    p.insert(format!("{}.w", name), gaussian(shape, 0.0, rng));
    if bias > 0 {
        p.insert(format!("{}.b", name), Tensor::zeros(&[bias]));
    }
}

fn stride2() -> ConvSpec {
    ConvSpec::new2d(2, 1)
}

/// Encoder levels with instance normalization: all but the first and the
/// bottleneck.
fn normalized_level(cfg: &GeneratorConfig, k: usize) -> bool {
    k > 0 && k + 1 < cfg.n_levels
}

pub fn init_generator(p: &mut ParamSet, net: &str, cfg: &GeneratorConfig, rng: &mut impl Rng) {
    let l = cfg.n_levels;
    for k in 0..l {
        let cin = if k == 0 { 3 } else { cfg.channels(k - 1) };
        let cout = cfg.channels(k);
        let name = format!("{}.enc{}", net, k);
        add_conv(p, &name, &[cout, cin, KERNEL, KERNEL], cout, rng);
        if normalized_level(cfg, k) {
            add_norm(p, &name, cout, rng);
        }
    }
    for k in (0..l).rev() {
        let cin = if k + 1 == l {
            cfg.channels(k)
        } else {
            2 * cfg.channels(k)
        };
        let cout = if k == 0 { 3 } else { cfg.channels(k - 1) };
        let name = format!("{}.dec{}", net, k);
        add_conv(p, &name, &[cin, cout, KERNEL, KERNEL], cout, rng);
        if k > 0 {
            add_norm(p, &name, cout, rng);
        }
        if cfg.history_len > 0 {
            p.insert(
                format!("{}.hist.w", name),
                gaussian(&[cfg.channels(k), cout, KERNEL, KERNEL], 0.0, rng),
            );
        }
    }
}

/// Per-level encoder activations, finest first.
pub fn encode(
    g: &mut Graph,
    b: &Bound,
    net: &str,
    cfg: &GeneratorConfig,
    x: NodeId,
) -> Vec<NodeId> {
    let mut feats = Vec::with_capacity(cfg.n_levels);
    let mut h = x;
    for k in 0..cfg.n_levels {
        let name = format!("{}.enc{}", net, k);
        h = g.conv(
            h,
            b.id(&format!("{}.w", name)),
            Some(b.id(&format!("{}.b", name))),
            stride2(),
        );
        if normalized_level(cfg, k) {
            h = g.instance_norm(
                h,
                b.id(&format!("{}.gamma", name)),
                b.id(&format!("{}.beta", name)),
                NORM_EPS,
            );
        }
        h = g.leaky_relu(h, LEAK);
        feats.push(h);
    }
    feats
}

pub struct GeneratorNodes {
    /// `[N, 3, H, W]` in `(0, 1)`.
    pub output: NodeId,
    /// `[N, E]` bottleneck average.
    pub embedding: NodeId,
}

/// U-net forward. `history` holds `history_len` inputs of the same shape as
/// `x`; each is encoded by the shared encoder and the per-level weighted sum
/// enters the matching decoder level next to the skip connection.
pub fn generator(
    g: &mut Graph,
    b: &Bound,
    net: &str,
    cfg: &GeneratorConfig,
    x: NodeId,
    history: &[NodeId],
) -> GeneratorNodes {
    assert_eq!(history.len(), cfg.history_len, "history length");
    let l = cfg.n_levels;
    let enc = encode(g, b, net, cfg, x);
    let fused: Option<Vec<NodeId>> = if history.is_empty() {
        None
    } else {
        let per_frame: Vec<Vec<NodeId>> =
            history.iter().map(|&h| encode(g, b, net, cfg, h)).collect();
        Some(
            (0..l)
                .map(|k| {
                    let level: Vec<NodeId> = per_frame.iter().map(|f| f[k]).collect();
                    g.weighted_sum(&level, &cfg.history_weights)
                })
                .collect(),
        )
    };
    let mut d = enc[l - 1];
    for k in (0..l).rev() {
        let name = format!("{}.dec{}", net, k);
        let inp = if k + 1 == l {
            enc[l - 1]
        } else {
            g.concat(&[d, enc[k]], 1)
        };
        let mut y = g.conv_transpose(
            inp,
            b.id(&format!("{}.w", name)),
            Some(b.id(&format!("{}.b", name))),
            stride2(),
        );
        if let Some(f) = &fused {
            let yh = g.conv_transpose(f[k], b.id(&format!("{}.hist.w", name)), None, stride2());
            y = g.add(y, yh);
        }
        if k > 0 {
            y = g.instance_norm(
                y,
                b.id(&format!("{}.gamma", name)),
                b.id(&format!("{}.beta", name)),
                NORM_EPS,
            );
            y = g.relu(y);
        } else {
            y = g.sigmoid(y);
        }
        d = y;
    }
    let embedding = g.mean_spatial(enc[l - 1]);
    GeneratorNodes {
        output: d,
        embedding,
    }
}

fn disc_channels(cfg: &DiscConfig, k: usize) -> usize {
    cfg.base_filters << k
}

/// Image discriminator over `3 + cond_channels` input channels.
pub fn init_image_disc(
    p: &mut ParamSet,
    net: &str,
    cfg: &DiscConfig,
    cond_channels: usize,
    rng: &mut impl Rng,
) {
    for k in 0..cfg.n_layers {
        let cin = if k == 0 {
            3 + cond_channels
        } else {
            disc_channels(cfg, k - 1)
        };
        let cout = disc_channels(cfg, k);
        let name = format!("{}.conv{}", net, k);
        add_conv(p, &name, &[cout, cin, KERNEL, KERNEL], cout, rng);
        if k > 0 {
            add_norm(p, &name, cout, rng);
        }
    }
    let last = disc_channels(cfg, cfg.n_layers - 1);
    add_conv(p, &format!("{}.head", net), &[1, last], 1, rng);
}

fn disc_trunk(
    g: &mut Graph,
    b: &Bound,
    net: &str,
    cfg: &DiscConfig,
    mut h: NodeId,
    spec: ConvSpec,
) -> NodeId {
    for k in 0..cfg.n_layers {
        let name = format!("{}.conv{}", net, k);
        h = g.conv(
            h,
            b.id(&format!("{}.w", name)),
            Some(b.id(&format!("{}.b", name))),
            spec,
        );
        if k > 0 {
            h = g.instance_norm(
                h,
                b.id(&format!("{}.gamma", name)),
                b.id(&format!("{}.beta", name)),
                NORM_EPS,
            );
        }
        h = g.leaky_relu(h, LEAK);
    }
    let pooled = g.mean_spatial(h);
    g.linear(
        pooled,
        b.id(&format!("{}.head.w", net)),
        Some(b.id(&format!("{}.head.b", net))),
    )
}

/// Logits of the image discriminator; `cond` is an `[N, E]` embedding
/// tiled over the image grid, or `None` for the unconditioned variant.
pub fn image_disc(
    g: &mut Graph,
    b: &Bound,
    net: &str,
    cfg: &DiscConfig,
    image: NodeId,
    cond: Option<NodeId>,
) -> NodeId {
    let input = match cond {
        Some(e) => {
            let s = g.value(image).shape().to_vec();
            let tiled = g.tile(e, &s[2..]);
            g.concat(&[image, tiled], 1)
        }
        None => image,
    };
    disc_trunk(g, b, net, cfg, input, stride2())
}

pub fn init_embed_disc(
    p: &mut ParamSet,
    net: &str,
    cfg: &DiscConfig,
    embed_len: usize,
    rng: &mut impl Rng,
) {
    let hdim = cfg.embed_hidden;
    add_conv(p, &format!("{}.fc0", net), &[hdim, embed_len], hdim, rng);
    add_conv(p, &format!("{}.fc1", net), &[hdim, hdim], hdim, rng);
    add_conv(p, &format!("{}.head", net), &[1, hdim], 1, rng);
}

/// Logits of the embedding discriminator on `[N, E]` embeddings.
pub fn embed_disc(g: &mut Graph, b: &Bound, net: &str, e: NodeId) -> NodeId {
    let mut h = e;
    for layer in ["fc0", "fc1"] {
        h = g.linear(
            h,
            b.id(&format!("{}.{}.w", net, layer)),
            Some(b.id(&format!("{}.{}.b", net, layer))),
        );
        h = g.leaky_relu(h, LEAK);
    }
    g.linear(
        h,
        b.id(&format!("{}.head.w", net)),
        Some(b.id(&format!("{}.head.b", net))),
    )
}

pub const VIDEO_KERNEL: [usize; 3] = [3, KERNEL, KERNEL];

pub fn init_video_disc(
    p: &mut ParamSet,
    net: &str,
    cfg: &DiscConfig,
    cond_channels: usize,
    rng: &mut impl Rng,
) {
    for k in 0..cfg.n_layers {
        let cin = if k == 0 {
            3 + cond_channels
        } else {
            disc_channels(cfg, k - 1)
        };
        let cout = disc_channels(cfg, k);
        let name = format!("{}.conv{}", net, k);
        let [kd, kh, kw] = VIDEO_KERNEL;
        add_conv(p, &name, &[cout, cin, kd, kh, kw], cout, rng);
        if k > 0 {
            add_norm(p, &name, cout, rng);
        }
    }
    let last = disc_channels(cfg, cfg.n_layers - 1);
    add_conv(p, &format!("{}.head", net), &[1, last], 1, rng);
}

/// Logits of the spatio-temporal discriminator. `clip` is `[N, 3, T, H, W]`
/// and `cond` holds one `[N, E]` embedding per frame.
pub fn video_disc(
    g: &mut Graph,
    b: &Bound,
    net: &str,
    cfg: &DiscConfig,
    clip: NodeId,
    cond: &[NodeId],
) -> NodeId {
    let s = g.value(clip).shape().to_vec();
    assert_eq!(s[2], cond.len(), "one conditioning embedding per frame");
    let mut slices = Vec::with_capacity(cond.len());
    for &e in cond {
        let tiled = g.tile(e, &s[3..]);
        let es = g.value(tiled).shape().to_vec();
        slices.push(g.reshape(tiled, &[es[0], es[1], 1, es[2], es[3]]));
    }
    let input = if slices.is_empty() {
        clip
    } else {
        let c = g.concat(&slices, 2);
        g.concat(&[clip, c], 1)
    };
    disc_trunk(g, b, net, cfg, input, ConvSpec::new3d([1, 2, 2], [1, 1, 1]))
}

/// Stacks `T` frame tensors `[N, 3, H, W]` into a clip `[N, 3, T, H, W]`.
pub fn stack_time(g: &mut Graph, frames: &[NodeId]) -> NodeId {
    let parts: Vec<NodeId> = frames
        .iter()
        .map(|&f| {
            let s = g.value(f).shape().to_vec();
            g.reshape(f, &[s[0], s[1], 1, s[2], s[3]])
        })
        .collect();
    g.concat(&parts, 2)
}
