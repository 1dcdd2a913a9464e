//! Acceptance checks. Prints one `PASS` or `FAIL` line per criterion.
//!
//! Pass substrings as arguments to run only the matching criteria, e.g.
//! `cargo test -p vins-cli --test acceptance -- poisson`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, ensure, Result};
use autodiff::{ConvSpec, Graph, NodeId, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vins::dataio::synth::generate_clip;
use vins::dataio::{
    generate_sprite_dataset, BinaryMask, BoundingBox, Frame, PatchSpec, SpriteConfig, VideoClip,
};
use vins::evaluation::{
    detector_recall, insertion_ois, iou, ois_score, poisson_residual, poisson_solve,
    train_window_detector, OisReport, WindowDetectorConfig,
};
use vins::inference::{plan_insertions, render_insertion, CompositeResult, InsertionRequest};
use vins::losses::{
    l1_mean, nll_fake, nll_real, perceptual_distance, perceptual_graph, reconstruction_loss,
    BaselineObjective, FeatureExtractor, ImageObjective, Objective, RandomConvExtractor,
    VideoObjective,
};
use vins::models::{Bound, DiscConfig, GeneratorConfig, Method, ModelBundle, ModelConfig};
use vins::pairing::{
    blend, make_mask, make_sequence_batch, make_training_batch, BlendMask, MaskCoverage,
};
use vins::pairing::{PatchSources, SequenceBatch, TrainingBatch};
use vins::training::{train, train_step_image, train_step_video, Stage, TrainConfig, TrainState};

fn random_frame(rng: &mut impl Rng, h: usize, w: usize) -> Frame {
    Frame::from_fn(h, w, 0, |_, _, _| rng.random::<f64>()).unwrap()
}

fn random_mask(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random::<f64>() < p)
}

// ---------------------------------------------------------------- formulas

struct TestExtractor {
    w: Tensor,
}

impl FeatureExtractor for TestExtractor {
    fn features(&self, g: &mut Graph, x: NodeId) -> Vec<NodeId> {
        let w = g.constant(self.w.clone());
        let c = g.conv(x, w, None, ConvSpec::new2d(1, 1));
        vec![x, g.relu(c)]
    }
}

/// Zero-padded 3x3 convolution followed by ReLU, channel-major output.
fn conv_relu_loop(f: &Frame, w: &Tensor) -> Vec<f64> {
    let (h, wd, co) = (f.height(), f.width(), w.shape()[0]);
    let mut out = vec![0.0; co * h * wd];
    for o in 0..co {
        for y in 0..h {
            for x in 0..wd {
                let mut s = 0.0;
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) =
                                (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            s += w.data()[((o * 3 + c) * 3 + ky) * 3 + kx]
                                * f.get(yy as usize, xx as usize, c);
                        }
                    }
                }
                out[(o * h + y) * wd + x] = s.max(0.0);
            }
        }
    }
    out
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn formula_exactness() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = BTreeMap::new();
    let mut track = |name: &str, err: f64| {
        let e = worst.entry(name.to_string()).or_insert(0.0f64);
        *e = e.max(err);
    };

    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..24), rng.random_range(8..24));
        let u = random_frame(&mut rng, h, w);
        let r = random_frame(&mut rng, h, w);
        let bits: Vec<f64> = (0..h * w)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let m = BlendMask::from_values(h, w, bits.clone())?;
        let got = blend(&u, &r, &m)?;
        let mut err = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let mv = bits[y * w + x];
                for c in 0..3 {
                    let want = u.get(y, x, c) * mv / 2.0 + r.get(y, x, c) * (1.0 - mv / 2.0);
                    err = err.max((got.get(y, x, c) - want).abs());
                }
            }
        }
        track("blend", err);
    }

    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..20), rng.random_range(8..20));
        let a = random_frame(&mut rng, h, w);
        let b = random_frame(&mut rng, h, w);
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    acc += (a.get(y, x, c) - b.get(y, x, c)).abs();
                }
            }
        }
        track(
            "reconstruction",
            (reconstruction_loss(&a, &b)? - acc / (h * w * 3) as f64).abs(),
        );
    }

    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..14), rng.random_range(8..14));
        let a = random_frame(&mut rng, h, w);
        let b = random_frame(&mut rng, h, w);
        let wt = Tensor::from_fn(&[2, 3, 3, 3], |_| rng.random::<f64>() - 0.5);
        let raw = mean_sq(a.pixels(), b.pixels());
        let conv = mean_sq(&conv_relu_loop(&a, &wt), &conv_relu_loop(&b, &wt));
        let got = perceptual_distance(&a, &b, &TestExtractor { w: wt })?;
        track("perceptual", (got - (raw + conv)).abs());
    }

    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..24), rng.random_range(8..24));
        let (pa, pd) = (rng.random(), rng.random());
        let a = random_mask(&mut rng, h, w, pa);
        let d = random_mask(&mut rng, h, w, pd);
        let (mut both, mut na, mut nd) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                na += a.get(y, x) as u8 as f64;
                nd += d.get(y, x) as u8 as f64;
                both += (a.get(y, x) && d.get(y, x)) as u8 as f64;
            }
        }
        let p = if nd > 0.0 { both / nd } else { 0.0 };
        let rc = if na > 0.0 { both / na } else { 0.0 };
        let f = if p + rc > 0.0 {
            2.0 * p * rc / (p + rc)
        } else {
            0.0
        };
        let got = ois_score(&a, &d)?;
        track(
            "ois",
            (got.precision - p)
                .abs()
                .max((got.recall - rc).abs())
                .max((got.ois - f).abs()),
        );
    }

    for _ in 0..100 {
        let mut int_box = || {
            let (x, y) = (rng.random_range(0..20u32), rng.random_range(0..20u32));
            let (w, h) = (rng.random_range(1..12u32), rng.random_range(1..12u32));
            (x, y, w, h)
        };
        let (a, b) = (int_box(), int_box());
        let inside = |bx: (u32, u32, u32, u32), x: u32, y: u32| {
            x >= bx.0 && x < bx.0 + bx.2 && y >= bx.1 && y < bx.1 + bx.3
        };
        let (mut inter, mut union) = (0.0, 0.0);
        for y in 0..40 {
            for x in 0..40 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u8 as f64;
                union += (ia || ib) as u8 as f64;
            }
        }
        let to_box = |bx: (u32, u32, u32, u32)| {
            BoundingBox::new(bx.0 as f64, bx.1 as f64, bx.2 as f64, bx.3 as f64)
        };
        track("iou", (iou(&to_box(a)?, &to_box(b)?) - inter / union).abs());
    }

    let tol = [
        ("blend", 1e-12),
        ("reconstruction", 1e-9),
        ("perceptual", 1e-9),
        ("ois", 1e-12),
        ("iou", 1e-12),
    ];
    let detail: Vec<String> = tol
        .iter()
        .map(|(k, _)| format!("{} {:.1e}", k, worst[*k]))
        .collect();
    for (k, t) in tol {
        ensure!(
            worst[k] < t,
            "{} error {:e} exceeds {:e}; {}",
            k,
            worst[k],
            t,
            detail.join(", ")
        );
    }
    Ok(format!(
        "max errors over 100 instances each: {}",
        detail.join(", ")
    ))
}

fn published_ois() -> Result<String> {
    let r = OisReport::from_pr(0.85, 0.72);
    ensure!(
        (r.ois - 0.78).abs() <= 0.005,
        "F1(0.85, 0.72) = {:.4}",
        r.ois
    );
    Ok(format!("F1(0.85, 0.72) = {:.4}", r.ois))
}

// --------------------------------------------------------------- gradients

fn rel_close(a: f64, fd: f64) -> bool {
    let err = (a - fd).abs();
    err < 1e-3 * a.abs().max(fd.abs()) || err < 1e-7
}

fn fd_input(
    x: &Tensor,
    n_coords: usize,
    seed: u64,
    build: impl Fn(&mut Graph, NodeId) -> NodeId,
) -> Result<usize> {
    let mut g = Graph::new();
    let xi = g.variable(x.clone());
    let out = build(&mut g, xi);
    let analytic = g
        .backward(out)
        .get(xi)
        .ok_or_else(|| anyhow!("no gradient reached the input"))?
        .clone();
    let eval = |t: Tensor| {
        let mut g = Graph::new();
        let xi = g.constant(t);
        let out = build(&mut g, xi);
        g.value(out).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    for _ in 0..n_coords {
        let i = rng.random_range(0..x.len());
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = analytic.data()[i];
        ensure!(
            rel_close(a, fd),
            "input coordinate {}: analytic {} vs numeric {}",
            i,
            a,
            fd
        );
    }
    Ok(n_coords)
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    D,
    G,
}

fn side_total(obj: &dyn Objective, bundle: &ModelBundle, side: Side, seed: u64) -> Result<f64> {
    let r = obj.evaluate(bundle, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(match side {
        Side::D => r.d_losses.total,
        Side::G => r.g_loss.total,
    })
}

fn side_grads(
    obj: &dyn Objective,
    bundle: &ModelBundle,
    side: Side,
    seed: u64,
) -> Result<BTreeMap<String, Tensor>> {
    let mut g = Graph::new();
    let mut b = Bound::default();
    b.bind(&mut g, &bundle.params, obj.generator_nets(), true);
    b.bind(&mut g, &bundle.params, obj.disc_nets(), true);
    let fwd = obj.forward(&mut g, &b, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let terms = match side {
        Side::D => obj.d_terms(&mut g, &b, &fwd)?,
        Side::G => obj.g_terms(&mut g, &b, &fwd)?,
    };
    let total = terms.total(&mut g);
    let grads = g.backward(total);
    Ok(b.iter()
        .map(|(k, &id)| {
            let t = grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(id).shape()));
            (k.clone(), t)
        })
        .collect())
}

fn fd_params(
    obj: &dyn Objective,
    bundle: &ModelBundle,
    side: Side,
    params: &[&str],
    seed: u64,
) -> Result<usize> {
    let grads = side_grads(obj, bundle, side, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut checked = 0;
    for name in params {
        let n = bundle
            .params
            .get(name)
            .ok_or_else(|| anyhow!("no parameter {}", name))?
            .len();
        for _ in 0..3 {
            let i = rng.random_range(0..n);
            let a = grads[*name].data()[i];
            let fd_at = |h: f64| -> Result<f64> {
                let mut plus = bundle.clone();
                plus.params.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = bundle.clone();
                minus.params.get_mut(name).unwrap().data_mut()[i] -= h;
                Ok(
                    (side_total(obj, &plus, side, seed)? - side_total(obj, &minus, side, seed)?)
                        / (2.0 * h),
                )
            };
            // A ReLU kink inside the stencil spoils the wider step only.
            let mut fd = fd_at(1e-5)?;
            if !rel_close(a, fd) {
                fd = fd_at(1e-6)?;
            }
            ensure!(
                rel_close(a, fd),
                "{}[{}]: analytic {} vs numeric {}",
                name,
                i,
                a,
                fd
            );
            checked += 1;
        }
    }
    Ok(checked)
}

fn tiny(history_len: usize, method: Method) -> ModelConfig {
    ModelConfig::new(
        GeneratorConfig {
            base_filters: 8,
            n_levels: 3,
            patch: PatchSpec::new(16, 16).unwrap(),
            history_len,
            history_weights: vec![1.0 / history_len.max(1) as f64; history_len],
        },
        DiscConfig {
            base_filters: 4,
            n_layers: 2,
            embed_hidden: 8,
            video_window: 3,
        },
        method,
    )
}

fn mask16() -> BlendMask {
    make_mask(PatchSpec::new(16, 16).unwrap(), MaskCoverage::default()).unwrap()
}

fn random_batch(seed: u64) -> TrainingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = PatchSources {
        u_a: random_frame(&mut rng, 16, 16),
        u_b: random_frame(&mut rng, 16, 16),
        r_a: random_frame(&mut rng, 16, 16),
        r_b: random_frame(&mut rng, 16, 16),
        u_a_mask: None,
    };
    TrainingBatch::from_sources(sources, &mask16()).unwrap()
}

fn gradient_checks() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let target = random_frame(&mut rng, 8, 8).to_tensor();
    let x = random_frame(&mut rng, 8, 8).to_tensor();
    let mut n = fd_input(&x, 40, 1, |g, xi| {
        let t = g.constant(target.clone());
        l1_mean(g, xi, t)
    })?;
    let ext = RandomConvExtractor::default();
    n += fd_input(&x, 40, 2, |g, xi| {
        let t = g.constant(target.clone());
        perceptual_graph(g, &ext, xi, t).unwrap()
    })?;
    let z = Tensor::from_fn(&[5, 1], |_| rng.random::<f64>() * 6.0 - 3.0);
    n += fd_input(&z, 5, 3, |g, zi| {
        let a = nll_real(g, zi);
        let b = nll_fake(g, zi);
        let s = g.scale(b, 0.3);
        g.add(a, s)
    })?;

    let batch = random_batch(11);
    let bundle = ModelBundle::new(tiny(0, Method::Ours), 11)?;
    let obj = ImageObjective {
        config: &bundle.config,
        batch: &batch,
        lambda: 0.1,
    };
    n += fd_params(
        &obj,
        &bundle,
        Side::G,
        &["g.enc0.w", "g.enc1.gamma", "g.dec1.w", "g.dec0.b"],
        11,
    )?;
    n += fd_params(
        &obj,
        &bundle,
        Side::D,
        &[
            "di.conv0.w",
            "di.conv1.w",
            "di.head.w",
            "de.fc0.w",
            "de.head.b",
        ],
        12,
    )?;

    let seq = SequenceBatch {
        steps: (0..4).map(|t| random_batch(1300 + t)).collect(),
    };
    let bundle = ModelBundle::new(tiny(0, Method::Ours), 13)?;
    let obj = VideoObjective {
        config: &bundle.config,
        batch: &seq,
        lambda: 0.1,
        noise_std: 0.0,
    };
    n += fd_params(&obj, &bundle, Side::G, &["g.enc0.w", "g.dec2.w"], 13)?;
    n += fd_params(
        &obj,
        &bundle,
        Side::D,
        &["dv.conv0.w", "dv.conv1.gamma", "dv.head.w", "di.conv0.w"],
        14,
    )?;
    let bundle = ModelBundle::new(tiny(2, Method::Ours), 15)?;
    let obj = VideoObjective {
        config: &bundle.config,
        batch: &seq,
        lambda: 0.1,
        noise_std: 0.0,
    };
    n += fd_params(&obj, &bundle, Side::D, &["dv.conv0.w", "de.fc1.w"], 15)?;

    let m = mask16();
    for (i, kind) in [
        Method::AdvOnly,
        Method::Pixel,
        Method::Perceptual,
        Method::Cycle,
    ]
    .into_iter()
    .enumerate()
    {
        let bundle = ModelBundle::new(tiny(0, kind), 17 + i as u64)?;
        let obj = BaselineObjective {
            kind,
            config: &bundle.config,
            batch: &batch,
            mask: &m,
            extractor: &ext,
        };
        let mut gp = vec!["g.enc0.w", "g.dec0.w"];
        let mut dp = vec!["di.conv0.w", "di.head.w"];
        if kind == Method::Cycle {
            gp.push("f.enc1.w");
            dp.push("da.conv1.w");
        }
        n += fd_params(&obj, &bundle, Side::G, &gp, 20 + i as u64)?;
        n += fd_params(&obj, &bundle, Side::D, &dp, 30 + i as u64)?;
    }
    Ok(format!(
        "{} coordinates within 1e-3 relative (L1, perceptual, logit losses on 8x8; objectives on 16x16)",
        n
    ))
}

// ------------------------------------------------------------- trainability

fn recon(r: &vins::training::StepReports) -> f64 {
    r.g.family("recon_fake")
}

fn overfit_image() -> Result<String> {
    let clips = generate_sprite_dataset(&SpriteConfig {
        n_videos: 4,
        ..Default::default()
    })?;
    let cfg = vins_cli::desk_model();
    let mut tc = TrainConfig {
        lr: 3e-3,
        ..Default::default()
    };
    tc.pairing.patch = cfg.patch();
    let batch = make_training_batch(&clips[0], &clips[1], None, 3, &tc.pairing)?;
    let image = ModelConfig {
        generator: cfg.generator.image_variant(),
        ..cfg
    };
    let mut st = TrainState::new(ModelBundle::new(image, 0)?, 0);
    let (mut early, mut last) = (0.0, 0.0);
    for i in 0..200 {
        let r = train_step_image(&mut st, &batch, &tc)?;
        if i == 5 {
            early = recon(&r);
        }
        last = recon(&r);
    }
    let ratio = last / early;
    ensure!(
        ratio < 0.1,
        "reconstruction {:.4} -> {:.4} after 200 steps, ratio {:.3}",
        early,
        last,
        ratio
    );
    Ok(format!(
        "reconstruction {:.4} -> {:.4} after 200 steps, ratio {:.3}",
        early, last, ratio
    ))
}

fn overfit_video() -> Result<String> {
    let clips = generate_sprite_dataset(&SpriteConfig {
        n_videos: 4,
        ..Default::default()
    })?;
    let cfg = vins_cli::desk_model();
    let mut tc = TrainConfig {
        lr: 3e-3,
        seq_len: 6,
        ..Default::default()
    };
    tc.pairing.patch = cfg.patch();
    let seq = make_sequence_batch(&clips[0], &clips[1], None, 6, 3, &tc.pairing)?;
    let mut st = TrainState::new(ModelBundle::new(cfg, 0)?, 0);
    let (mut early, mut last) = (0.0, 0.0);
    for i in 0..300 {
        let r = train_step_video(&mut st, &seq, &tc)?;
        if i == 5 {
            early = recon(&r);
        }
        last = recon(&r);
    }
    let ratio = last / early;
    ensure!(
        ratio < 0.1,
        "reconstruction {:.4} -> {:.4} after 300 steps, ratio {:.3}",
        early,
        last,
        ratio
    );
    Ok(format!(
        "reconstruction {:.4} -> {:.4} after 300 steps, ratio {:.3}",
        early, last, ratio
    ))
}

// ---------------------------------------------------------------- ordering

fn train_image_model(method: Method, clips: &[VideoClip]) -> Result<ModelBundle> {
    let cfg = vins_cli::desk_model();
    let mut tc = TrainConfig {
        lr: 1e-3,
        iters: 2000,
        ..Default::default()
    };
    tc.pairing.patch = cfg.patch();
    let cfg = ModelConfig {
        generator: cfg.generator.image_variant(),
        method,
        ..cfg
    };
    let mut st = TrainState::new(ModelBundle::new(cfg, 0)?, 0);
    train(&mut st, clips, Stage::Image, &tc, &mut std::io::sink())?;
    Ok(st.bundle)
}

fn mean_ois(results: &[CompositeResult]) -> Result<f64> {
    let mut all = Vec::new();
    for r in results {
        all.extend(insertion_ois(r)?.into_iter().map(|o| o.ois));
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

fn ordering(ours_out: &mut Option<ModelBundle>) -> Result<String> {
    let clips = generate_sprite_dataset(&SpriteConfig {
        n_videos: 40,
        ..Default::default()
    })?;
    let (train_clips, test_clips) = clips.split_at(32);
    let patch = vins_cli::desk_model().patch();
    let plans = plan_insertions(test_clips, 200, 1, patch, 99)?;
    let detector = train_window_detector(train_clips, &WindowDetectorConfig::default())?;
    let mut scores = Vec::new();
    for method in [Method::Ours, Method::AdvOnly] {
        let bundle = train_image_model(method, train_clips)?;
        let results = plans
            .iter()
            .map(|p| {
                render_insertion(
                    &bundle,
                    &test_clips[p.source],
                    &test_clips[p.target].frames,
                    &p.request,
                )
            })
            .collect::<vins::Result<Vec<_>>>()?;
        scores.push((
            mean_ois(&results)?,
            detector_recall(&results, &detector, 0.5)?,
        ));
        if method == Method::Ours {
            *ours_out = Some(bundle);
        }
    }
    let detail = format!(
        "OIS ours {:.3} vs adv-only {:.3}; detector recall ours {:.3} vs adv-only {:.3}",
        scores[0].0, scores[1].0, scores[0].1, scores[1].1
    );
    ensure!(
        scores[0].0 > scores[1].0 && scores[0].1 > scores[1].1,
        "{}",
        detail
    );
    Ok(detail)
}

// ------------------------------------------------------------ noise ablation

fn rollout_clips() -> Result<(VideoClip, VideoClip)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let src = generate_clip("src", 301, 96, 128, 1, &mut rng)?;
    let tgt = generate_clip("tgt", 301, 96, 128, 1, &mut rng)?;
    Ok((src, tgt))
}

fn static_request(frames: usize) -> Result<InsertionRequest> {
    let mut req = InsertionRequest::new(
        1,
        BoundingBox::from_center(64.0, 55.0, 16.0, 32.0)?,
        (0, frames),
    );
    req.static_placement = true;
    Ok(req)
}

fn train_video_model(image: &ModelBundle, noise_std: f64) -> Result<ModelBundle> {
    let cfg = vins_cli::desk_model();
    let mut tc = TrainConfig {
        lr: 1e-3,
        iters: 200,
        seq_len: 6,
        noise_std,
        ..Default::default()
    };
    tc.pairing.patch = cfg.patch();
    let train_clips = generate_sprite_dataset(&SpriteConfig {
        n_videos: 40,
        ..Default::default()
    })?;
    let mut bundle = ModelBundle::from_image_bundle(image, cfg.generator, 1)?;
    bundle.step = 0;
    let mut st = TrainState::new(bundle, 1);
    train(
        &mut st,
        &train_clips[..32],
        Stage::Video,
        &tc,
        &mut std::io::sink(),
    )?;
    Ok(st.bundle)
}

/// Mean absolute change between consecutive output patches, over pixels
/// outside the object mask in both frames.
fn background_drift(res: &CompositeResult) -> Result<f64> {
    let pf = res.patches.frames();
    ensure!(pf.len() > 1, "rollout has a single frame");
    let mut total = 0.0;
    for k in 1..pf.len() {
        let m0 = res.inputs[k - 1]
            .u_a_mask
            .as_ref()
            .ok_or_else(|| anyhow!("missing mask"))?;
        let m1 = res.inputs[k]
            .u_a_mask
            .as_ref()
            .ok_or_else(|| anyhow!("missing mask"))?;
        let (mut s, mut n) = (0.0, 0.0);
        for y in 0..pf[k].height() {
            for x in 0..pf[k].width() {
                if !m0.get(y, x) && !m1.get(y, x) {
                    for c in 0..3 {
                        s += (pf[k].get(y, x, c) - pf[k - 1].get(y, x, c)).abs();
                    }
                    n += 3.0;
                }
            }
        }
        total += s / n;
    }
    Ok(total / (pf.len() - 1) as f64)
}

fn noise_ablation(
    image: Option<&ModelBundle>,
    noisy_out: &mut Option<ModelBundle>,
) -> Result<String> {
    let trained;
    let image = match image {
        Some(b) => b,
        None => {
            let clips = generate_sprite_dataset(&SpriteConfig {
                n_videos: 40,
                ..Default::default()
            })?;
            trained = train_image_model(Method::Ours, &clips[..32])?;
            &trained
        }
    };
    let (src, tgt) = rollout_clips()?;
    let req = static_request(100)?;
    let mut drift = Vec::new();
    for noise in [0.01, 0.0] {
        let bundle = train_video_model(image, noise)?;
        let res = render_insertion(&bundle, &src, &tgt.frames, &req)?;
        drift.push(background_drift(&res)?);
        if noise > 0.0 {
            *noisy_out = Some(bundle);
        }
    }
    let detail = format!(
        "100-frame drift {:.5} with noise 0.01 vs {:.5} without",
        drift[0], drift[1]
    );
    ensure!(drift[0] < drift[1], "{}", detail);
    Ok(detail)
}

// ----------------------------------------------------------------- poisson

fn interior_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    loop {
        let p = rng.random_range(0.2..0.9);
        let m = BinaryMask::from_fn(h, w, |y, x| {
            y > 0 && x > 0 && y + 1 < h && x + 1 < w && rng.random::<f64>() < p
        });
        if m.count() > 0 {
            return m;
        }
    }
}

fn poisson() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst_res = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..24), rng.random_range(8..24));
        let u = random_frame(&mut rng, h, w);
        let r = random_frame(&mut rng, h, w);
        let mask = interior_mask(&mut rng, h, w);
        let field = poisson_solve(&u, &r, &mask, 10 * mask.count() + 100)?;
        let res = poisson_residual(&field, &u, &mask);
        worst_res = worst_res.max(res);
        ensure!(res < 1e-6, "interior residual {:e}", res);
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    for c in 0..3 {
                        ensure!(
                            field.get(y, x, c) == r.get(y, x, c),
                            "boundary pixel ({}, {}) changed",
                            y,
                            x
                        );
                    }
                }
            }
        }
    }

    let mut worst_dense = 0.0f64;
    for _ in 0..10 {
        let (h, w) = (16, 16);
        let u = random_frame(&mut rng, h, w);
        let r = random_frame(&mut rng, h, w);
        let mask = interior_mask(&mut rng, h, w);
        let field = poisson_solve(&u, &r, &mask, 10_000)?;
        let cells: Vec<(usize, usize)> = (0..h * w)
            .map(|i| (i / w, i % w))
            .filter(|&(y, x)| mask.get(y, x))
            .collect();
        let index: BTreeMap<(usize, usize), usize> =
            cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let n = cells.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, &(y, x)) in cells.iter().enumerate() {
            a[(i, i)] = 4.0;
            for nb in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                if let Some(&j) = index.get(&nb) {
                    a[(i, j)] = -1.0;
                }
            }
        }
        let lu = a.lu();
        for c in 0..3 {
            let b = DVector::from_fn(n, |i, _| {
                let (y, x) = cells[i];
                let mut v = 0.0;
                for (yy, xx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                    v += u.get(y, x, c) - u.get(yy, xx, c);
                    if !mask.get(yy, xx) {
                        v += r.get(yy, xx, c);
                    }
                }
                v
            });
            let sol = lu
                .solve(&b)
                .ok_or_else(|| anyhow!("dense system is singular"))?;
            for (i, &(y, x)) in cells.iter().enumerate() {
                worst_dense = worst_dense.max((field.get(y, x, c) - sol[i]).abs());
            }
        }
    }
    ensure!(
        worst_dense < 1e-5,
        "16x16 solutions differ from the dense solve by {:e}",
        worst_dense
    );
    Ok(format!(
        "max residual {:.1e} on 100 masks, boundary exact; max dense-solve gap {:.1e} on 10 16x16 instances",
        worst_res, worst_dense
    ))
}

// ------------------------------------------------------------- determinism

const PIPELINE: &str = r#"
[synth]
n_videos = 5
n_frames = 8
frame_height = 64
frame_width = 96
n_objects = 2

[data]
holdout = 2

[model]
method = "ours"

[model.generator]
base_filters = 8
n_levels = 2
patch = { height = 32, width = 16 }
history_len = 1
history_weights = [1.0]

[model.disc]
base_filters = 4
n_layers = 2
embed_hidden = 8
video_window = 2

[train]
iters = 3
seq_len = 3
log_every = 1

[insert]
start = 0
end = 4

[eval]
n_insertions = 6

[detector]
train_steps = 20
"#;

fn tree(root: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root)?.to_path_buf(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Every command of the pipeline, each writing to its own directory under
/// `root`.
fn run_pipeline(root: &Path, config: &Path) -> Result<()> {
    let p = |s: &str| root.join(s).display().to_string();
    let (data, image, video) = (p("data"), p("image/image.ckpt"), p("video/video.ckpt"));
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("data", vec!["synth-data", "--seed", "7"]),
        ("image", vec!["train-image", "--data", &data, "--seed", "7"]),
        (
            "video",
            vec![
                "train-video",
                "--data",
                &data,
                "--init",
                &image,
                "--seed",
                "7",
            ],
        ),
        (
            "insert",
            vec!["insert", "--data", &data, "--checkpoint", &video],
        ),
        (
            "ois",
            vec!["eval-ois", "--data", &data, "--checkpoint", &video],
        ),
        (
            "recall",
            vec!["eval-recall", "--data", &data, "--checkpoint", &video],
        ),
        (
            "poisson",
            vec!["baseline", "--data", &data, "--compositor", "poisson"],
        ),
    ];
    for (out, args) in steps {
        let mut argv = vec![
            "vins".to_string(),
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            p(out),
        ];
        argv.extend(args.iter().map(|s| s.to_string()));
        let code = vins_cli::run(argv);
        ensure!(code == 0, "`{}` exited with {}", args[0], code);
    }
    Ok(())
}

fn determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("run.toml");
    fs::write(&config, PIPELINE)?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&a, &config)?;
    run_pipeline(&b, &config)?;
    let (ta, tb) = (tree(&a)?, tree(&b)?);
    ensure!(ta.len() == tb.len(), "{} files vs {}", ta.len(), tb.len());
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        ensure!(
            pa == pb,
            "file lists differ at {} / {}",
            pa.display(),
            pb.display()
        );
        ensure!(ba == bb, "{} differs between runs", pa.display());
    }
    Ok(format!(
        "7 commands run twice, {} artifacts bit-identical",
        ta.len()
    ))
}

// ------------------------------------------------------------ long rollout

fn long_rollout(video: Option<&ModelBundle>) -> Result<String> {
    let trained;
    let bundle = match video {
        Some(b) => b,
        None => {
            let clips = generate_sprite_dataset(&SpriteConfig {
                n_videos: 40,
                ..Default::default()
            })?;
            trained = train_video_model(&train_image_model(Method::Ours, &clips[..32])?, 0.01)?;
            &trained
        }
    };
    let (src, tgt) = rollout_clips()?;
    let req = static_request(300)?;
    let res = render_insertion(bundle, &src, &tgt.frames, &req)?;
    ensure!(
        res.video.len() == 300 && !res.truncated,
        "rendered {} frames",
        res.video.len()
    );
    let pad = req.feather_px as f64 + 1.0;
    for (f, r) in res.video.frames().iter().zip(&res.per_frame_regions) {
        ensure!(
            f.pixels()
                .iter()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "frame {} has a pixel outside [0, 1]",
            f.index()
        );
        let scene = tgt
            .frame(f.index())
            .ok_or_else(|| anyhow!("no scene frame {}", f.index()))?;
        for y in 0..f.height() {
            for x in 0..f.width() {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let near = cx > r.x - pad
                    && cx < r.right() + pad
                    && cy > r.y - pad
                    && cy < r.bottom() + pad;
                ensure!(
                    near || f.pixel(y, x) == scene.pixel(y, x),
                    "frame {} pixel ({}, {}) changed outside the region",
                    f.index(),
                    y,
                    x
                );
            }
        }
    }
    Ok("300 frames finite and in [0, 1], scene bit-equal outside the padded region".into())
}

// -------------------------------------------------------------------- main

fn report(name: &str, filters: &[String], f: impl FnOnce() -> Result<String>) {
    if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
        return;
    }
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(anyhow!("panicked: {}", msg))
    });
    let secs = t.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("PASS {}: {} [{:.1}s]", name, detail, secs),
        Err(e) => println!("FAIL {}: {:#} [{:.1}s]", name, e, secs),
    }
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut ours = None;
    let mut noisy = None;
    report("formula-exactness", &filters, formula_exactness);
    report("published-ois", &filters, published_ois);
    report("gradient-checks", &filters, gradient_checks);
    report("overfit-image", &filters, overfit_image);
    report("overfit-video", &filters, overfit_video);
    report("poisson", &filters, poisson);
    report("determinism", &filters, determinism);
    report("ordering", &filters, || ordering(&mut ours));
    report("noise-ablation", &filters, || {
        noise_ablation(ours.as_ref(), &mut noisy)
    });
    report("long-rollout", &filters, || long_rollout(noisy.as_ref()));
}
