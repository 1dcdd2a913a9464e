use autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vins::dataio::{Frame, FrameSequence, PatchSpec};
use vins::models::checkpoint::{load_bundle, save_bundle};
use vins::models::{
    combine_history_features, forward_generator_image, forward_generator_video, nets,
    score_embedding_disc, score_image_disc, score_video_disc, tile_embedding, Bound, DiscConfig,
    GeneratorConfig, Method, ModelBundle, ModelConfig,
};
use vins::Error;

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

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(16, 16, 0, |_, _, _| rng.random::<f64>()).unwrap()
}

#[test]
fn generator_output_shape_and_purity() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_frame(&mut rng);
    let y = random_frame(&mut rng);
    let ox = forward_generator_image(&b, &x).unwrap();
    assert_eq!((ox.output.height(), ox.output.width()), (16, 16));
    assert_eq!(ox.embedding.len(), b.generator().embedding_len());
    assert_eq!(ox, forward_generator_image(&b, &x).unwrap());
    let oy = forward_generator_image(&b, &y).unwrap();
    assert_ne!(ox.embedding, oy.embedding);
    let wrong = Frame::filled(16, 18, [0.5; 3]).unwrap();
    assert!(matches!(
        forward_generator_image(&b, &wrong),
        Err(Error::Validation(_))
    ));
}

#[test]
fn video_generator_without_history_is_the_image_generator() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_frame(&mut rng);
    assert_eq!(
        forward_generator_video(&b, &x, &[]).unwrap(),
        forward_generator_image(&b, &x).unwrap()
    );
}

#[test]
fn video_generator_history_contract() {
    let b = ModelBundle::new(tiny(2, Method::Ours), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_frame(&mut rng);
    let h1 = random_frame(&mut rng);
    let h2 = random_frame(&mut rng);
    let a = forward_generator_video(&b, &x, &[&h1, &h2]).unwrap();
    let swapped = forward_generator_video(&b, &x, &[&h2, &h1]).unwrap();
    assert_eq!(a, swapped);
    assert_eq!((a.output.height(), a.output.width()), (16, 16));
    assert!(forward_generator_video(&b, &x, &[&h1]).is_err());
    // The history actually reaches the output.
    let other = forward_generator_video(&b, &x, &[&h1, &h1]).unwrap();
    assert_ne!(a.output, other.output);
}

#[test]
fn combine_history_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = Tensor::from_fn(&[2, 4, 3], |_| rng.random::<f64>());
    assert_eq!(combine_history_features(&[&f, &f], &[0.5, 0.5]).unwrap(), f);
    let g = Tensor::from_fn(&[2, 4, 3], |_| rng.random::<f64>());
    assert_eq!(combine_history_features(&[&f, &g], &[1.0, 0.0]).unwrap(), f);
    let f2 = g.map(|v| 2.0 * v);
    let out = combine_history_features(&[&f2, &g], &[0.5, 0.5]).unwrap();
    assert!(out.max_abs_diff(&g.map(|v| 1.5 * v)) < 1e-12);
    assert!(combine_history_features(&[&f], &[0.5, 0.5]).is_err());
    let odd = Tensor::zeros(&[3]);
    assert!(combine_history_features(&[&f, &odd], &[0.5, 0.5]).is_err());
}

#[test]
fn combine_history_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let f = Tensor::from_fn(&[5, 5], |_| rng.random_range(-1.0..1.0));
        let g = Tensor::from_fn(&[5, 5], |_| rng.random_range(-1.0..1.0));
        let w = [rng.random::<f64>(), rng.random::<f64>()];
        let s = rng.random_range(-3.0..3.0);
        let scaled = combine_history_features(&[&f.map(|v| s * v), &g.map(|v| s * v)], &w).unwrap();
        let combined = combine_history_features(&[&f, &g], &w)
            .unwrap()
            .map(|v| s * v);
        assert!(scaled.max_abs_diff(&combined) < 1e-6);
    }
}

#[test]
fn tile_embedding_examples() {
    let e = [0.3, -1.0, 2.5];
    let one = tile_embedding(&e, 1, 1).unwrap();
    assert_eq!(one.shape(), &[3, 1, 1]);
    assert_eq!(one.data(), &e);
    let t = tile_embedding(&e, 4, 5).unwrap();
    for c in 0..3 {
        for p in 0..20 {
            assert_eq!(t.data()[c * 20 + p], e[c]);
        }
    }
    let z = tile_embedding(&[0.0; 6], 2, 2).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
    assert!(tile_embedding(&e, 0, 2).is_err());
}

#[test]
fn discriminator_scores_are_probabilities() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_frame(&mut rng);
    let e = forward_generator_image(&b, &x).unwrap().embedding;
    let s = score_image_disc(&b, &x, Some(&e)).unwrap();
    assert!(s > 0.0 && s < 1.0);
    assert_eq!(s, score_image_disc(&b, &x, Some(&e)).unwrap());
    assert!(score_image_disc(&b, &x, None).is_err());
    let se = score_embedding_disc(&b, &e).unwrap();
    assert!(se > 0.0 && se < 1.0);
    assert!(score_embedding_disc(&b, &e[1..]).is_err());
    let clip = FrameSequence::new(
        (0..3)
            .map(|i| random_frame(&mut rng).with_index(i))
            .collect(),
        10.0,
    )
    .unwrap();
    let cond = vec![e.clone(); 3];
    let sv = score_video_disc(&b, &clip, &cond).unwrap();
    assert!(sv > 0.0 && sv < 1.0);
    assert_eq!(sv, score_video_disc(&b, &clip, &cond).unwrap());
    let short = FrameSequence::new(clip.frames()[..2].to_vec(), 10.0).unwrap();
    assert!(score_video_disc(&b, &short, &cond[..2]).is_err());

    let base = ModelBundle::new(tiny(0, Method::AdvOnly), 5).unwrap();
    let sb = score_image_disc(&base, &x, None).unwrap();
    assert!(sb > 0.0 && sb < 1.0);
}

#[test]
fn forward_passes_stay_finite_over_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..100 {
        let b = ModelBundle::new(tiny(2, Method::Ours), seed).unwrap();
        let x = random_frame(&mut rng);
        let h = random_frame(&mut rng);
        let out = forward_generator_video(&b, &x, &[&h, &h]).unwrap();
        assert!(out.embedding.iter().all(|v| v.is_finite()));
        assert!(out.output.pixels().iter().all(|v| v.is_finite()));
        let s = score_image_disc(&b, &out.output, Some(&out.embedding)).unwrap();
        assert!(s.is_finite());
    }
}

/// Central differences of `f` at three coordinates of `x`, compared with
/// the analytic gradient.
fn check_input_gradient(
    x: &Tensor,
    coords: [usize; 3],
    build: impl Fn(&mut Graph, autodiff::NodeId) -> autodiff::NodeId,
) {
    let mut g = Graph::new();
    let xi = g.variable(x.clone());
    let out = build(&mut g, xi);
    let grads = g.backward(out);
    let analytic = grads.get(xi).unwrap().clone();
    let h = 1e-5;
    for &i in &coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let eval = |t: Tensor| {
            let mut g = Graph::new();
            let xi = g.constant(t);
            let out = build(&mut g, xi);
            g.value(out).item()
        };
        let fd = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        assert!(
            rel < 1e-3,
            "coordinate {}: analytic {} vs numeric {}",
            i,
            a,
            fd
        );
    }
}

fn sigmoid_node(g: &mut Graph, logit: autodiff::NodeId) -> autodiff::NodeId {
    let s = g.sigmoid(logit);
    g.sum(s)
}

#[test]
fn image_disc_score_gradient_matches_finite_differences() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_frame(&mut rng).to_tensor();
    let e: Vec<f64> = (0..b.generator().embedding_len())
        .map(|_| rng.random::<f64>())
        .collect();
    check_input_gradient(&x, [5, 300, 700], |g, xi| {
        let bound = Bound::new(g, &b.params, &["di"], false);
        let c = g.constant(Tensor::new(&[1, e.len()], e.clone()));
        let logit = nets::image_disc(g, &bound, "di", &b.config.disc, xi, Some(c));
        sigmoid_node(g, logit)
    });
}

#[test]
fn embed_disc_score_gradient_matches_finite_differences() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let e = Tensor::from_fn(&[1, b.generator().embedding_len()], |_| {
        rng.random_range(-1.0..1.0)
    });
    check_input_gradient(&e, [0, 7, 20], |g, xi| {
        let bound = Bound::new(g, &b.params, &["de"], false);
        let logit = nets::embed_disc(g, &bound, "de", xi);
        sigmoid_node(g, logit)
    });
}

#[test]
fn video_disc_score_gradient_matches_finite_differences() {
    let b = ModelBundle::new(tiny(0, Method::Ours), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let clip = Tensor::from_fn(&[1, 3, 3, 16, 16], |_| rng.random::<f64>());
    let e: Vec<f64> = (0..b.generator().embedding_len())
        .map(|_| rng.random::<f64>())
        .collect();
    check_input_gradient(&clip, [11, 900, 2000], |g, xi| {
        let bound = Bound::new(g, &b.params, &["dv"], false);
        let cond: Vec<_> = (0..3)
            .map(|_| g.constant(Tensor::new(&[1, e.len()], e.clone())))
            .collect();
        let logit = nets::video_disc(g, &bound, "dv", &b.config.disc, xi, &cond);
        sigmoid_node(g, logit)
    });
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let b = ModelBundle::new(tiny(1, Method::Ours), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_frame(&mut rng).to_tensor();
    let h = random_frame(&mut rng).to_tensor();
    check_input_gradient(&x, [1, 222, 640], |g, xi| {
        let bound = Bound::new(g, &b.params, &["g"], false);
        let hi = g.constant(h.clone());
        let out = nets::generator(g, &bound, "g", b.generator(), xi, &[hi]);
        let sq = g.square(out.output);
        let l = g.mean(sq);
        let e = g.sum(out.embedding);
        g.add(l, e)
    });
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut b = ModelBundle::new(tiny(2, Method::Ours), 12).unwrap();
    b.step = 17;
    save_bundle(&b, &path).unwrap();
    assert_eq!(load_bundle(&path, Some(&b.config)).unwrap(), b);
    assert_eq!(load_bundle(&path, None).unwrap(), b);

    let mut other = b.config.clone();
    other.generator.patch = PatchSpec::new(32, 16).unwrap();
    assert!(matches!(
        load_bundle(&path, Some(&other)),
        Err(Error::ConfigMismatch(_))
    ));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    assert!(matches!(
        load_bundle(&bad, None),
        Err(Error::Checkpoint { .. })
    ));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&bad, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(
        load_bundle(&bad, None),
        Err(Error::Checkpoint { .. })
    ));
}

#[test]
fn baseline_bundles_have_their_networks() {
    let cyc = ModelBundle::new(tiny(0, Method::Cycle), 0).unwrap();
    for net in ["g", "f", "di", "da"] {
        assert!(cyc.params.has_net(net), "{}", net);
    }
    assert!(!cyc.params.has_net("de"));
    let mut cfg = tiny(2, Method::Pixel);
    assert!(ModelBundle::new(cfg.clone(), 0).is_err());
    cfg.generator = cfg.generator.image_variant();
    assert!(ModelBundle::new(cfg, 0).is_ok());
}
