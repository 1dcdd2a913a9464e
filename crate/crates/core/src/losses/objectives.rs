//! Method and baseline objectives as graph builders.
//!
//! Each objective splits into a generator forward pass, discriminator-side
//! terms evaluated on detached generator outputs, and generator-side terms
//! evaluated through frozen discriminators. Training runs the three pieces
//! on separate graphs; [`Objective::evaluate`] runs them on one graph for
//! reporting.

use std::collections::BTreeMap;

use autodiff::{Graph, NodeId, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{l1_mean, nll_fake, nll_real, perceptual_graph, FeatureExtractor, LossReport, Terms};
use crate::dataio::Frame;
use crate::error::{invalid, Result};
use crate::models::{nets, Bound, Method, ModelBundle, ModelConfig};
use crate::pairing::{BlendMask, PatchSources, SequenceBatch, TrainingBatch};

/// Named generator-side nodes of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Fwd {
    nodes: BTreeMap<String, NodeId>,
    /// Frame chosen for the image discriminator in the video objective.
    pub pick: Option<usize>,
}

impl Fwd {
    pub fn put(&mut self, name: impl Into<String>, id: NodeId) {
        self.nodes.insert(name.into(), id);
    }

    pub fn get(&self, name: &str) -> NodeId {
        match self.nodes.get(name) {
            Some(&id) => id,
            None => panic!("forward pass has no node `{}`", name),
        }
    }

    /// Copies every node value of `src` into constants of `dst`.
    pub fn detach_into(&self, src: &Graph, dst: &mut Graph) -> Fwd {
        Fwd {
            nodes: self
                .nodes
                .iter()
                .map(|(k, &id)| (k.clone(), dst.constant(src.value(id).clone())))
                .collect(),
            pick: self.pick,
        }
    }

    pub fn value<'g>(&self, g: &'g Graph, name: &str) -> &'g Tensor {
        g.value(self.get(name))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveReports {
    pub g_loss: LossReport,
    pub d_losses: LossReport,
}

pub trait Objective {
    /// Networks updated by the generator step.
    fn generator_nets(&self) -> &'static [&'static str];
    /// Networks updated by the discriminator step.
    fn disc_nets(&self) -> &'static [&'static str];
    fn forward(&self, g: &mut Graph, b: &Bound, rng: &mut dyn RngCore) -> Result<Fwd>;
    fn d_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms>;
    fn g_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms>;

    /// Both reports on one graph with every parameter frozen.
    fn evaluate(&self, bundle: &ModelBundle, rng: &mut dyn RngCore) -> Result<ObjectiveReports> {
        let mut g = Graph::new();
        let mut b = Bound::default();
        b.bind(&mut g, &bundle.params, self.generator_nets(), false);
        b.bind(&mut g, &bundle.params, self.disc_nets(), false);
        let fwd = self.forward(&mut g, &b, rng)?;
        let dt = self.d_terms(&mut g, &b, &fwd)?;
        let d_total = dt.total(&mut g);
        let gt = self.g_terms(&mut g, &b, &fwd)?;
        let g_total = gt.total(&mut g);
        Ok(ObjectiveReports {
            g_loss: gt.report(&g, g_total),
            d_losses: dt.report(&g, d_total),
        })
    }
}

fn row(g: &mut Graph, x: NodeId, i: usize) -> NodeId {
    g.slice(x, 0, i, 1)
}

fn mean_of(g: &mut Graph, nodes: &[NodeId]) -> NodeId {
    let w = vec![1.0 / nodes.len() as f64; nodes.len()];
    g.weighted_sum(nodes, &w)
}

fn frame_const(g: &mut Graph, f: &Frame) -> NodeId {
    g.constant(f.to_tensor())
}

fn inputs_tensor(batch: &TrainingBatch) -> Result<Tensor> {
    Frame::stack(&[&batch.fake_a.input, &batch.fake_b.input, &batch.real.input])
}

const PAIR_NAMES: [&str; 3] = ["fakeA", "fakeB", "real"];

fn pair_weight(i: usize, lambda: f64) -> f64 {
    if i < 2 {
        lambda
    } else {
        1.0
    }
}

/// Discriminator-side image terms: `u_b` conditioned on both fake-pair
/// embeddings is positive; all three generator outputs are negative.
fn image_disc_d_terms(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    ub: NodeId,
    out: NodeId,
    emb: NodeId,
) -> Vec<NodeId> {
    let imgs = g.concat(&[ub, ub, out], 0);
    let e0 = row(g, emb, 0);
    let e1 = row(g, emb, 1);
    let conds = g.concat(&[e0, e1, emb], 0);
    let z = nets::image_disc(g, b, "di", &cfg.disc, imgs, Some(conds));
    let mut t = Vec::with_capacity(5);
    for i in 0..5 {
        let zi = row(g, z, i);
        t.push(if i < 2 {
            nll_real(g, zi)
        } else {
            nll_fake(g, zi)
        });
    }
    t
}

const DI_D_NAMES: [&str; 5] = [
    "DI_pos_fakeA",
    "DI_pos_fakeB",
    "DI_neg_fakeA",
    "DI_neg_fakeB",
    "DI_neg_real",
];

fn push_five(terms: &mut Terms, names: [&str; 5], nodes: &[NodeId], lambda: f64) {
    for (i, (&name, &id)) in names.iter().zip(nodes).enumerate() {
        terms.push(name, if i < 4 { lambda } else { 1.0 }, id);
    }
}

fn embed_d_terms(g: &mut Graph, b: &Bound, emb: NodeId) -> Vec<NodeId> {
    let z = nets::embed_disc(g, b, "de", emb);
    let z0 = row(g, z, 0);
    let z1 = row(g, z, 1);
    let z2 = row(g, z, 2);
    vec![nll_real(g, z0), nll_real(g, z1), nll_fake(g, z2)]
}

fn image_disc_g_terms(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    out: NodeId,
    emb: NodeId,
) -> Vec<NodeId> {
    let z = nets::image_disc(g, b, "di", &cfg.disc, out, Some(emb));
    (0..3)
        .map(|i| {
            let zi = row(g, z, i);
            nll_real(g, zi)
        })
        .collect()
}

fn embed_g_term(g: &mut Graph, b: &Bound, emb: NodeId) -> NodeId {
    let er = row(g, emb, 2);
    let z = nets::embed_disc(g, b, "de", er);
    nll_real(g, z)
}

fn recon_terms(g: &mut Graph, out: NodeId, ub: NodeId) -> [NodeId; 2] {
    let o0 = row(g, out, 0);
    let o1 = row(g, out, 1);
    [l1_mean(g, o0, ub), l1_mean(g, o1, ub)]
}

/// The image-stage objective: conditional image adversarial terms, the
/// embedding adversarial terms and the reconstruction of both fake pairs,
/// with `lambda` on every fake-pair term.
pub struct ImageObjective<'a> {
    pub config: &'a ModelConfig,
    pub batch: &'a TrainingBatch,
    pub lambda: f64,
}

impl Objective for ImageObjective<'_> {
    fn generator_nets(&self) -> &'static [&'static str] {
        &["g"]
    }

    fn disc_nets(&self) -> &'static [&'static str] {
        &["di", "de"]
    }

    fn forward(&self, g: &mut Graph, b: &Bound, _rng: &mut dyn RngCore) -> Result<Fwd> {
        let x = g.constant(inputs_tensor(self.batch)?);
        let cfg = self.config.generator.image_variant();
        let out = nets::generator(g, b, "g", &cfg, x, &[]);
        let mut fwd = Fwd::default();
        fwd.put("out", out.output);
        fwd.put("emb", out.embedding);
        Ok(fwd)
    }

    fn d_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        let ub = frame_const(g, &self.batch.sources.u_b);
        let mut terms = Terms::default();
        let di = image_disc_d_terms(g, b, self.config, ub, fwd.get("out"), fwd.get("emb"));
        push_five(&mut terms, DI_D_NAMES, &di, self.lambda);
        let de = embed_d_terms(g, b, fwd.get("emb"));
        for (i, id) in de.into_iter().enumerate() {
            terms.push(
                format!("DE_{}", PAIR_NAMES[i]),
                pair_weight(i, self.lambda),
                id,
            );
        }
        Ok(terms)
    }

    fn g_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        let ub = frame_const(g, &self.batch.sources.u_b);
        let (out, emb) = (fwd.get("out"), fwd.get("emb"));
        let mut terms = Terms::default();
        for (i, id) in image_disc_g_terms(g, b, self.config, out, emb)
            .into_iter()
            .enumerate()
        {
            terms.push(
                format!("adv_DI_{}", PAIR_NAMES[i]),
                pair_weight(i, self.lambda),
                id,
            );
        }
        let de = embed_g_term(g, b, emb);
        terms.push("adv_DE_real", 1.0, de);
        let [r0, r1] = recon_terms(g, out, ub);
        terms.push("recon_fakeA", self.lambda, r0);
        terms.push("recon_fakeB", self.lambda, r1);
        Ok(terms)
    }
}

pub fn image_objective(
    bundle: &ModelBundle,
    batch: &TrainingBatch,
    lambda_fake: f64,
) -> Result<ObjectiveReports> {
    if !(lambda_fake >= 0.0) {
        return Err(invalid("lambda_fake must be non-negative"));
    }
    ImageObjective {
        config: &bundle.config,
        batch,
        lambda: lambda_fake,
    }
    .evaluate(bundle, &mut ChaCha8Rng::seed_from_u64(0))
}

/// History frames for step `t`, oldest first: earlier outputs, or the
/// bootstrap frame where the sequence has not produced one yet.
pub fn history_slots<T: Clone>(t: usize, n: usize, boot: &T, outputs: &[T]) -> Vec<T> {
    (0..n)
        .map(|k| {
            let back = n - k;
            if t >= back {
                outputs[t - back].clone()
            } else {
                boot.clone()
            }
        })
        .collect()
}

/// The video-stage objective over a rolled-out sequence.
pub struct VideoObjective<'a> {
    pub config: &'a ModelConfig,
    pub batch: &'a SequenceBatch,
    pub lambda: f64,
    /// Standard deviation of history noise; zero disables it.
    pub noise_std: f64,
}

impl VideoObjective<'_> {
    fn window_starts(&self) -> Vec<usize> {
        let (t, w) = (self.batch.len(), self.config.disc.video_window);
        let mut starts = Vec::new();
        let mut s = t - w;
        loop {
            starts.push(s);
            if s < w {
                break;
            }
            s -= w;
        }
        starts.reverse();
        starts
    }

    fn check(&self) -> Result<()> {
        let w = self.config.disc.video_window;
        if self.batch.len() < w {
            return Err(invalid(format!(
                "sequence of {} frames is shorter than the {}-frame video window",
                self.batch.len(),
                w
            )));
        }
        Ok(())
    }

    fn ub(&self, g: &mut Graph, t: usize) -> NodeId {
        frame_const(g, &self.batch.steps[t].sources.u_b)
    }

    /// Video-discriminator logits `[5, 1]` over one window: the real clip
    /// twice (with each fake-pair conditioning), then the three generated
    /// clips.
    fn video_logits(
        &self,
        g: &mut Graph,
        b: &Bound,
        fwd: &Fwd,
        s: usize,
        with_real: bool,
    ) -> NodeId {
        let w = self.config.disc.video_window;
        let mut clips = Vec::new();
        if with_real {
            let frames: Vec<NodeId> = (s..s + w).map(|t| self.ub(g, t)).collect();
            let real = nets::stack_time(g, &frames);
            clips.push(real);
            clips.push(real);
        }
        for i in 0..3 {
            let frames: Vec<NodeId> = (s..s + w)
                .map(|t| {
                    let o = fwd.get(&format!("out.{}", t));
                    row(g, o, i)
                })
                .collect();
            clips.push(nets::stack_time(g, &frames));
        }
        let clip = g.concat(&clips, 0);
        let cond: Vec<NodeId> = (s..s + w)
            .map(|t| {
                let e = fwd.get(&format!("emb.{}", t));
                if with_real {
                    let e0 = row(g, e, 0);
                    let e1 = row(g, e, 1);
                    g.concat(&[e0, e1, e], 0)
                } else {
                    e
                }
            })
            .collect();
        nets::video_disc(g, b, "dv", &self.config.disc, clip, &cond)
    }
}

impl Objective for VideoObjective<'_> {
    fn generator_nets(&self) -> &'static [&'static str] {
        &["g"]
    }

    fn disc_nets(&self) -> &'static [&'static str] {
        &["di", "de", "dv"]
    }

    fn forward(&self, g: &mut Graph, b: &Bound, rng: &mut dyn RngCore) -> Result<Fwd> {
        self.check()?;
        let cfg = &self.config.generator;
        let n = cfg.history_len;
        let mut fwd = Fwd::default();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.batch.len());
        let first = inputs_tensor(&self.batch.steps[0])?;
        let boot = if n > 0 {
            let x0 = g.constant(first);
            let out = nets::generator(g, b, "g", &cfg.image_variant(), x0, &[]);
            g.value(out.output).clone()
        } else {
            Tensor::scalar(0.0)
        };
        for (t, step) in self.batch.steps.iter().enumerate() {
            let x = g.constant(inputs_tensor(step)?);
            let mut hist = Vec::with_capacity(n);
            for mut h in history_slots(t, n, &boot, &outputs) {
                if self.noise_std > 0.0 {
                    crate::training::perturb(h.data_mut(), self.noise_std, rng);
                }
                hist.push(g.constant(h));
            }
            let out = nets::generator(g, b, "g", cfg, x, &hist);
            outputs.push(g.value(out.output).clone());
            fwd.put(format!("out.{}", t), out.output);
            fwd.put(format!("emb.{}", t), out.embedding);
        }
        fwd.pick = Some(rng.random_range(0..self.batch.len()));
        Ok(fwd)
    }

    fn d_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        self.check()?;
        let pick = fwd.pick.expect("video forward picks a frame");
        let mut terms = Terms::default();
        let ub = self.ub(g, pick);
        let di = image_disc_d_terms(
            g,
            b,
            self.config,
            ub,
            fwd.get(&format!("out.{}", pick)),
            fwd.get(&format!("emb.{}", pick)),
        );
        push_five(&mut terms, DI_D_NAMES, &di, self.lambda);

        let starts = self.window_starts();
        let mut per_term: Vec<Vec<NodeId>> = vec![Vec::new(); 5];
        for &s in &starts {
            let z = self.video_logits(g, b, fwd, s, true);
            for (i, slot) in per_term.iter_mut().enumerate() {
                let zi = row(g, z, i);
                slot.push(if i < 2 {
                    nll_real(g, zi)
                } else {
                    nll_fake(g, zi)
                });
            }
        }
        let dv: Vec<NodeId> = per_term.iter().map(|v| mean_of(g, v)).collect();
        push_five(
            &mut terms,
            [
                "DV_pos_fakeA",
                "DV_pos_fakeB",
                "DV_neg_fakeA",
                "DV_neg_fakeB",
                "DV_neg_real",
            ],
            &dv,
            self.lambda,
        );

        let mut de: Vec<Vec<NodeId>> = vec![Vec::new(); 3];
        for t in 0..self.batch.len() {
            for (i, id) in embed_d_terms(g, b, fwd.get(&format!("emb.{}", t)))
                .into_iter()
                .enumerate()
            {
                de[i].push(id);
            }
        }
        for (i, v) in de.iter().enumerate() {
            let m = mean_of(g, v);
            terms.push(
                format!("DE_{}", PAIR_NAMES[i]),
                pair_weight(i, self.lambda),
                m,
            );
        }
        Ok(terms)
    }

    fn g_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        self.check()?;
        let pick = fwd.pick.expect("video forward picks a frame");
        let mut terms = Terms::default();
        let di = image_disc_g_terms(
            g,
            b,
            self.config,
            fwd.get(&format!("out.{}", pick)),
            fwd.get(&format!("emb.{}", pick)),
        );
        for (i, id) in di.into_iter().enumerate() {
            terms.push(
                format!("adv_DI_{}", PAIR_NAMES[i]),
                pair_weight(i, self.lambda),
                id,
            );
        }

        let mut dv: Vec<Vec<NodeId>> = vec![Vec::new(); 3];
        for s in self.window_starts() {
            let z = self.video_logits(g, b, fwd, s, false);
            for (i, slot) in dv.iter_mut().enumerate() {
                let zi = row(g, z, i);
                slot.push(nll_real(g, zi));
            }
        }
        for (i, v) in dv.iter().enumerate() {
            let m = mean_of(g, v);
            terms.push(
                format!("adv_DV_{}", PAIR_NAMES[i]),
                pair_weight(i, self.lambda),
                m,
            );
        }

        let mut de = Vec::new();
        let mut r0 = Vec::new();
        let mut r1 = Vec::new();
        for t in 0..self.batch.len() {
            de.push(embed_g_term(g, b, fwd.get(&format!("emb.{}", t))));
            let ub = self.ub(g, t);
            let [a, c] = recon_terms(g, fwd.get(&format!("out.{}", t)), ub);
            r0.push(a);
            r1.push(c);
        }
        let de = mean_of(g, &de);
        terms.push("adv_DE_real", 1.0, de);
        let r0 = mean_of(g, &r0);
        let r1 = mean_of(g, &r1);
        terms.push("recon_fakeA", self.lambda, r0);
        terms.push("recon_fakeB", self.lambda, r1);
        Ok(terms)
    }
}

/// Video objective without history noise; `rng_seed` drives the choice of
/// the frame scored by the image discriminator.
pub fn video_objective(
    bundle: &ModelBundle,
    batch: &SequenceBatch,
    lambda_fake: f64,
    rng_seed: u64,
) -> Result<ObjectiveReports> {
    if !(lambda_fake >= 0.0) {
        return Err(invalid("lambda_fake must be non-negative"));
    }
    VideoObjective {
        config: &bundle.config,
        batch,
        lambda: lambda_fake,
        noise_std: 0.0,
    }
    .evaluate(bundle, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

fn mask_tensor(m: &BlendMask, invert: bool) -> Tensor {
    let plane = m.height() * m.width();
    let mut data = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        data.extend(m.values().iter().map(|&v| if invert { 1.0 - v } else { v }));
    }
    Tensor::new(&[1, 3, m.height(), m.width()], data)
}

/// Objectives of the learned baselines.
pub struct BaselineObjective<'a> {
    pub kind: Method,
    pub config: &'a ModelConfig,
    pub batch: &'a TrainingBatch,
    pub mask: &'a BlendMask,
    pub extractor: &'a dyn FeatureExtractor,
}

impl BaselineObjective<'_> {
    /// `x * m/2 + y * (1 - m/2)` on graph nodes.
    fn blend_nodes(&self, g: &mut Graph, x: NodeId, y: NodeId) -> NodeId {
        let half = mask_tensor(self.mask, false).map(|v| v / 2.0);
        let rest = half.map(|v| 1.0 - v);
        let hi = g.constant(half);
        let ri = g.constant(rest);
        let a = g.mul(x, hi);
        let c = g.mul(y, ri);
        g.add(a, c)
    }
}

impl Objective for BaselineObjective<'_> {
    fn generator_nets(&self) -> &'static [&'static str] {
        if self.kind == Method::Cycle {
            &["g", "f"]
        } else {
            &["g"]
        }
    }

    fn disc_nets(&self) -> &'static [&'static str] {
        if self.kind == Method::Cycle {
            &["di", "da"]
        } else {
            &["di"]
        }
    }

    fn forward(&self, g: &mut Graph, b: &Bound, _rng: &mut dyn RngCore) -> Result<Fwd> {
        let cfg = &self.config.generator;
        let mut fwd = Fwd::default();
        let x = frame_const(g, &self.batch.real.input);
        let out = nets::generator(g, b, "g", cfg, x, &[]);
        if self.kind != Method::Cycle {
            fwd.put("out", out.output);
            return Ok(fwd);
        }
        let s = &self.batch.sources;
        let xb = frame_const(g, &self.batch.fake_a.input);
        let v_b = nets::generator(g, b, "f", cfg, xb, &[]).output;
        let v_a = out.output;
        let inv = g.constant(mask_tensor(self.mask, true));
        let ua = frame_const(g, &s.u_a);
        let ub = frame_const(g, &s.u_b);
        let ua_bg = g.mul(ua, inv);
        let ub_bg = g.mul(ub, inv);
        let cyc_a = self.blend_nodes(g, v_a, ua_bg);
        let rec_a = nets::generator(g, b, "f", cfg, cyc_a, &[]).output;
        let cyc_b = self.blend_nodes(g, v_b, ub_bg);
        let rec_b = nets::generator(g, b, "g", cfg, cyc_b, &[]).output;
        fwd.put("v_a", v_a);
        fwd.put("v_b", v_b);
        fwd.put("rec_a", rec_a);
        fwd.put("rec_b", rec_b);
        Ok(fwd)
    }

    fn d_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        let s = &self.batch.sources;
        let disc = &self.config.disc;
        let mut terms = Terms::default();
        let mut pair = |g: &mut Graph, net: &str, real: &Frame, fake: NodeId, names: [&str; 2]| {
            let r = frame_const(g, real);
            let x = g.concat(&[r, fake], 0);
            let z = nets::image_disc(g, b, net, disc, x, None);
            let z0 = row(g, z, 0);
            let z1 = row(g, z, 1);
            let pos = nll_real(g, z0);
            let neg = nll_fake(g, z1);
            terms.push(names[0], 1.0, pos);
            terms.push(names[1], 1.0, neg);
        };
        if self.kind == Method::Cycle {
            pair(g, "di", &s.u_b, fwd.get("v_a"), ["DB_real", "DB_fake"]);
            pair(g, "da", &s.u_a, fwd.get("v_b"), ["DA_real", "DA_fake"]);
        } else {
            pair(g, "di", &s.u_b, fwd.get("out"), ["D_real", "D_fake"]);
        }
        Ok(terms)
    }

    fn g_terms(&self, g: &mut Graph, b: &Bound, fwd: &Fwd) -> Result<Terms> {
        let s = &self.batch.sources;
        let disc = &self.config.disc;
        let mut terms = Terms::default();
        let adv = |g: &mut Graph, net: &str, x: NodeId| {
            let z = nets::image_disc(g, b, net, disc, x, None);
            nll_real(g, z)
        };
        match self.kind {
            Method::Cycle => {
                let (v_a, v_b) = (fwd.get("v_a"), fwd.get("v_b"));
                let ag = adv(g, "di", v_a);
                let af = adv(g, "da", v_b);
                terms.push("adv_G", 1.0, ag);
                terms.push("adv_F", 1.0, af);
                let ua = frame_const(g, &s.u_a);
                let ub = frame_const(g, &s.u_b);
                let ca = l1_mean(g, fwd.get("rec_a"), ua);
                let cb = l1_mean(g, fwd.get("rec_b"), ub);
                terms.push("cyc_A", 1.0, ca);
                terms.push("cyc_B", 1.0, cb);
                let inv = g.constant(mask_tensor(self.mask, true));
                let rb = frame_const(g, &s.r_b);
                let ra = frame_const(g, &s.r_a);
                let va_bg = g.mul(v_a, inv);
                let rb_bg = g.mul(rb, inv);
                let vb_bg = g.mul(v_b, inv);
                let ra_bg = g.mul(ra, inv);
                let xa = l1_mean(g, va_bg, rb_bg);
                let xb = l1_mean(g, vb_bg, ra_bg);
                terms.push("ctx_A", 1.0, xa);
                terms.push("ctx_B", 1.0, xb);
            }
            kind => {
                let out = fwd.get("out");
                let a = adv(g, "di", out);
                terms.push("adv", 1.0, a);
                if kind == Method::Pixel || kind == Method::Perceptual {
                    let m = g.constant(mask_tensor(self.mask, false));
                    let ua = frame_const(g, &s.u_a);
                    let uam = g.mul(ua, m);
                    let vam = g.mul(out, m);
                    if kind == Method::Pixel {
                        let p = l1_mean(g, uam, vam);
                        terms.push("pixel", 1.0, p);
                    } else {
                        let p = perceptual_graph(g, self.extractor, uam, vam)?;
                        terms.push("perceptual", 1.0, p);
                    }
                }
            }
        }
        Ok(terms)
    }
}

pub fn baseline_objective(
    kind: Method,
    bundle: &ModelBundle,
    batch: &TrainingBatch,
    mask: &BlendMask,
    extractor: &dyn FeatureExtractor,
) -> Result<ObjectiveReports> {
    if kind == Method::Ours {
        return Err(invalid("`ours` is not a baseline objective"));
    }
    if kind == Method::Cycle && !(bundle.params.has_net("f") && bundle.params.has_net("da")) {
        return Err(invalid(
            "the cycle baseline needs the reverse generator and second discriminator",
        ));
    }
    if bundle.params.get("di.conv0.w").map(|w| w.shape()[1]) != Some(3) {
        return Err(invalid(
            "baselines need an unconditioned image discriminator",
        ));
    }
    BaselineObjective {
        kind,
        config: &bundle.config,
        batch,
        mask,
        extractor,
    }
    .evaluate(bundle, &mut ChaCha8Rng::seed_from_u64(0))
}

/// The four content terms of the cycle baseline from precomputed frames:
/// `|rec_a - u_a|`, `|rec_b - u_b|`, `|(v_a - r_b)(1-m)|`, `|(v_b - r_a)(1-m)|`,
/// each a mean over pixels and channels.
pub fn cycle_content_terms(
    s: &PatchSources,
    m: &BlendMask,
    v_a: &Frame,
    v_b: &Frame,
    rec_a: &Frame,
    rec_b: &Frame,
) -> Result<[f64; 4]> {
    let all = [&s.u_a, &s.u_b, &s.r_a, &s.r_b, v_a, v_b, rec_a, rec_b];
    if all
        .iter()
        .any(|f| f.height() != m.height() || f.width() != m.width())
    {
        return Err(invalid("cycle terms need frames of the mask size"));
    }
    let n = (m.height() * m.width() * 3) as f64;
    let l1 = |a: &Frame, b: &Frame| {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n
    };
    let ctx = |a: &Frame, b: &Frame| {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .enumerate()
            .map(|(i, (x, y))| ((x - y) * (1.0 - m.values()[i / 3])).abs())
            .sum::<f64>()
            / n
    };
    Ok([
        l1(rec_a, &s.u_a),
        l1(rec_b, &s.u_b),
        ctx(v_a, &s.r_b),
        ctx(v_b, &s.r_a),
    ])
}
