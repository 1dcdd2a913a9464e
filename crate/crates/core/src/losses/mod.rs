//! Scalar loss helpers, loss reports and the training objectives.
//!
//! Adversarial terms are computed from discriminator logits:
//! `-log sigmoid(z) = softplus(-z)` and `-log(1 - sigmoid(z)) = softplus(z)`.

mod objectives;
mod perceptual;

pub use objectives::{
    baseline_objective, cycle_content_terms, history_slots, image_objective, video_objective,
    BaselineObjective, Fwd, ImageObjective, Objective, ObjectiveReports, VideoObjective,
};
pub use perceptual::{
    perceptual_distance, perceptual_graph, FeatureExtractor, IdentityExtractor, RandomConvExtractor,
};

use std::collections::BTreeMap;

use autodiff::{Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::dataio::Frame;
use crate::error::{invalid, Error, Result};

/// Default weight of every term derived from a fake pair.
pub const LAMBDA_FAKE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Discriminator,
    Generator,
}

fn check_score(score: f64) -> Result<()> {
    if !(score > 0.0 && score < 1.0) {
        return Err(invalid(format!(
            "discriminator score {} is outside (0, 1)",
            score
        )));
    }
    Ok(())
}

/// Negative log-likelihood of one discriminator score.
///
/// As discriminator: `-log(score)` for a real target and `-log(1 - score)`
/// otherwise. As generator the loss is the non-saturating `-log(score)`.
pub fn adversarial_term(score: f64, target_is_real: bool, role: Role) -> Result<f64> {
    check_score(score)?;
    Ok(match role {
        Role::Discriminator if !target_is_real => -(1.0 - score).ln(),
        _ => -score.ln(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingScores {
    pub fake_a: f64,
    pub fake_b: f64,
    pub real: f64,
}

/// Embedding-discriminator loss. The discriminator labels fake-pair
/// embeddings 1 and the real-pair embedding 0; the encoder side only tries
/// to make the real-pair embedding look fake-pair-like.
pub fn embedding_adversarial(scores: EmbeddingScores, role: Role) -> Result<f64> {
    for s in [scores.fake_a, scores.fake_b, scores.real] {
        check_score(s)?;
    }
    Ok(match role {
        Role::Discriminator => -scores.fake_a.ln() - scores.fake_b.ln() - (1.0 - scores.real).ln(),
        Role::Generator => -scores.real.ln(),
    })
}

/// Mean absolute difference over all pixels and channels.
pub fn reconstruction_loss(output: &Frame, target: &Frame) -> Result<f64> {
    if !output.same_size(target) {
        return Err(invalid(format!(
            "reconstruction of a {}x{} output against a {}x{} target",
            output.height(),
            output.width(),
            target.height(),
            target.width()
        )));
    }
    let n = output.pixels().len() as f64;
    Ok(output
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Weighted loss components with their reconciled total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted component values.
    pub components: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }

    /// `sum(weight * component)`, recomputed.
    pub fn weighted_sum(&self) -> f64 {
        self.components
            .iter()
            .map(|(k, v)| self.weights.get(k).copied().unwrap_or(0.0) * v)
            .sum()
    }

    /// Errors naming the first non-finite component.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        for (k, v) in &self.components {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    component: k.clone(),
                    step,
                });
            }
        }
        if !self.total.is_finite() {
            return Err(Error::NonFinite {
                component: "total".into(),
                step,
            });
        }
        Ok(())
    }

    /// Sum of the components whose name starts with `prefix`.
    pub fn family(&self, prefix: &str) -> f64 {
        self.components
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }
}

/// Named scalar graph nodes with weights.
#[derive(Default)]
pub struct Terms {
    entries: Vec<(String, f64, NodeId)>,
}

impl Terms {
    pub fn push(&mut self, name: impl Into<String>, weight: f64, node: NodeId) {
        self.entries.push((name.into(), weight, node));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The weighted-sum node to differentiate.
    pub fn total(&self, g: &mut Graph) -> NodeId {
        let ids: Vec<NodeId> = self.entries.iter().map(|e| e.2).collect();
        let ws: Vec<f64> = self.entries.iter().map(|e| e.1).collect();
        g.weighted_sum(&ids, &ws)
    }

    pub fn report(&self, g: &Graph, total: NodeId) -> LossReport {
        let mut r = LossReport {
            total: g.value(total).item(),
            ..Default::default()
        };
        for (name, w, id) in &self.entries {
            r.components.insert(name.clone(), g.value(*id).item());
            r.weights.insert(name.clone(), *w);
        }
        r
    }
}

/// `-log sigmoid(z)` averaged over the elements of `z`.
pub fn nll_real(g: &mut Graph, z: NodeId) -> NodeId {
    let neg = g.scale(z, -1.0);
    let sp = g.softplus(neg);
    g.mean(sp)
}

/// `-log(1 - sigmoid(z))` averaged over the elements of `z`.
pub fn nll_fake(g: &mut Graph, z: NodeId) -> NodeId {
    let sp = g.softplus(z);
    g.mean(sp)
}

/// Mean absolute difference of two equally shaped nodes.
pub fn l1_mean(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let ad = g.abs(d);
    g.mean(ad)
}
