use std::collections::BTreeMap;

use autodiff::{Graph, NodeId, Tensor};

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn has_net(&self, net: &str) -> bool {
        let prefix = format!("{}.", net);
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// Parameters of some networks loaded into a graph.
#[derive(Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Adds every parameter of the listed networks to `g`, as variables if
    /// `trainable` and as constants otherwise.
    pub fn bind(&mut self, g: &mut Graph, params: &ParamSet, nets: &[&str], trainable: bool) {
        for net in nets {
            let prefix = format!("{}.", net);
            for (name, t) in params.tensors.range(prefix.clone()..) {
                if !name.starts_with(&prefix) {
                    break;
                }
                let id = if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                };
                self.ids.insert(name.clone(), id);
            }
        }
    }

    pub fn new(g: &mut Graph, params: &ParamSet, nets: &[&str], trainable: bool) -> Self {
        let mut b = Self::default();
        b.bind(g, params, nets, trainable);
        b
    }

    /// Node of parameter `name`.
    ///
    /// # Panics
    ///
    /// If the parameter was never bound; parameter sets are built from
    /// validated configs, so this is a programming error.
    pub fn id(&self, name: &str) -> NodeId {
        match self.ids.get(name) {
            Some(&id) => id,
            None => panic!("parameter `{}` is not bound", name),
        }
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}
