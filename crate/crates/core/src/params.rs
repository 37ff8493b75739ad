//! Named parameter tensors and their binding into a graph.

use std::collections::HashMap;

use cuedepth_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    /// Appends every entry of `other` with `prefix` prepended to its name.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for (n, t) in &other.entries {
            self.entries.push((format!("{prefix}{n}"), t.clone()));
        }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Lookup(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) {
        assert_eq!(tensors.len(), self.entries.len());
        for ((_, slot), t) in self.entries.iter_mut().zip(tensors) {
            debug_assert_eq!(slot.shape(), t.shape());
            *slot = t;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let mut map = HashMap::with_capacity(self.entries.len());
        let mut order = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            let v = g.param(t.clone());
            map.insert(n.clone(), v);
            order.push(v);
        }
        Bound { map, order }
    }
}

/// Graph handles for a bound [`ParamSet`], in insertion order.
pub struct Bound {
    map: HashMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.order
    }
}

/// He-normal initialized tensor with the given fan-in.
pub(crate) fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("extents match data")
}
