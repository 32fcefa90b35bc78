use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Gradients, Tape, ValueId};
use super::tensor::Tensor;

/// Index of a parameter within a [`ParamSet`]. Stable for the lifetime of
/// the set; models hold these instead of names on their hot paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Vec<S>,
}

/// The trainable state of one model: named parameters, their values and
/// gradients. Names are unique, path-like strings such as
/// `modblock.2.conv.weight`, and double as the checkpoint manifest keys.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    entries: Vec<Param<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(alloc::format!("duplicate parameter name `{name}`")));
        }
        let grad = vec![S::ZERO; value.numel()];
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<S>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    /// Replaces a parameter's value by name; the shape must match.
    pub fn set_by_name(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let Some(&i) = self.by_name.get(name) else {
            return Err(Error::Config(alloc::format!("unknown parameter `{name}`")));
        };
        if value.shape() != self.entries[i].value.shape() {
            return Err(Error::Config(alloc::format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.entries[i].value.shape(),
                value.shape()
            )));
        }
        self.entries[i].value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.entries.iter_mut()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.entries[id.0].value.shape() {
            return Err(Error::Config(alloc::format!(
                "parameter `{}` shape mismatch",
                self.entries[id.0].name
            )));
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = S::ZERO);
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    /// Pushes every parameter onto a tape as a tracked leaf, in index
    /// order. The returned binding maps `ParamId` -> `ValueId`.
    pub fn bind(&self, tape: &mut Tape<S>) -> ParamBinding {
        let ids = self.entries.iter().map(|p| tape.leaf(p.value.clone())).collect();
        ParamBinding { ids }
    }

    /// Like [`ParamSet::bind`] but untracked, for gradient-free passes
    /// (validation, inference): the reverse machinery never allocates for
    /// these values.
    pub fn bind_constants(&self, tape: &mut Tape<S>) -> ParamBinding {
        let ids = self.entries.iter().map(|p| tape.constant(p.value.clone())).collect();
        ParamBinding { ids }
    }

    /// Adds the tape gradients of one reverse pass into the accumulators.
    pub fn accumulate(&mut self, binding: &ParamBinding, grads: &mut Gradients<S>) {
        for (i, p) in self.entries.iter_mut().enumerate() {
            if let Some(g) = grads.take(binding.ids[i]) {
                for (acc, gv) in p.grad.iter_mut().zip(&g) {
                    *acc += *gv;
                }
            }
        }
    }

    /// Casts every parameter to a different scalar precision, keeping
    /// names and shapes (gradients reset to zero).
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for p in &self.entries {
            out.add(&p.name, p.value.cast()).expect("names already unique");
        }
        out
    }
}

/// Tape ids for one pass over a bound parameter set.
pub struct ParamBinding {
    ids: Vec<ValueId>,
}

impl ParamBinding {
    pub fn id(&self, p: ParamId) -> ValueId {
        self.ids[p.0]
    }

    /// All bound value ids, in parameter-set index order.
    pub fn value_ids(&self) -> &[ValueId] {
        &self.ids
    }
}
