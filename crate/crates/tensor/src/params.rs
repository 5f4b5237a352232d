use std::collections::HashMap;

use rand::Rng;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Saved with the model but never receives gradients (running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Array<T>,
    pub kind: ParamKind,
}

/// Named parameter set keyed by stable string paths such as
/// `unet.enc.0.conv.weight`. Insertion order is the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, kind });
        Ok(id)
    }

    /// Kernel drawn from `uniform(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn add_kernel<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let value = Array::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-bound..bound)));
        self.add(name, value, ParamKind::Trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].kind == ParamKind::Trainable)
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// Copies values from `(name, array)` pairs, validating every name and
    /// shape first. Nothing is modified unless all entries match.
    pub fn load_named<U: Real>(&mut self, named: &[(String, Array<U>)]) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = vec![false; self.entries.len()];
        for (name, arr) in named {
            match self.index.get(name) {
                None => problems.push(format!("unexpected entry `{name}` with shape {:?}", arr.shape())),
                Some(id) => {
                    seen[id.0] = true;
                    let want = self.entries[id.0].value.shape();
                    if want != arr.shape() {
                        problems.push(format!(
                            "`{name}`: checkpoint shape {:?}, model expects {want:?}",
                            arr.shape()
                        ));
                    }
                }
            }
        }
        for (entry, seen) in self.entries.iter().zip(&seen) {
            if !seen {
                problems.push(format!("missing entry `{}` with shape {:?}", entry.name, entry.value.shape()));
            }
        }
        if !problems.is_empty() {
            return Err(TensorError::CheckpointMismatch(problems));
        }
        for (name, arr) in named {
            let id = self.index[name];
            self.entries[id.0].value = arr.cast();
        }
        Ok(())
    }

    /// Same layout with every value converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), kind: e.kind })
                .collect(),
            index: self.index.clone(),
        }
    }
}
