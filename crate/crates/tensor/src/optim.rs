use crate::array::Array;
use crate::graph::Gradients;
use crate::params::{ParamKind, ParamStore};
use crate::real::Real;

/// Stochastic gradient descent with classical momentum:
/// `v = momentum * v + g; p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Option<Array<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self { lr, momentum, weight_decay: T::zero(), velocity: Vec::new() }
    }

    pub fn with_weight_decay(mut self, wd: T) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Applies one update. If `clip_norm` is set, the global gradient norm is
    /// rescaled to at most that value first. Returns the pre-clip norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, clip_norm: Option<T>) -> T {
        let pg = grads.params();
        let norm = pg
            .iter()
            .filter(|(id, _)| store.entry(*id).kind == ParamKind::Trainable)
            .map(|(_, g)| g.dot(g))
            .sum::<T>()
            .sqrt();
        let factor = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => T::one(),
        };
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, g) in pg {
            if store.entry(id).kind != ParamKind::Trainable {
                continue;
            }
            let p = store.get_mut(id);
            let v = self.velocity[id.index()].get_or_insert_with(|| Array::zeros(p.shape().to_vec()));
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut().iter_mut()) {
                let grad = gi * factor + self.weight_decay * *pi;
                *vi = self.momentum * *vi + grad;
                *pi -= self.lr * *vi;
            }
        }
        norm
    }
}
