//! Named parameter storage shared by all model components.
//!
//! A [`ParamStore`] owns every learnable tensor; forward passes bind
//! parameters onto a [`Tape`] with [`ParamStore::bind`], which memoizes per
//! tape so a parameter reused twice in one graph gets a single node and its
//! gradient accumulates there. The store also round-trips through checkpoint
//! files by registration order.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::checkpoint;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Stable handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(
                "params::register",
                format!("duplicate parameter name {name:?}"),
            ));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform in ±√(6/fan_in), the ReLU-gain scheme for conv kernels.
    /// `fan_in` is the product of all non-leading kernel dimensions.
    pub fn kaiming_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        rng: &mut CounterRng,
    ) -> Result<ParamId> {
        if shape.len() < 2 {
            return Err(Error::invalid(
                "params::kaiming_uniform",
                format!("need at least 2 dims, got {shape:?}"),
            ));
        }
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        self.register(name, random_uniform(shape, bound, rng))
    }

    /// Uniform in ±√(6/(in+out)) over an (in, out) matrix; used for
    /// attention and linear projections.
    pub fn xavier_uniform(
        &mut self,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut CounterRng,
    ) -> Result<ParamId> {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        self.register(name, random_uniform(&[in_dim, out_dim], bound, rng))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.register(name, Tensor::ones(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Place the parameter on the tape as a gradient-carrying leaf. Repeat
    /// binds of the same parameter on the same tape return the same node.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> TensorId {
        if let Some(&existing) = tape.bound.get(&id.0) {
            return existing;
        }
        let node = tape.var(self.tensors[id.0].clone());
        tape.bound.insert(id.0, node);
        node
    }

    /// Gradient recorded on this tape for the parameter, if backward reached it.
    pub fn grad_on<'t>(&self, tape: &'t Tape, id: ParamId) -> Option<&'t [f64]> {
        tape.bound.get(&id.0).and_then(|&node| tape.grad(node))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Tensor)> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        checkpoint::save(path, &entries)
    }

    /// Load values into an already-built store. Every stored name must be
    /// present with a matching shape; extra names in the file are an error.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::load(path)?;
        if entries.len() != self.tensors.len() {
            return Err(Error::format(
                path,
                format!("checkpoint has {} tensors, model has {}", entries.len(), self.tensors.len()),
            ));
        }
        for (name, tensor) in entries {
            let id = self.lookup(&name).ok_or_else(|| {
                Error::format(path, format!("checkpoint tensor {name:?} is not a model parameter"))
            })?;
            if tensor.shape != self.tensors[id.0].shape {
                return Err(Error::format(
                    path,
                    format!(
                        "shape mismatch for {name:?}: checkpoint {:?}, model {:?}",
                        tensor.shape, self.tensors[id.0].shape
                    ),
                ));
            }
            self.tensors[id.0] = tensor;
        }
        Ok(())
    }
}

fn random_uniform(shape: &[usize], bound: f64, rng: &mut CounterRng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.zeros("w", &[2]).unwrap();
        assert!(store.zeros("w", &[2]).is_err());
    }

    #[test]
    fn kaiming_bound_scales_with_fan_in() {
        let mut rng = CounterRng::keyed(7, 0, "init-test");
        let mut store = ParamStore::new();
        let id = store.kaiming_uniform("k", &[8, 4, 3, 3], &mut rng).unwrap();
        let bound = (6.0 / 36.0f64).sqrt();
        let t = store.get(id);
        assert!(t.data.iter().all(|v| v.abs() <= bound));
        // With 288 draws the empirical max should come close to the bound.
        let max = t.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.8 * bound, "max {max} vs bound {bound}");
    }

    #[test]
    fn bind_memoizes_per_tape_and_grads_accumulate() {
        let mut store = ParamStore::new();
        let p = store.register("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let a = store.bind(&mut tape, p);
        let b = store.bind(&mut tape, p);
        assert_eq!(a, b);
        // loss = w * w uses the same node twice; d/dw = 2w = 6.
        let prod = tape.mul(a, b).unwrap();
        tape.backward(prod).unwrap();
        assert_eq!(store.grad_on(&tape, p).unwrap(), &[6.0]);
    }

    #[test]
    fn checkpoint_round_trip_restores_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.ckpt");
        let mut rng = CounterRng::keyed(1, 0, "ckpt-test");
        let mut store = ParamStore::new();
        store.kaiming_uniform("a", &[2, 3], &mut rng).unwrap();
        store.zeros("b", &[4]).unwrap();
        store.save(&path).unwrap();

        let mut other = ParamStore::new();
        other.zeros("a", &[2, 3]).unwrap();
        other.ones("b", &[4]).unwrap();
        other.load(&path).unwrap();
        let a = other.lookup("a").unwrap();
        // Tensor files hold f32, so values come back at f32 precision exactly.
        for (orig, back) in store.get(store.lookup("a").unwrap()).data.iter().zip(&other.get(a).data) {
            assert_eq!(*back, (*orig as f32) as f64);
        }
        assert_eq!(other.get(other.lookup("b").unwrap()).data, vec![0.0; 4]);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut store = ParamStore::new();
        store.zeros("w", &[2, 2]).unwrap();
        store.save(&path).unwrap();
        let mut other = ParamStore::new();
        other.zeros("w", &[3]).unwrap();
        assert!(other.load(&path).is_err());
    }
}
