//! Diffusion timestep conditioning: sinusoidal features of the integer
//! timestep pushed through a small MLP.

use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::ParamStore;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Transformer-style sinusoid: pairs (sin, cos) at geometrically spaced
/// frequencies from 1 down to 1/10000. `dim` must be even.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0 && dim > 0);
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let omega = (-(10000.0f64.ln()) * k as f64 / half as f64).exp();
        out[2 * k] = (t * omega).sin();
        out[2 * k + 1] = (t * omega).cos();
    }
    out
}

/// Sinusoid + two-layer GELU MLP, emitting a `(1, dim)` conditioning row.
pub struct TimestepEmbedder {
    fc1: Linear,
    fc2: Linear,
    pub dim: usize,
}

impl TimestepEmbedder {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut CounterRng) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::invalid(
                "timestep_embed",
                format!("embedding dim {dim} must be positive and even"),
            ));
        }
        Ok(TimestepEmbedder {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), dim, dim, true, rng)?,
            fc2: Linear::new(store, &format!("{prefix}.fc2"), dim, dim, true, rng)?,
            dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, t: usize) -> Result<TensorId> {
        let sin = Tensor::new(vec![1, self.dim], sinusoidal_embedding(t as f64, self.dim))?;
        let x = tape.leaf(sin);
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }
}
