//! Small trainable building blocks: linear, conv, and normalization layers.
//!
//! A layer is a bundle of [`ParamId`]s plus a forward method; the tensors
//! themselves live in the shared [`ParamStore`], so checkpointing and
//! optimization see every layer uniformly.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const GROUP_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// `y = x W + b` over the trailing axis; `x` is (..., in), `W` is (in, out).
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let w = store.xavier_uniform(&format!("{prefix}.w"), in_dim, out_dim, rng)?;
        let b = if bias {
            Some(store.zeros(&format!("{prefix}.b"), &[out_dim])?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let w = store.bind(tape, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = store.bind(tape, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d / Conv3d
// ---------------------------------------------------------------------------

/// Square-kernel 2-D convolution over (C_in, H, W) inputs.
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let kernel =
            store.kaiming_uniform(&format!("{prefix}.kernel"), &[c_out, c_in, k, k], rng)?;
        let bias = if bias {
            Some(store.zeros(&format!("{prefix}.bias"), &[c_out, 1, 1])?)
        } else {
            None
        };
        Ok(Conv2d { kernel, bias, stride, padding })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let kernel = store.bind(tape, self.kernel);
        let y = tape.conv2d(x, kernel, self.stride, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = store.bind(tape, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// 3-D convolution over (C_in, T, H, W) inputs with per-axis stride/padding.
pub struct Conv3d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let kernel = store.kaiming_uniform(
            &format!("{prefix}.kernel"),
            &[c_out, c_in, k[0], k[1], k[2]],
            rng,
        )?;
        let bias = if bias {
            Some(store.zeros(&format!("{prefix}.bias"), &[c_out, 1, 1, 1])?)
        } else {
            None
        };
        Ok(Conv3d { kernel, bias, stride, padding })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let kernel = store.bind(tape, self.kernel);
        let y = tape.conv3d(x, kernel, self.stride, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = store.bind(tape, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Layer norm over the trailing axes given by `normalized_shape`, with
/// learnable gain (ones) and bias (zeros) of that shape.
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    norm_axes: usize,
}

impl LayerNorm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        normalized_shape: &[usize],
    ) -> Result<Self> {
        let gain = store.ones(&format!("{prefix}.gain"), normalized_shape)?;
        let bias = store.zeros(&format!("{prefix}.bias"), normalized_shape)?;
        Ok(LayerNorm { gain, bias, norm_axes: normalized_shape.len() })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let gain = store.bind(tape, self.gain);
        let bias = store.bind(tape, self.bias);
        tape.layer_norm(x, self.norm_axes, Some(gain), Some(bias), LAYER_NORM_EPS)
    }
}

/// Single-group group norm for (C, T, H, W) features: standardize over every
/// element, then apply a per-channel affine.
pub struct GroupNormAll {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl GroupNormAll {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        let gain = store.ones(&format!("{prefix}.gain"), &[channels, 1, 1, 1])?;
        let bias = store.zeros(&format!("{prefix}.bias"), &[channels, 1, 1, 1])?;
        Ok(GroupNormAll { gain, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let mu = tape.mean_all(x);
        let centered = tape.sub(x, mu)?;
        let sq = tape.mul(centered, centered)?;
        let var = tape.mean_all(sq);
        let var_eps = tape.add_scalar(var, GROUP_NORM_EPS);
        let std = tape.sqrt(var_eps);
        let normalized = tape.div(centered, std)?;
        let gain = store.bind(tape, self.gain);
        let bias = store.bind(tape, self.bias);
        let scaled = tape.mul(normalized, gain)?;
        tape.add(scaled, bias)
    }
}
