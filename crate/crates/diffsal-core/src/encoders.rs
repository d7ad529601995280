//! Conditioning encoders: a 4-level spatio-temporal video pyramid and a
//! temporally-enhanced audio feature map.
//!
//! The video encoder is a compact strided conv3d stand-in for a large
//! pretrained backbone: the rest of the system only depends on the pyramid
//! shape contract, so the backbone is swappable. The audio encoder runs a
//! small conv stack per spectrogram slice, adds a learnable temporal
//! position embedding, and applies one pre-norm transformer block where
//! attention mixes the slice (time) axis independently at each spatial
//! location.
//!
//! Feature maps are channels-last: video level i is (T_v^i, h_i, w_i, C_i)
//! with h_i = ceil(H / 2^(i+1)), channels C_base * 2^(i-1), and temporal
//! extent halving at stages 3 and 4. Audio features are (T_a, h_a, w_a, C_a)
//! with h_a = ceil(H_a / 4) and C_a = 2 * C_base.

use crate::audio::LogMelSlices;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Conv3d, GroupNormAll, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

pub const PYRAMID_LEVELS: usize = 4;
/// Hidden width multiplier of the transformer MLP.
pub const MLP_EXPANSION: usize = 2;

/// Four video feature levels, coarsest last, each (T, h, w, C).
pub struct VideoFeaturePyramid {
    pub levels: Vec<TensorId>,
}

/// Audio features (T_a, h_a, w_a, C_a).
pub struct AudioFeatureMap {
    pub features: TensorId,
}

/// Spatial extent of pyramid level `i` (1-based) for an input extent.
pub fn pyramid_extent(input: usize, level: usize) -> usize {
    let mut e = input;
    for _ in 0..level + 1 {
        e = e.div_ceil(2);
    }
    e.max(1)
}

/// Temporal extent at stage `i` (1-based): unchanged through stage 2, then
/// halved (rounding up) at stages 3 and 4.
pub fn pyramid_temporal(t: usize, level: usize) -> usize {
    match level {
        1 | 2 => t,
        3 => t.div_ceil(2),
        _ => t.div_ceil(2).div_ceil(2),
    }
}

// ---------------------------------------------------------------------------
// Video encoder
// ---------------------------------------------------------------------------

struct VideoStage {
    conv_a: Conv3d,
    norm_a: GroupNormAll,
    conv_b: Conv3d,
    norm_b: GroupNormAll,
}

/// 4-stage conv3d pyramid encoder over (T, H, W, 3) clips.
pub struct VideoEncoder {
    stages: Vec<VideoStage>,
    pub c_base: usize,
}

impl VideoEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, c_base: usize, rng: &mut CounterRng) -> Result<Self> {
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        let mut c_in = 3;
        for i in 1..=PYRAMID_LEVELS {
            let c_out = c_base << (i - 1);
            // Stage 1 halves space twice; later stages halve once. Stages 3
            // and 4 also halve time.
            let t_stride = if i >= 3 { 2 } else { 1 };
            let stride_a = [t_stride, 2, 2];
            let stride_b = if i == 1 { [1, 2, 2] } else { [1, 1, 1] };
            let p = format!("{prefix}.stage{i}");
            stages.push(VideoStage {
                conv_a: Conv3d::new(
                    store, &format!("{p}.conv_a"), c_in, c_out,
                    [3, 3, 3], stride_a, [1, 1, 1], true, rng,
                )?,
                norm_a: GroupNormAll::new(store, &format!("{p}.norm_a"), c_out)?,
                conv_b: Conv3d::new(
                    store, &format!("{p}.conv_b"), c_out, c_out,
                    [3, 3, 3], stride_b, [1, 1, 1], true, rng,
                )?,
                norm_b: GroupNormAll::new(store, &format!("{p}.norm_b"), c_out)?,
            });
            c_in = c_out;
        }
        Ok(VideoEncoder { stages, c_base })
    }

    /// Channel widths per level.
    pub fn channels(&self) -> Vec<usize> {
        (0..PYRAMID_LEVELS).map(|i| self.c_base << i).collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        clip: TensorId,
    ) -> Result<VideoFeaturePyramid> {
        let shape = tape.shape(clip).to_vec();
        if shape.len() != 4 || shape[3] != 3 {
            return Err(Error::invalid(
                "video_encode",
                format!("expected (T, H, W, 3) clip, got {shape:?}"),
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        if h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4 {
            return Err(Error::invalid(
                "video_encode",
                format!("spatial size {h}x{w} must be divisible by 4"),
            ));
        }
        // (T, H, W, 3) -> (3, T, H, W) for convolution.
        let mut x = tape.permute(clip, &[3, 0, 1, 2])?;
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for stage in &self.stages {
            let a = stage.conv_a.forward(tape, store, x)?;
            let a = stage.norm_a.forward(tape, store, a)?;
            let a = tape.relu(a);
            let b = stage.conv_b.forward(tape, store, a)?;
            let b = stage.norm_b.forward(tape, store, b)?;
            x = tape.relu(b);
            // Levels are exposed channels-last.
            levels.push(tape.permute(x, &[1, 2, 3, 0])?);
        }
        Ok(VideoFeaturePyramid { levels })
    }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

/// Projection bundle for scaled dot-product self-attention.
pub struct Msa {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl Msa {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        heads: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid(
                "msa",
                format!("{heads} heads must divide {channels} channels"),
            ));
        }
        Ok(Msa {
            wq: Linear::new(store, &format!("{prefix}.wq"), channels, channels, true, rng)?,
            wk: Linear::new(store, &format!("{prefix}.wk"), channels, channels, true, rng)?,
            wv: Linear::new(store, &format!("{prefix}.wv"), channels, channels, true, rng)?,
            wo: Linear::new(store, &format!("{prefix}.wo"), channels, channels, true, rng)?,
            heads,
        })
    }

    /// Self-attention over the token axis of (tokens, C) or (batch, tokens, C).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let q = self.wq.forward(tape, store, x)?;
        let k = self.wk.forward(tape, store, x)?;
        let v = self.wv.forward(tape, store, x)?;
        let mixed = tape.attention(q, k, v, self.heads)?;
        self.wo.forward(tape, store, mixed)
    }
}

// ---------------------------------------------------------------------------
// Audio encoder
// ---------------------------------------------------------------------------

/// Per-slice conv stack + temporal transformer block.
pub struct AudioEncoder {
    conv1: Conv2d,
    conv2: Conv2d,
    patch: Conv2d,
    pub pos: ParamId,
    ln_attn: LayerNorm,
    msa: Msa,
    ln_mlp: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
    pub c_audio: usize,
    pub slices: usize,
}

impl AudioEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_base: usize,
        slices: usize,
        heads: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let c_audio = 2 * c_base;
        Ok(AudioEncoder {
            conv1: Conv2d::new(store, &format!("{prefix}.conv1"), 1, c_base, 3, 2, 1, true, rng)?,
            conv2: Conv2d::new(store, &format!("{prefix}.conv2"), c_base, c_base, 3, 2, 1, true, rng)?,
            patch: Conv2d::new(store, &format!("{prefix}.patch"), c_base, c_audio, 1, 1, 0, true, rng)?,
            pos: store.zeros(&format!("{prefix}.pos"), &[slices, 1, 1, c_audio])?,
            ln_attn: LayerNorm::new(store, &format!("{prefix}.ln_attn"), &[c_audio])?,
            msa: Msa::new(store, &format!("{prefix}.msa"), c_audio, heads, rng)?,
            ln_mlp: LayerNorm::new(store, &format!("{prefix}.ln_mlp"), &[c_audio])?,
            mlp_in: Linear::new(
                store, &format!("{prefix}.mlp_in"), c_audio, MLP_EXPANSION * c_audio, true, rng,
            )?,
            mlp_out: Linear::new(
                store, &format!("{prefix}.mlp_out"), MLP_EXPANSION * c_audio, c_audio, true, rng,
            )?,
            c_audio,
            slices,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        slices: TensorId,
    ) -> Result<AudioFeatureMap> {
        let shape = tape.shape(slices).to_vec();
        if shape.len() != 4 || shape[3] != 1 {
            return Err(Error::invalid(
                "audio_encode",
                format!("expected (T_a, H_a, W_a, 1) slices, got {shape:?}"),
            ));
        }
        if shape[0] != self.slices {
            return Err(Error::invalid(
                "audio_encode",
                format!("encoder built for {} slices, got {}", self.slices, shape[0]),
            ));
        }
        let (t_a, h_in, w_in) = (shape[0], shape[1], shape[2]);

        // Per-slice conv stack, then restack along time.
        let mut maps = Vec::with_capacity(t_a);
        for t in 0..t_a {
            let tile = tape.slice_axis(slices, 0, t, 1)?;
            let tile = tape.reshape(tile, &[h_in, w_in, 1])?;
            let tile = tape.permute(tile, &[2, 0, 1])?; // (1, H_a, W_a)
            let x = self.conv1.forward(tape, store, tile)?;
            let x = tape.relu(x);
            let x = self.conv2.forward(tape, store, x)?;
            let x = tape.relu(x);
            let x = self.patch.forward(tape, store, x)?; // (C_a, h_a, w_a)
            let x = tape.permute(x, &[1, 2, 0])?; // (h_a, w_a, C_a)
            let s = tape.shape(x).to_vec();
            maps.push(tape.reshape(x, &[1, s[0], s[1], s[2]])?);
        }
        let stacked = tape.concat(&maps, 0)?; // (T_a, h_a, w_a, C_a)
        let pos = store.bind(tape, self.pos);
        let with_pos = tape.add(stacked, pos)?;

        // Attend over time independently at each spatial site.
        let s = tape.shape(with_pos).to_vec();
        let (h_a, w_a, c) = (s[1], s[2], s[3]);
        let sites = tape.permute(with_pos, &[1, 2, 0, 3])?; // (h, w, T, C)
        let tokens = tape.reshape(sites, &[h_a * w_a, t_a, c])?;
        let normed = self.ln_attn.forward(tape, store, tokens)?;
        let mixed = self.msa.forward(tape, store, normed)?;
        let after_attn = tape.add(mixed, tokens)?;
        let normed2 = self.ln_mlp.forward(tape, store, after_attn)?;
        let hidden = self.mlp_in.forward(tape, store, normed2)?;
        let hidden = tape.gelu(hidden);
        let expanded = self.mlp_out.forward(tape, store, hidden)?;
        let out = tape.add(expanded, after_attn)?;
        let out = tape.reshape(out, &[h_a, w_a, t_a, c])?;
        let features = tape.permute(out, &[2, 0, 1, 3])?; // (T_a, h_a, w_a, C_a)
        Ok(AudioFeatureMap { features })
    }

    /// Convenience: encode a frontend output.
    pub fn encode_slices(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mel: &LogMelSlices,
    ) -> Result<AudioFeatureMap> {
        let id = tape.leaf(mel.slices.clone());
        self.forward(tape, store, id)
    }
}
