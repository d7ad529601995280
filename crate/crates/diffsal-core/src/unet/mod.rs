//! Conditional denoiser: predicts the clean saliency map in signal space
//! from a noisy map, the diffusion timestep, and the audio-visual
//! conditioning features.
//!
//! Four decoder stages run coarsest to finest, one per pyramid level. Each
//! stage stacks the video features with the matching noise-map features into
//! a query stream, folds in the previous stage's output (spatially resized,
//! channel-projected, temporally interpolated), fuses aligned audio with the
//! query, applies cross-attention, and closes with a temporal conv residual.
//! The head averages the finest stage over time, maps it to one channel, and
//! upsamples back to the input grid.
//!
//! The map prediction is deliberately unbounded: the sampling loop clamps it
//! to [-1, 1] each step. A squashing head would need saturated activations
//! to express the flat background at exactly -1, which starves the gradient
//! everywhere else.

pub mod cross;
pub mod fusion;
pub mod noise;
pub mod timestep;

pub use cross::{compressed_extents, compressed_tokens, padded_tokens, CrossAttention, Eca, Sca, Stc};
pub use fusion::{mim_mask, AudioAlign, Fusion, FusionKind};
pub use noise::NoiseEncoder;
pub use timestep::{sinusoidal_embedding, TimestepEmbedder};

use crate::encoders::{AudioFeatureMap, VideoFeaturePyramid, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Conv3d, Linear};
use crate::params::ParamStore;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Attention form used by every decoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Compressed keys/values (the default).
    Efficient,
    /// Dense attention over all tokens.
    Standard,
}

impl AttentionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "efficient" | "eca" => Ok(AttentionKind::Efficient),
            "standard" | "sca" => Ok(AttentionKind::Standard),
            other => Err(Error::invalid(
                "attention",
                format!("unknown attention kind '{other}' (efficient|standard)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Efficient => "efficient",
            AttentionKind::Standard => "standard",
        }
    }
}

/// Width and wiring choices for the denoiser.
#[derive(Debug, Clone)]
pub struct UNetConfig {
    pub c_base: usize,
    pub heads: usize,
    pub fusion: FusionKind,
    pub attention: AttentionKind,
    /// Exchange which stream feeds keys vs values in cross-attention.
    pub swap_kv: bool,
}

impl UNetConfig {
    pub fn new(c_base: usize, heads: usize) -> Self {
        UNetConfig {
            c_base,
            heads,
            fusion: FusionKind::Mim,
            attention: AttentionKind::Efficient,
            swap_kv: false,
        }
    }

    /// Timestep embedding width.
    pub fn t_dim(&self) -> usize {
        4 * self.c_base
    }

    /// Channels at stage `i` (1-based), shared with the feature pyramids.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.c_base << (i - 1)
    }
}

/// Static shape facts about one decoder stage.
#[derive(Debug, Clone, Copy)]
pub struct MamStageConfig {
    /// 1-based stage index; stage 1 is the finest grid.
    pub index: usize,
    pub channels: usize,
    /// Key/value compression factor, `2^index`.
    pub k: usize,
}

// ---------------------------------------------------------------------------
// Decoder stage
// ---------------------------------------------------------------------------

enum StageAttention {
    Efficient(Eca),
    Standard(Sca),
}

impl StageAttention {
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: TensorId,
        fused: TensorId,
    ) -> Result<TensorId> {
        match self {
            StageAttention::Efficient(e) => e.forward(tape, store, query, fused),
            StageAttention::Standard(s) => s.forward(tape, store, query, fused),
        }
    }
}

/// One multi-modal attention stage.
pub struct MamStage {
    pub cfg: MamStageConfig,
    /// Projects the coarser stage's channels down; absent at the coarsest
    /// stage, which has no predecessor.
    carry: Option<Linear>,
    align: AudioAlign,
    fusion: Fusion,
    attention: StageAttention,
    temporal: Conv3d,
}

impl MamStage {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: MamStageConfig,
        net: &UNetConfig,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let c = cfg.channels;
        let carry = if cfg.index < PYRAMID_LEVELS {
            let c_coarser = net.stage_channels(cfg.index + 1);
            Some(Linear::new(store, &format!("{prefix}.carry"), c_coarser, c, true, rng)?)
        } else {
            None
        };
        let attention = match net.attention {
            AttentionKind::Efficient => StageAttention::Efficient(Eca::new(
                store, &format!("{prefix}.attn"), c, net.heads, cfg.k, net.swap_kv, rng,
            )?),
            AttentionKind::Standard => StageAttention::Standard(Sca::new(
                store, &format!("{prefix}.attn"), c, net.heads, net.swap_kv, rng,
            )?),
        };
        Ok(MamStage {
            cfg,
            carry,
            align: AudioAlign::new(store, &format!("{prefix}.align"), 2 * net.c_base, c, rng)?,
            fusion: Fusion::new(store, &format!("{prefix}.fusion"), net.fusion, c, rng)?,
            attention,
            temporal: Conv3d::new(
                store, &format!("{prefix}.temporal"), c, c,
                [3, 1, 1], [1, 1, 1], [1, 0, 0], true, rng,
            )?,
        })
    }

    /// Run the stage. `video` is `(T_i, h, w, C)`, `noise` is `(h, w, C)`,
    /// `audio` is the raw audio feature map, `prev` the coarser stage output.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        video: TensorId,
        noise: TensorId,
        audio: TensorId,
        prev: Option<TensorId>,
    ) -> Result<TensorId> {
        let vs = tape.shape(video).to_vec();
        let (t_v, h, w, c) = (vs[0], vs[1], vs[2], vs[3]);
        let noise_row = tape.reshape(noise, &[1, h, w, c])?;
        let mut query = tape.concat(&[video, noise_row], 0)?; // (T+1, h, w, C)
        if let Some(prev) = prev {
            let carry = self.carry.as_ref().ok_or_else(|| {
                Error::invalid("mam_stage", "coarsest stage cannot take a predecessor")
            })?;
            let up = tape.resize_nearest_axes(prev, 1, 2, h, w)?;
            let proj = carry.forward(tape, store, up)?;
            let aligned = tape.interp_linear_axis0(proj, t_v + 1)?;
            query = tape.add(query, aligned)?;
        }
        let fa = self.align.forward(tape, store, audio, t_v + 1, h, w)?;
        let fused = self.fusion.forward(tape, store, query, fa)?;
        let mixed = self.attention.forward(tape, store, query, fused)?;
        // Temporal conv residual closes the stage.
        let cf = tape.permute(mixed, &[3, 0, 1, 2])?;
        let tc = self.temporal.forward(tape, store, cf)?;
        let tc = tape.permute(tc, &[1, 2, 3, 0])?;
        tape.add(mixed, tc)
    }
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

/// The full conditional denoiser.
pub struct SaliencyUNet {
    pub embed: TimestepEmbedder,
    pub noise: NoiseEncoder,
    /// Stage 1 (finest) first; execution order is reversed.
    pub stages: Vec<MamStage>,
    head: Conv2d,
    pub cfg: UNetConfig,
}

impl SaliencyUNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: UNetConfig,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if cfg.c_base == 0 {
            return Err(Error::invalid("unet", "c_base must be positive"));
        }
        if cfg.heads == 0 || cfg.c_base % cfg.heads != 0 {
            return Err(Error::invalid(
                "unet",
                format!("{} heads must divide base width {}", cfg.heads, cfg.c_base),
            ));
        }
        let embed = TimestepEmbedder::new(store, &format!("{prefix}.t"), cfg.t_dim(), rng)?;
        let noise = NoiseEncoder::new(store, &format!("{prefix}.noise"), cfg.c_base, cfg.t_dim(), rng)?;
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        for i in 1..=PYRAMID_LEVELS {
            let stage_cfg = MamStageConfig {
                index: i,
                channels: cfg.stage_channels(i),
                k: 1 << i,
            };
            stages.push(MamStage::new(
                store, &format!("{prefix}.stage{i}"), stage_cfg, &cfg, rng,
            )?);
        }
        let head = Conv2d::new(store, &format!("{prefix}.head"), cfg.c_base, 1, 3, 1, 1, true, rng)?;
        Ok(SaliencyUNet { embed, noise, stages, head, cfg })
    }

    /// Denoise `s_t` `(H, W, 1)` at timestep `t` under the given
    /// conditioning. Output is an `(H, W, 1)` signal-space prediction.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s_t: TensorId,
        t: usize,
        video: &VideoFeaturePyramid,
        audio: &AudioFeatureMap,
    ) -> Result<TensorId> {
        Ok(self.forward_parts(tape, store, s_t, t, video, audio)?.map)
    }

    /// Like [`forward`](Self::forward) but also exposes logits for losses
    /// that need a probabilistic reading of the same pre-activation.
    pub fn forward_parts(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        s_t: TensorId,
        t: usize,
        video: &VideoFeaturePyramid,
        audio: &AudioFeatureMap,
    ) -> Result<UNetOutput> {
        let map_shape = tape.shape(s_t).to_vec();
        if map_shape.len() != 3 || map_shape[2] != 1 {
            return Err(Error::invalid(
                "unet",
                format!("expected (H, W, 1) noisy map, got {map_shape:?}"),
            ));
        }
        if video.levels.len() != PYRAMID_LEVELS {
            return Err(Error::invalid("unet", "video pyramid must have 4 levels"));
        }
        for (i, &lvl) in video.levels.iter().enumerate() {
            let c = tape.shape(lvl)[3];
            let want = self.cfg.stage_channels(i + 1);
            if c != want {
                return Err(Error::invalid(
                    "unet",
                    format!("video level {} has {} channels, expected {}", i + 1, c, want),
                ));
            }
        }

        let t_emb = self.embed.forward(tape, store, t)?;
        let noise_levels = self.noise.forward(tape, store, s_t, t_emb)?;

        let mut x: Option<TensorId> = None;
        for i in (1..=PYRAMID_LEVELS).rev() {
            let stage = &self.stages[i - 1];
            x = Some(stage.forward(
                tape,
                store,
                video.levels[i - 1],
                noise_levels[i - 1],
                audio.features,
                x,
            )?);
        }
        let finest = x.expect("at least one stage");

        let pooled = tape.mean_axis(finest, 0)?; // (h1, w1, C1)
        let cf = tape.permute(pooled, &[2, 0, 1])?;
        let raw = self.head.forward(tape, store, cf)?; // (1, h1, w1)
        let hw = tape.permute(raw, &[1, 2, 0])?;
        let up = tape.upsample_bilinear(hw, 4)?; // (H, W, 1)
        Ok(UNetOutput { map: up, logits: tape.scale(up, 2.0) })
    }
}

/// Denoiser output: the unbounded signal-space map and logits derived from
/// the same pre-activation, so `sigmoid(logits)` tracks `(map + 1) / 2`
/// inside the signal range.
pub struct UNetOutput {
    pub map: TensorId,
    pub logits: TensorId,
}
