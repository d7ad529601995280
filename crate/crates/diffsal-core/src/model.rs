//! The assembled saliency model: conditioning encoders plus the denoiser,
//! with one parameter store underneath.
//!
//! Conditioning modes gate the two streams: `VideoOnly` multiplies audio
//! features by zero and `AudioOnly` does the same to video, so single-modality
//! baselines share code, shapes, and parameter layout with the full model.

use crate::diffusion::{self, NoiseSchedule};
use crate::encoders::{AudioEncoder, AudioFeatureMap, VideoEncoder, VideoFeaturePyramid};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;
use crate::unet::{AttentionKind, FusionKind, SaliencyUNet, UNetConfig, UNetOutput};
use std::path::Path;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which conditioning streams the model actually sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    AudioVisual,
    VideoOnly,
    AudioOnly,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "av" | "audiovisual" => Ok(Mode::AudioVisual),
            "video_only" | "video" => Ok(Mode::VideoOnly),
            "audio_only" | "audio" => Ok(Mode::AudioOnly),
            other => Err(Error::invalid(
                "mode",
                format!("unknown mode '{other}' (av|video_only|audio_only)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::AudioVisual => "av",
            Mode::VideoOnly => "video_only",
            Mode::AudioOnly => "audio_only",
        }
    }
}

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub c_base: usize,
    pub heads: usize,
    /// Audio slices per clip (the temporal extent of the audio features).
    pub slices: usize,
    pub fusion: FusionKind,
    pub attention: AttentionKind,
    pub swap_kv: bool,
    pub mode: Mode,
}

impl ModelConfig {
    pub fn new(c_base: usize, heads: usize, slices: usize) -> Self {
        ModelConfig {
            c_base,
            heads,
            slices,
            fusion: FusionKind::Mim,
            attention: AttentionKind::Efficient,
            swap_kv: false,
            mode: Mode::AudioVisual,
        }
    }

    fn unet(&self) -> UNetConfig {
        UNetConfig {
            c_base: self.c_base,
            heads: self.heads,
            fusion: self.fusion,
            attention: self.attention,
            swap_kv: self.swap_kv,
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Encoders, denoiser, and their shared parameters.
pub struct SaliencyModel {
    pub store: ParamStore,
    pub video: VideoEncoder,
    pub audio: AudioEncoder,
    pub unet: SaliencyUNet,
    pub cfg: ModelConfig,
}

impl SaliencyModel {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(seed, 0, "model-init");
        let video = VideoEncoder::new(&mut store, "enc.video", cfg.c_base, &mut rng)?;
        let audio = AudioEncoder::new(
            &mut store, "enc.audio", cfg.c_base, cfg.slices, cfg.heads, &mut rng,
        )?;
        let unet = SaliencyUNet::new(&mut store, "unet", cfg.unet(), &mut rng)?;
        Ok(SaliencyModel { store, video, audio, unet, cfg })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Encode a clip `(T, H, W, 3)` and mel slices `(T_a, H_a, W_a, 1)`,
    /// zeroing whichever stream the mode disables.
    pub fn encode(
        &self,
        tape: &mut Tape,
        clip: TensorId,
        mel: TensorId,
    ) -> Result<(VideoFeaturePyramid, AudioFeatureMap)> {
        let mut video = self.video.forward(tape, &self.store, clip)?;
        let mut audio = self.audio.forward(tape, &self.store, mel)?;
        match self.cfg.mode {
            Mode::AudioVisual => {}
            Mode::VideoOnly => {
                audio = AudioFeatureMap { features: tape.scale(audio.features, 0.0) };
            }
            Mode::AudioOnly => {
                let levels = video
                    .levels
                    .iter()
                    .map(|&l| tape.scale(l, 0.0))
                    .collect();
                video = VideoFeaturePyramid { levels };
            }
        }
        Ok((video, audio))
    }

    /// One denoiser evaluation: predict the clean signal-space map from
    /// `s_t` at timestep `t` under encoded conditioning.
    pub fn g_psi(
        &self,
        tape: &mut Tape,
        s_t: TensorId,
        t: usize,
        video: &VideoFeaturePyramid,
        audio: &AudioFeatureMap,
    ) -> Result<TensorId> {
        self.unet.forward(tape, &self.store, s_t, t, video, audio)
    }

    /// Denoiser evaluation that also returns logits, for loss functions.
    pub fn g_psi_parts(
        &self,
        tape: &mut Tape,
        s_t: TensorId,
        t: usize,
        video: &VideoFeaturePyramid,
        audio: &AudioFeatureMap,
    ) -> Result<UNetOutput> {
        self.unet.forward_parts(tape, &self.store, s_t, t, video, audio)
    }

    /// Full few-step sampling for one clip. Returns a `(H, W, 1)` saliency
    /// map in [0, 1]. Deterministic given the rng state.
    pub fn sample(
        &self,
        clip: &Tensor,
        mel: &Tensor,
        steps: usize,
        sched: &NoiseSchedule,
        rng: &mut CounterRng,
    ) -> Result<Tensor> {
        if clip.shape.len() != 4 {
            return Err(Error::invalid("sample", "clip must be (T, H, W, 3)"));
        }
        let (h, w) = (clip.shape[1], clip.shape[2]);
        let mut tape = Tape::new();
        let clip_id = tape.leaf(clip.clone());
        let mel_id = tape.leaf(mel.clone());
        let (video, audio) = self.encode(&mut tape, clip_id, mel_id)?;
        let mut denoise = |s_t: &Tensor, t: usize| -> Result<Tensor> {
            let id = tape.leaf(s_t.clone());
            let out = self.unet.forward(&mut tape, &self.store, id, t, &video, &audio)?;
            Ok(tape.value(out).clone())
        };
        diffusion::sample(&mut denoise, &[h, w, 1], steps, sched, rng)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    /// Rebuild a model of this configuration from a checkpoint. Fails if the
    /// checkpoint's parameter names or shapes disagree with the config.
    pub fn load(cfg: ModelConfig, path: &Path, seed: u64) -> Result<Self> {
        let mut model = SaliencyModel::new(cfg, seed)?;
        model.store.load(path)?;
        Ok(model)
    }
}
