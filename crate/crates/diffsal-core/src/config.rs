//! Flat `key = value` run configuration.
//!
//! One table of known keys covers every module. Values layer in strict
//! precedence: built-in defaults, then an optional preset, then a config
//! file, then command-line overrides. Unknown keys are rejected wherever
//! they appear, and [`RunConfig::validate`] builds every derived config up
//! front so bad values fail before any work starts.

use std::collections::BTreeMap;
use std::path::Path;

use crate::audio::FrontendConfig;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig};
use crate::synth::{SceneConfig, Trajectory};
use crate::training::{LossKind, TrainConfig};
use crate::unet::{AttentionKind, FusionKind};

/// Every known key with its built-in default.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("jobs", "1"),
    ("model.c_base", "8"),
    ("model.heads", "2"),
    ("model.fusion", "mim"),
    ("model.attention", "efficient"),
    ("model.swap_kv", "false"),
    ("model.mode", "av"),
    ("diffusion.t_max", "1000"),
    ("diffusion.steps", "4"),
    ("audio.sample_rate", "16000"),
    ("audio.window", "512"),
    ("audio.hop_ms", "11.0"),
    ("audio.n_mels", "40"),
    ("audio.f_min", "0.0"),
    ("audio.f_max", "7900.0"),
    ("audio.slice_frames", "40"),
    ("audio.slice_hop_ms", "200.0"),
    ("audio.slices", "4"),
    ("synth.count", "32"),
    ("synth.frames", "16"),
    ("synth.height", "32"),
    ("synth.width", "48"),
    ("synth.objects", "3"),
    ("synth.trajectory", "linear"),
    ("synth.noise", "0.02"),
    ("synth.object_sigma", "2.5"),
    ("synth.duration_secs", "1.1"),
    // "auto" spaces tones log-uniformly over [440, 3960] Hz.
    ("synth.tones_hz", "auto"),
    ("train.epochs", "5"),
    ("train.batch", "4"),
    ("train.lr", "0.0001"),
    ("train.loss", "mse"),
    ("train.clip_norm", "1.0"),
    ("train.log_every", "10"),
    ("train.encoders", "true"),
];

/// Merged configuration; see the module docs for precedence.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults plus the contents of a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines. Full-line `#` comments and blank lines
    /// are skipped; anything else must be a known key.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Overrides one value; the key must be known.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a named bundle of overrides. `desk` is the default scale;
    /// `paper` switches to the full-scale shapes (224x384x16 video,
    /// 9x112x192 audio, narrow channels) used by the shape check.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let overrides: &[(&str, &str)] = match name {
            "desk" => &[],
            "paper" => &[
                ("synth.height", "224"),
                ("synth.width", "384"),
                ("model.c_base", "4"),
                ("audio.n_mels", "192"),
                ("audio.slice_frames", "112"),
                ("audio.slice_hop_ms", "1232.0"),
                ("audio.slices", "9"),
            ],
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    // --- typed getters ------------------------------------------------------

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {raw:?}")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {raw:?}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: expected a number, got {raw:?}")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            raw => Err(Error::Config(format!("{key}: expected true or false, got {raw:?}"))),
        }
    }

    // --- derived configs ----------------------------------------------------

    pub fn seed(&self) -> Result<u64> {
        self.get_u64("seed")
    }

    pub fn jobs(&self) -> Result<usize> {
        let jobs = self.get_usize("jobs")?;
        if jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(jobs)
    }

    pub fn sample_steps(&self) -> Result<usize> {
        self.get_usize("diffusion.steps")
    }

    pub fn t_max(&self) -> Result<usize> {
        self.get_usize("diffusion.t_max")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(
            self.get_usize("model.c_base")?,
            self.get_usize("model.heads")?,
            self.get_usize("audio.slices")?,
        );
        cfg.fusion = FusionKind::parse(self.get("model.fusion")?)?;
        cfg.attention = AttentionKind::parse(self.get("model.attention")?)?;
        cfg.swap_kv = self.get_bool("model.swap_kv")?;
        cfg.mode = Mode::parse(self.get("model.mode")?)?;
        Ok(cfg)
    }

    pub fn frontend(&self) -> Result<FrontendConfig> {
        Ok(FrontendConfig {
            sample_rate: self.get_u64("audio.sample_rate")? as u32,
            window: self.get_usize("audio.window")?,
            hop_ms: self.get_f64("audio.hop_ms")?,
            n_mels: self.get_usize("audio.n_mels")?,
            f_min: self.get_f64("audio.f_min")?,
            f_max: self.get_f64("audio.f_max")?,
            slice_frames: self.get_usize("audio.slice_frames")?,
            slice_hop_ms: self.get_f64("audio.slice_hop_ms")?,
            slices: self.get_usize("audio.slices")?,
        })
    }

    pub fn scene(&self) -> Result<SceneConfig> {
        let objects = self.get_usize("synth.objects")?;
        let tones_hz = match self.get("synth.tones_hz")? {
            "auto" => default_tones(objects),
            list => list
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("synth.tones_hz: bad frequency {s:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        Ok(SceneConfig {
            frames: self.get_usize("synth.frames")?,
            height: self.get_usize("synth.height")?,
            width: self.get_usize("synth.width")?,
            objects,
            sounding: 0,
            trajectory: Trajectory::parse(self.get("synth.trajectory")?)?,
            tones_hz,
            noise: self.get_f64("synth.noise")?,
            object_sigma: self.get_f64("synth.object_sigma")?,
            sample_rate: self.get_u64("audio.sample_rate")? as u32,
            duration_secs: self.get_f64("synth.duration_secs")?,
            seed: self.seed()?,
        })
    }

    /// Training config for a dataset of `n_items` samples; total steps are
    /// `train.epochs` passes over the data at `train.batch`.
    pub fn train(&self, n_items: usize) -> Result<TrainConfig> {
        let batch = self.get_usize("train.batch")?;
        let epochs = self.get_usize("train.epochs")?;
        let steps = epochs * crate::training::epoch_steps(n_items, batch);
        let mut cfg = TrainConfig::new(steps, batch, self.get_f64("train.lr")?, self.seed()?);
        cfg.loss = LossKind::parse(self.get("train.loss")?)?;
        let clip = self.get_f64("train.clip_norm")?;
        cfg.clip_norm = if clip > 0.0 { Some(clip) } else { None };
        cfg.log_every = self.get_usize("train.log_every")?.max(1);
        cfg.train_encoders = self.get_bool("train.encoders")?;
        Ok(cfg)
    }

    pub fn epochs(&self) -> Result<usize> {
        self.get_usize("train.epochs")
    }

    /// The full configuration as `key = value` lines, reloadable through
    /// [`RunConfig::merge_text`]. Written next to checkpoints so sampling
    /// can rebuild the exact training-time setup.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Builds every derived config once so that range and parse errors
    /// surface before any command does work.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.frontend()?;
        self.scene()?;
        self.train(1)?;
        self.jobs()?;
        if self.t_max()? == 0 {
            return Err(Error::Config("diffusion.t_max must be positive".into()));
        }
        if self.sample_steps()? == 0 {
            return Err(Error::Config("diffusion.steps must be positive".into()));
        }
        Ok(())
    }
}

/// Distinct per-object tones, log-spaced over [440, 3960] Hz: three objects
/// get 440 / 1320 / 3960.
pub fn default_tones(objects: usize) -> Vec<f64> {
    let n = objects.max(1);
    (0..n)
        .map(|i| {
            if n == 1 {
                440.0
            } else {
                440.0 * 9.0f64.powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

// --- tests ------------------------------------------------------------------
