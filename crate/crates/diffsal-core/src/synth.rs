//! Synthetic audio-visual scenes with known ground truth.
//!
//! Each scene shows a handful of visually identical Gaussian blobs (one
//! shared color per scene) moving along analytic trajectories. Exactly one
//! blob "sounds": the clip's audio track is a pure tone at that object's
//! frequency, amplitude-modulated by its on-screen speed. Ground truth is a
//! Gaussian density centered on the sounding object's final-frame position.
//!
//! Object `i` starts inside horizontal band `i` of the frame and keeps its
//! trajectory within that band, and tone frequencies are fixed per object
//! index. Audio therefore identifies *which* band holds the target while
//! video alone cannot: with identical blobs and the sounding index drawn at
//! random, the same clip supports several different ground truths. This is
//! the construction that lets evaluation separate audio-visual models from
//! video-only ones.
//!
//! Everything is a pure function of [`SceneConfig`], including noise, so
//! datasets are reproducible bit-for-bit from their seeds.

use std::f64::consts::PI;
use std::path::Path;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::io::{self, dstn, manifest::ManifestEntry, pgm, wav};
use crate::metrics::{FixationSet, SaliencyMap};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Fixations drawn per scene from the ground-truth density.
pub const FIXATION_COUNT: usize = 20;
/// Ground-truth blob width as a fraction of the short frame side.
pub const GT_SIGMA_FRAC: f64 = 0.08;
/// Peak amplitude of the rendered tone before noise.
const TONE_GAIN: f64 = 0.8;

// --- configuration ----------------------------------------------------------

/// How objects move across the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    Linear,
    Circular,
    RandomWalk,
}

impl Trajectory {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Trajectory::Linear),
            "circular" => Ok(Trajectory::Circular),
            "random-walk" | "random_walk" | "walk" => Ok(Trajectory::RandomWalk),
            other => Err(Error::Config(format!(
                "unknown trajectory {other:?}: expected linear, circular, or random-walk"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Trajectory::Linear => "linear",
            Trajectory::Circular => "circular",
            Trajectory::RandomWalk => "random-walk",
        }
    }
}

/// Scene recipe. [`generate`] is a pure function of this.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Number of blobs; one horizontal band each.
    pub objects: usize,
    /// Index of the blob that emits sound.
    pub sounding: usize,
    pub trajectory: Trajectory,
    /// Tone frequency per object index, Hz.
    pub tones_hz: Vec<f64>,
    /// Std of the additive noise applied to both pixels and audio samples.
    pub noise: f64,
    /// Object blob width in pixels.
    pub object_sigma: f64,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// Desk-scale default: 16 frames of 32x48, three identical blobs, 16 kHz
    /// audio, 1.1 s. Small enough to train on a CPU in minutes.
    pub fn desk(seed: u64) -> Self {
        SceneConfig {
            frames: 16,
            height: 32,
            width: 48,
            objects: 3,
            sounding: 0,
            trajectory: Trajectory::Linear,
            tones_hz: vec![440.0, 1320.0, 3960.0],
            noise: 0.02,
            object_sigma: 2.5,
            sample_rate: 16_000,
            duration_secs: 1.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if self.objects == 0 {
            return Err(Error::Config("need at least one object".into()));
        }
        if self.sounding >= self.objects {
            return Err(Error::Config(format!(
                "sounding index {} out of range for {} objects",
                self.sounding, self.objects
            )));
        }
        if self.tones_hz.len() != self.objects {
            return Err(Error::Config(format!(
                "{} tone frequencies for {} objects",
                self.tones_hz.len(),
                self.objects
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for &f in &self.tones_hz {
            if f <= 0.0 || f >= nyquist {
                return Err(Error::Config(format!(
                    "tone {f} Hz outside (0, {nyquist}) at {} Hz sampling",
                    self.sample_rate
                )));
            }
        }
        if !(self.noise >= 0.0) || self.object_sigma <= 0.0 || self.duration_secs <= 0.0 {
            return Err(Error::Config("noise, object_sigma, duration must be sane".into()));
        }
        // A blob needs to fit inside the frame; 6 sigma spans ~99.7% mass.
        let span = 6.0 * self.object_sigma;
        if span > self.height.min(self.width) as f64 {
            return Err(Error::Config(format!(
                "object with sigma {} is larger than the {}x{} frame",
                self.object_sigma, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// One generated scene.
#[derive(Debug, Clone)]
pub struct SceneSample {
    /// (T, H, W, 3) video in [0, 1].
    pub clip: Tensor,
    pub waveform: Waveform,
    /// Gaussian density at the sounding object's final position, peak 1.
    pub gt: SaliencyMap,
    /// [`FIXATION_COUNT`] points drawn from the ground-truth density.
    pub fixations: FixationSet,
}

// --- trajectories -----------------------------------------------------------

/// Shrinks the closed interval [lo, hi] by `m` on both sides; a margin wider
/// than the interval collapses it to its midpoint. The collapse is what pins
/// a lone object to the frame center when the frame is small.
fn shrink(lo: f64, hi: f64, m: f64) -> (f64, f64) {
    if lo + m <= hi - m {
        (lo + m, hi - m)
    } else {
        let mid = (lo + hi) / 2.0;
        (mid, mid)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Per-frame (x, y) centers for every object, x = column, y = row. Object
/// `i` stays inside horizontal band `i`; this is the analytic path the
/// renderer blits, exposed so tests can compare rendered centroids to it.
pub fn object_paths(cfg: &SceneConfig) -> Result<Vec<Vec<(f64, f64)>>> {
    cfg.validate()?;
    let root = CounterRng::keyed(cfg.seed, 0, "scene");
    let band_w = cfg.width as f64 / cfg.objects as f64;
    let margin = 3.0 * cfg.object_sigma;
    let steps = (cfg.frames - 1).max(1) as f64;
    let mut paths = Vec::with_capacity(cfg.objects);
    for i in 0..cfg.objects {
        let mut rng = root.split(i as u64, "path");
        let band_lo = i as f64 * band_w;
        let (xlo, xhi) = shrink(band_lo, band_lo + band_w - 1.0, margin);
        let (ylo, yhi) = shrink(0.0, (cfg.height - 1) as f64, margin);
        let path: Vec<(f64, f64)> = match cfg.trajectory {
            Trajectory::Linear => {
                let p0 = (rng.uniform_range(xlo, xhi), rng.uniform_range(ylo, yhi));
                let p1 = (rng.uniform_range(xlo, xhi), rng.uniform_range(ylo, yhi));
                (0..cfg.frames)
                    .map(|t| {
                        let a = t as f64 / steps;
                        (lerp(p0.0, p1.0, a), lerp(p0.1, p1.1, a))
                    })
                    .collect()
            }
            Trajectory::Circular => {
                let r_max = ((xhi - xlo).min(yhi - ylo) / 2.0).max(0.0);
                let r = rng.uniform_range(0.3, 1.0) * r_max;
                let cx = rng.uniform_range(xlo + r, xhi - r);
                let cy = rng.uniform_range(ylo + r, yhi - r);
                let phase = rng.uniform_range(0.0, 2.0 * PI);
                let sweep = rng.uniform_range(0.5 * PI, 1.5 * PI)
                    * if rng.below(2) == 0 { 1.0 } else { -1.0 };
                (0..cfg.frames)
                    .map(|t| {
                        let a = phase + sweep * t as f64 / steps;
                        (cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect()
            }
            Trajectory::RandomWalk => {
                let step = 0.75 * cfg.object_sigma;
                let mut p = (rng.uniform_range(xlo, xhi), rng.uniform_range(ylo, yhi));
                let mut path = vec![p];
                for _ in 1..cfg.frames {
                    p.0 = (p.0 + step * rng.normal()).clamp(xlo, xhi);
                    p.1 = (p.1 + step * rng.normal()).clamp(ylo, yhi);
                    path.push(p);
                }
                path
            }
        };
        paths.push(path);
    }
    Ok(paths)
}

// --- rendering --------------------------------------------------------------

fn gaussian(dx: f64, dy: f64, sigma: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Renders the full scene. Deterministic in `cfg.seed`; the video track and
/// every trajectory are independent of `cfg.sounding`, so changing only the
/// sounding index swaps the audio and ground truth under an identical clip.
pub fn generate(cfg: &SceneConfig) -> Result<SceneSample> {
    let paths = object_paths(cfg)?;
    let root = CounterRng::keyed(cfg.seed, 0, "scene");
    let (t_v, h, w) = (cfg.frames, cfg.height, cfg.width);

    // One color per scene, shared by all objects: blobs are identical.
    let mut color_rng = root.split(0, "color");
    let color = [
        color_rng.uniform_range(0.25, 1.0),
        color_rng.uniform_range(0.25, 1.0),
        color_rng.uniform_range(0.25, 1.0),
    ];

    let mut noise_rng = root.split(0, "pixel-noise");
    let mut clip = vec![0.0; t_v * h * w * 3];
    for t in 0..t_v {
        for r in 0..h {
            for c in 0..w {
                let mut lum = 0.0;
                for path in &paths {
                    let (x, y) = path[t];
                    lum += gaussian(c as f64 - x, r as f64 - y, cfg.object_sigma);
                }
                let base = ((t * h + r) * w + c) * 3;
                for ch in 0..3 {
                    let v = lum * color[ch] + cfg.noise * noise_rng.normal();
                    clip[base + ch] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    let clip = Tensor::new(vec![t_v, h, w, 3], clip)?;

    // Tone amplitude follows the sounding object's per-frame speed,
    // normalized to peak 1; a static object is silent.
    let sounding = &paths[cfg.sounding];
    let mut speeds = vec![0.0; t_v];
    for t in 1..t_v {
        let (dx, dy) = (sounding[t].0 - sounding[t - 1].0, sounding[t].1 - sounding[t - 1].1);
        speeds[t] = (dx * dx + dy * dy).sqrt();
    }
    if t_v > 1 {
        speeds[0] = speeds[1];
    }
    let peak = speeds.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        speeds.iter_mut().for_each(|s| *s /= peak);
    }

    let n_samples = (cfg.duration_secs * cfg.sample_rate as f64).round() as usize;
    let tone = cfg.tones_hz[cfg.sounding];
    let mut audio_rng = root.split(0, "audio-noise");
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let tau = k as f64 / cfg.sample_rate as f64;
        let g = if n_samples > 1 {
            k as f64 / (n_samples - 1) as f64 * (t_v - 1) as f64
        } else {
            0.0
        };
        let (lo, frac) = (g.floor() as usize, g.fract());
        let env = lerp(speeds[lo], speeds[(lo + 1).min(t_v - 1)], frac);
        let s = TONE_GAIN * env * (2.0 * PI * tone * tau).sin() + cfg.noise * audio_rng.normal();
        samples.push(s);
    }
    let waveform = Waveform::new(samples, cfg.sample_rate)?;

    // Ground truth: Gaussian density at the final position, peak exactly 1.
    let (gx, gy) = sounding[t_v - 1];
    let sigma_gt = GT_SIGMA_FRAC * h.min(w) as f64;
    let mut gt = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            gt[r * w + c] = gaussian(c as f64 - gx, r as f64 - gy, sigma_gt);
        }
    }
    let max = gt.iter().cloned().fold(0.0, f64::max);
    gt.iter_mut().for_each(|v| *v /= max);
    let gt = SaliencyMap::new(Tensor::new(vec![h, w], gt)?)?;

    // Fixations: inverse-CDF draws from the normalized ground truth.
    let density = gt.density();
    let mut fix_rng = root.split(0, "fixations");
    let mut points = Vec::with_capacity(FIXATION_COUNT);
    for _ in 0..FIXATION_COUNT {
        let u = fix_rng.uniform();
        let mut acc = 0.0;
        let mut idx = h * w - 1;
        for (i, d) in density.iter().enumerate() {
            acc += d;
            if u < acc {
                idx = i;
                break;
            }
        }
        points.push((idx / w, idx % w));
    }

    Ok(SceneSample { clip, waveform, gt, fixations: FixationSet::new(points) })
}

// --- dataset ----------------------------------------------------------------

/// The concrete config for dataset sample `i`: a fresh seed derived from the
/// base seed and a sounding object redrawn from it. The redraw is what makes
/// the dataset audio-dependent.
pub fn sample_config(base: &SceneConfig, i: usize) -> SceneConfig {
    let sample_seed = CounterRng::keyed(base.seed, i as u64, "dataset-seed").next_u64();
    let mut cfg = base.clone();
    cfg.seed = sample_seed;
    cfg.sounding = CounterRng::keyed(sample_seed, 0, "sounding").below(cfg.objects as u64) as usize;
    cfg
}

/// Writes one generated sample under `out_dir/<id>/` and returns its
/// manifest entry (paths relative to `out_dir`).
pub fn write_sample(
    out_dir: &Path,
    id: &str,
    cfg: &SceneConfig,
    sample: &SceneSample,
) -> Result<ManifestEntry> {
    let dir = out_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    dstn::save(&dir.join("clip.dstn"), &sample.clip)?;
    wav::save(&dir.join("audio.wav"), cfg.sample_rate, &sample.waveform.samples)?;
    pgm::save(&dir.join("gt.pgm"), sample.gt.values(), 65535)?;
    io::write_fixations(&dir.join("fixations.txt"), sample.fixations.points())?;
    Ok(ManifestEntry {
        id: id.to_string(),
        clip: format!("{id}/clip.dstn").into(),
        wav: format!("{id}/audio.wav").into(),
        gt: format!("{id}/gt.pgm").into(),
        fix: format!("{id}/fixations.txt").into(),
        seed: cfg.seed,
    })
}

/// Generates `n` scenes under `out_dir`, one directory per sample holding
/// `clip.dstn`, `audio.wav`, `gt.pgm` (16-bit), and `fixations.txt`, plus a
/// `manifest.tsv` index. Sample `i` is fully determined by
/// [`sample_config`]`(base, i)`, so outputs do not depend on generation
/// order. `n = 0` writes an empty manifest.
pub fn make_dataset(n: usize, base: &SceneConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    base.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let cfg = sample_config(base, i);
        let sample = generate(&cfg)?;
        entries.push(write_sample(out_dir, &format!("sample_{i:03}"), &cfg, &sample)?);
    }
    io::manifest::save(&out_dir.join("manifest.tsv"), &entries)?;
    io::manifest::load(&out_dir.join("manifest.tsv"))
}

// --- tests ------------------------------------------------------------------
