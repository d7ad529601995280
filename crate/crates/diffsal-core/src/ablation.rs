//! Per-axis ablation sweeps around a base configuration.
//!
//! Five axes are swept one at a time while the rest stay at their base
//! values: fusion form, attention form, training loss, conditioning mode,
//! and sampling step count. The base configuration is trained once and its
//! scores are reused as that axis's base row; every other variant retrains
//! from scratch on the same data and seed, so nine trainings cover the
//! whole report. A full factorial over the axes would need 216 trainings
//! for the same directional story, which is why the sweep is per-axis.
//!
//! The step-count axis is inference-only: it re-samples the base model at
//! 1, 2, and 4 steps without retraining.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::metrics::{Report, SaliencyMap, Scores};
use crate::model::{Mode, ModelConfig, SaliencyModel};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::training::{LossKind, TrainConfig, Trainer};
use crate::unet::{AttentionKind, FusionKind};

/// Sampling-noise seed shared by every evaluation so variant comparisons
/// see identical starting noise.
const EVAL_SEED: u64 = 0xE7A1_5EED;

/// One sweep result.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub axis: &'static str,
    pub variant: String,
    pub scores: Scores,
}

/// All sweep rows, in axis order.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// CSV with header `axis,variant,cc,nss,aucj,sim,kl`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,variant,cc,nss,aucj,sim,kl\n");
        for r in &self.rows {
            let s = r.scores;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.axis, r.variant, s.cc, s.nss, s.aucj, s.sim, s.kl
            );
        }
        out
    }

    /// Aligned text table, one block per axis.
    pub fn to_table(&self) -> String {
        let var_w = self.rows.iter().map(|r| r.variant.len()).chain([10]).max().unwrap_or(10);
        let mut out = String::new();
        let mut last_axis = "";
        for r in &self.rows {
            if r.axis != last_axis {
                if !last_axis.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(
                    out,
                    "{:<var_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
                    r.axis, "cc", "nss", "aucj", "sim", "kl"
                );
                last_axis = r.axis;
            }
            let s = r.scores;
            let _ = writeln!(
                out,
                "{:<var_w$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
                r.variant, s.cc, s.nss, s.aucj, s.sim, s.kl
            );
        }
        out
    }

    fn loss_cc(&self, kind: LossKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.axis == "loss" && r.variant == kind.name())
            .map(|r| r.scores.cc)
    }

    /// Soft check on the loss sweep: reports whether the expected quality
    /// order MSE >= KL >= CE showed up in CC. Informational, never a gate.
    pub fn loss_ranking_line(&self) -> String {
        match (
            self.loss_cc(LossKind::Mse),
            self.loss_cc(LossKind::Kl),
            self.loss_cc(LossKind::Ce),
        ) {
            (Some(mse), Some(kl), Some(ce)) => {
                let observed = mse >= kl && kl >= ce;
                format!(
                    "loss ranking mse >= kl >= ce: {} (cc {mse:.4} / {kl:.4} / {ce:.4})",
                    if observed { "observed" } else { "not observed" }
                )
            }
            _ => "loss ranking mse >= kl >= ce: loss sweep missing".to_string(),
        }
    }
}

// --- experiment primitives --------------------------------------------------

/// Samples every dataset item with the model and returns mean scores.
/// Per-item noise derives from `EVAL_SEED`, not from the model seed.
pub fn score_model(
    model: &SaliencyModel,
    data: &Dataset,
    steps: usize,
    sched: &NoiseSchedule,
) -> Result<Scores> {
    if data.is_empty() {
        return Err(Error::Data("cannot score on an empty dataset".into()));
    }
    let mut rows = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let mut rng = CounterRng::keyed(EVAL_SEED, i as u64, "eval-noise");
        let item = &data.items[i];
        let map = model.sample(&item.clip, &item.mel, steps, sched, &mut rng)?;
        let (h, w) = (map.shape[0], map.shape[1]);
        let pred = SaliencyMap::new(Tensor::new(vec![h, w], map.data)?)?;
        let scores = crate::metrics::score_pair(&pred, &data.gt_maps[i], &data.fixations[i])?;
        rows.push((data.ids[i].clone(), scores));
    }
    Ok(Report::new(rows)?.mean)
}

/// Trains a fresh model under the given configs and scores it.
pub fn train_and_score(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    sched: &NoiseSchedule,
    sample_steps: usize,
) -> Result<Scores> {
    let mut model = SaliencyModel::new(model_cfg.clone(), train_cfg.seed)?;
    let mut trainer = Trainer::new(&model, train_cfg.clone());
    trainer.run(&mut model, &data.items, sched, |_| {})?;
    score_model(&model, data, sample_steps, sched)
}

// --- the sweep driver -------------------------------------------------------

/// Runs all five sweeps. `progress` is called with a short line before each
/// training or sampling run so callers can log long sweeps.
pub fn run_sweeps(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    data: &Dataset,
    sched: &NoiseSchedule,
    base_steps: usize,
    mut progress: impl FnMut(&str),
) -> Result<AblationReport> {
    progress("training base configuration");
    let mut base = SaliencyModel::new(base_model.clone(), base_train.seed)?;
    let mut trainer = Trainer::new(&base, base_train.clone());
    trainer.run(&mut base, &data.items, sched, |_| {})?;
    let base_scores = score_model(&base, data, base_steps, sched)?;

    let mut rows = Vec::new();
    let vary = |rows: &mut Vec<AblationRow>,
                    axis: &'static str,
                    variant: String,
                    model_cfg: ModelConfig,
                    train_cfg: TrainConfig,
                    progress: &mut dyn FnMut(&str)|
     -> Result<()> {
        progress(&format!("training {axis}={variant}"));
        let scores = train_and_score(&model_cfg, &train_cfg, data, sched, base_steps)?;
        rows.push(AblationRow { axis, variant, scores });
        Ok(())
    };

    for fusion in [
        FusionKind::Mim,
        FusionKind::Addition,
        FusionKind::Concatenation,
        FusionKind::Bilinear,
    ] {
        if fusion == base_model.fusion {
            rows.push(AblationRow {
                axis: "fusion",
                variant: fusion.name().to_string(),
                scores: base_scores,
            });
        } else {
            let mut cfg = base_model.clone();
            cfg.fusion = fusion;
            vary(&mut rows, "fusion", fusion.name().to_string(), cfg, base_train.clone(), &mut progress)?;
        }
    }

    for attention in [AttentionKind::Efficient, AttentionKind::Standard] {
        if attention == base_model.attention {
            rows.push(AblationRow {
                axis: "attention",
                variant: attention.name().to_string(),
                scores: base_scores,
            });
        } else {
            let mut cfg = base_model.clone();
            cfg.attention = attention;
            vary(
                &mut rows,
                "attention",
                attention.name().to_string(),
                cfg,
                base_train.clone(),
                &mut progress,
            )?;
        }
    }

    for loss in [LossKind::Mse, LossKind::Kl, LossKind::Ce] {
        if loss == base_train.loss {
            rows.push(AblationRow {
                axis: "loss",
                variant: loss.name().to_string(),
                scores: base_scores,
            });
        } else {
            let mut cfg = base_train.clone();
            cfg.loss = loss;
            vary(&mut rows, "loss", loss.name().to_string(), base_model.clone(), cfg, &mut progress)?;
        }
    }

    for mode in [Mode::AudioVisual, Mode::VideoOnly, Mode::AudioOnly] {
        if mode == base_model.mode {
            rows.push(AblationRow {
                axis: "mode",
                variant: mode.name().to_string(),
                scores: base_scores,
            });
        } else {
            let mut cfg = base_model.clone();
            cfg.mode = mode;
            vary(&mut rows, "mode", mode.name().to_string(), cfg, base_train.clone(), &mut progress)?;
        }
    }

    for steps in [1usize, 2, 4] {
        let scores = if steps == base_steps {
            base_scores
        } else {
            progress(&format!("sampling base model at {steps} steps"));
            score_model(&base, data, steps, sched)?
        };
        rows.push(AblationRow { axis: "steps", variant: steps.to_string(), scores });
    }

    Ok(AblationReport { rows })
}

// --- tests ------------------------------------------------------------------
