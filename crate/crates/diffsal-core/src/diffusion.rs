//! Diffusion machinery: cosine noise schedule, forward corruption, the
//! deterministic DDIM reverse update, and the step-plan sampling loop.
//!
//! Saliency maps live in [0, 1] on disk; diffusion runs on the affinely
//! mapped [-1, 1] signal. The sampling loop is model-agnostic: it drives any
//! closure that predicts the clean signal from a noisy one.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Cosine-schedule phase offset.
pub const SCHEDULE_OFFSET: f64 = 0.008;
/// Per-step variance cap; keeps alpha_bar strictly positive at the endpoint.
pub const BETA_CLIP: f64 = 0.999;

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

/// Precomputed noise scales for a fixed step count `t_max`.
pub struct NoiseSchedule {
    pub t_max: usize,
    /// `alpha_bar[t]` for t in 0..=t_max; `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
    pub sqrt_alpha_bar: Vec<f64>,
    pub sqrt_one_minus: Vec<f64>,
}

/// Smoothly decaying schedule: `alpha_bar(t)` follows a squared cosine in
/// `t/t_max`, renormalized so `alpha_bar(0) = 1`, with each per-step variance
/// `beta` capped at [`BETA_CLIP`] so the endpoint never reaches zero.
pub fn cosine_schedule(t_max: usize) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(Error::invalid("cosine_schedule", "need at least one step"));
    }
    let s = SCHEDULE_OFFSET;
    let phase = |t: f64| {
        let angle = ((t / t_max as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        angle.cos().powi(2)
    };
    let base = phase(0.0);
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    for t in 1..=t_max {
        let raw = phase(t as f64) / base;
        let beta = (1.0 - raw / alpha_bar[t - 1]).min(BETA_CLIP);
        alpha_bar.push(alpha_bar[t - 1] * (1.0 - beta));
    }
    let sqrt_alpha_bar = alpha_bar.iter().map(|a| a.sqrt()).collect();
    let sqrt_one_minus = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
    Ok(NoiseSchedule { t_max, alpha_bar, sqrt_alpha_bar, sqrt_one_minus })
}

// ---------------------------------------------------------------------------
// Forward corruption and reverse update
// ---------------------------------------------------------------------------

/// A map part-way through the noising process.
pub struct DiffusionState {
    pub x_t: Tensor,
    pub t: usize,
}

impl DiffusionState {
    pub fn new(x_t: Tensor, t: usize, sched: &NoiseSchedule) -> Result<Self> {
        if t > sched.t_max {
            return Err(Error::invalid(
                "DiffusionState",
                format!("t={t} outside schedule range 0..={}", sched.t_max),
            ));
        }
        if !x_t.all_finite() {
            return Err(Error::invalid("DiffusionState", "non-finite state"));
        }
        Ok(DiffusionState { x_t, t })
    }
}

/// Forward corruption: `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if x0.shape != eps.shape {
        return Err(Error::ShapeMismatch {
            op: "q_sample",
            lhs: x0.shape.clone(),
            rhs: eps.shape.clone(),
        });
    }
    if t < 1 || t > sched.t_max {
        return Err(Error::invalid(
            "q_sample",
            format!("t={t} outside 1..={}", sched.t_max),
        ));
    }
    let (a, b) = (sched.sqrt_alpha_bar[t], sched.sqrt_one_minus[t]);
    let data = x0.data.iter().zip(&eps.data).map(|(x, e)| a * x + b * e).collect();
    Tensor::new(x0.shape.clone(), data)
}

/// One deterministic reverse hop from `t_now` to `t_next`.
///
/// `t_next = -1` ends the chain and returns the clean prediction. With
/// `sigma = 0` the update is fully deterministic; `eps` only enters the
/// stochastic (`sigma > 0`) variant.
pub fn ddim_step(
    x_t: &Tensor,
    x0_pred: &Tensor,
    t_now: usize,
    t_next: i64,
    sigma: f64,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if x_t.shape != x0_pred.shape {
        return Err(Error::ShapeMismatch {
            op: "ddim_step",
            lhs: x_t.shape.clone(),
            rhs: x0_pred.shape.clone(),
        });
    }
    if t_now < 1 || t_now > sched.t_max || (t_now as i64) <= t_next || t_next < -1 {
        return Err(Error::invalid(
            "ddim_step",
            format!("bad step pair ({t_now}, {t_next}) for schedule of {}", sched.t_max),
        ));
    }
    if sigma < 0.0 {
        return Err(Error::invalid("ddim_step", "sigma must be nonnegative"));
    }
    if t_next == -1 {
        return Ok(x0_pred.clone());
    }
    let abar_next = sched.alpha_bar[t_next as usize];
    let dir_sq = 1.0 - abar_next - sigma * sigma;
    if dir_sq < 0.0 {
        return Err(Error::invalid(
            "ddim_step",
            format!("sigma {sigma} too large for t_next {t_next}: 1-abar-sigma^2 = {dir_sq}"),
        ));
    }
    let dir = dir_sq.sqrt();
    let (a_now, b_now) = (sched.sqrt_alpha_bar[t_now], sched.sqrt_one_minus[t_now]);
    let a_next = abar_next.sqrt();
    let data = x_t
        .data
        .iter()
        .zip(&x0_pred.data)
        .zip(&eps.data)
        .map(|((&xt, &x0), &e)| {
            let eps_hat = (xt - a_now * x0) / b_now;
            a_next * x0 + dir * eps_hat + sigma * e
        })
        .collect();
    Tensor::new(x_t.shape.clone(), data)
}

// ---------------------------------------------------------------------------
// Step plans
// ---------------------------------------------------------------------------

/// Descending (t_now, t_next) pairs ending at -1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub pairs: Vec<(i64, i64)>,
}

/// Evenly spaces `steps + 1` times across [-1, t_max], rounds to integers,
/// deduplicates, and reverses into consecutive descending pairs.
pub fn make_step_plan(steps: usize, t_max: usize) -> Result<StepPlan> {
    if steps < 1 || steps > t_max {
        return Err(Error::invalid(
            "make_step_plan",
            format!("steps {steps} outside 1..={t_max}"),
        ));
    }
    let mut times: Vec<i64> = (0..=steps)
        .map(|i| {
            let v = -1.0 + (t_max as f64 + 1.0) * i as f64 / steps as f64;
            v.round() as i64
        })
        .collect();
    times.dedup();
    times.reverse();
    let pairs = times.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(StepPlan { pairs })
}

// ---------------------------------------------------------------------------
// Signal scaling
// ---------------------------------------------------------------------------

/// [0, 1] map -> [-1, 1] diffusion signal.
pub fn to_signal(map: &Tensor) -> Tensor {
    map.map(|v| 2.0 * v - 1.0)
}

/// Diffusion signal -> [0, 1] map, clamping overshoot.
pub fn from_signal(x: &Tensor) -> Tensor {
    x.map(|v| (v.clamp(-1.0, 1.0) + 1.0) / 2.0)
}

// ---------------------------------------------------------------------------
// Sampling loop
// ---------------------------------------------------------------------------

/// Runs the reverse chain from pure noise with `sigma = 0`.
///
/// `denoise(x_t, t)` predicts the clean signal; predictions are clamped to
/// [-1, 1] each step and the final map is returned in [0, 1]. Sampling is
/// bit-reproducible for a fixed `rng` state.
pub fn sample(
    denoise: &mut dyn FnMut(&Tensor, usize) -> Result<Tensor>,
    shape: &[usize],
    steps: usize,
    sched: &NoiseSchedule,
    rng: &mut CounterRng,
) -> Result<Tensor> {
    let plan = make_step_plan(steps, sched.t_max)?;
    let n: usize = shape.iter().product();
    let noise = Tensor::new(shape.to_vec(), rng.normal_vec(n))?;
    let mut state = DiffusionState::new(noise, sched.t_max, sched)?;
    let zero_eps = Tensor::zeros(shape);
    for &(t_now, t_next) in &plan.pairs {
        let x0_pred = denoise(&state.x_t, t_now as usize)?.clamp(-1.0, 1.0);
        let x = ddim_step(&state.x_t, &x0_pred, t_now as usize, t_next, 0.0, &zero_eps, sched)?;
        state = DiffusionState::new(x, t_next.max(0) as usize, sched)?;
    }
    Ok(from_signal(&state.x_t))
}
