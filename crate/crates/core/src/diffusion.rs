//! Noise schedule, deterministic DDIM update and its inversion, and the
//! untiled trajectory runners.
//!
//! DDIM levels are numbered `0..=T`: level 0 is the clean latent
//! (`ᾱ = 1`), level `k ≥ 1` uses the train timestep `timesteps[k - 1]`.
//! Sampling walks `T → 0`, inversion walks `0 → T`.

use std::collections::BTreeMap;

use crate::denoise::{Conditioning, Denoiser, PayloadSet};
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
}

/// Everything a denoiser may need to know about the step it is serving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// DDIM level `k` of the input latent.
    pub level: usize,
    /// Train timestep `t_k` the level maps to.
    pub timestep: usize,
    pub alpha_bar: f64,
    /// Number of DDIM steps `T`.
    pub total: usize,
}

impl NoiseSchedule {
    /// Linear betas over `train_steps`, DDIM levels evenly strided so that
    /// level `T` lands on the last train step.
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let mut bad = Vec::new();
        if params.train_steps < 1 {
            bad.push("train steps must be ≥ 1".to_string());
        }
        if params.ddim_steps < 1 || params.ddim_steps > params.train_steps {
            bad.push(format!(
                "ddim steps must be in 1..={}, got {}",
                params.train_steps, params.ddim_steps
            ));
        }
        if !(params.beta_start > 0.0 && params.beta_start <= params.beta_end && params.beta_end < 1.0)
        {
            bad.push(format!(
                "betas must satisfy 0 < start ≤ end < 1, got {} and {}",
                params.beta_start, params.beta_end
            ));
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let n = params.train_steps;
        let mut alpha_bar = Vec::with_capacity(n);
        let mut acc = 1.0f64;
        for i in 0..n {
            let beta = if n == 1 {
                params.beta_start
            } else {
                params.beta_start + (params.beta_end - params.beta_start) * i as f64 / (n - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let t = params.ddim_steps;
        let timesteps = (1..=t).map(|k| (k * n).div_ceil(t) - 1).collect();
        Self::from_parts(params, alpha_bar, timesteps)
    }

    /// Builds a schedule from explicit `ᾱ` values, validating monotonicity.
    pub fn from_parts(
        params: ScheduleParams,
        alpha_bar: Vec<f64>,
        timesteps: Vec<usize>,
    ) -> Result<Self> {
        if alpha_bar.is_empty() || timesteps.is_empty() {
            return Err(Error::Schedule("empty schedule".into()));
        }
        for (i, &a) in alpha_bar.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Schedule(format!("ᾱ[{i}] = {a} outside (0, 1]")));
            }
        }
        if let Some(i) = alpha_bar.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::Schedule(format!(
                "ᾱ not strictly decreasing at train step {}",
                i + 1
            )));
        }
        if timesteps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schedule(
                "selected timesteps not strictly increasing".into(),
            ));
        }
        if *timesteps.last().unwrap() >= alpha_bar.len() {
            return Err(Error::Schedule("selected timestep past the train range".into()));
        }
        Ok(Self {
            params,
            alpha_bar,
            timesteps,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// Number of DDIM steps `T`.
    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn alpha_bar_train(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// `ᾱ` at DDIM level `k`; level 0 is exactly 1.
    pub fn alpha_bar(&self, level: usize) -> f64 {
        if level == 0 {
            1.0
        } else {
            self.alpha_bar[self.timesteps[level - 1]]
        }
    }

    pub fn step_info(&self, level: usize) -> StepInfo {
        StepInfo {
            level,
            timestep: if level == 0 { 0 } else { self.timesteps[level - 1] },
            alpha_bar: self.alpha_bar(level),
            total: self.steps(),
        }
    }
}

fn check_alpha(a: f64, name: &str) -> Result<()> {
    if a > 0.0 && a <= 1.0 {
        Ok(())
    } else {
        Err(Error::Schedule(format!("{name} = {a} outside (0, 1]")))
    }
}

/// `x̂₀ = (x − √(1−ᾱ)·ε)/√ᾱ`, re-noised to `ᾱ_to`.
fn ddim_move(x: &Tensor, eps: &Tensor, abar_from: f64, abar_to: f64) -> Result<Tensor> {
    x.ensure_same_shape(eps, "ddim step")?;
    let (sa, sb) = (abar_from.sqrt(), (1.0 - abar_from).sqrt());
    let (ta, tb) = (abar_to.sqrt(), (1.0 - abar_to).sqrt());
    x.zip_map(eps, |xv, ev| {
        let (xv, ev) = (xv as f64, ev as f64);
        let x0 = (xv - sb * ev) / sa;
        (ta * x0 + tb * ev) as f32
    })
}

/// One deterministic DDIM step from `ᾱ_t` down to the less noisy `ᾱ_prev`.
pub fn ddim_sample_step(
    x_t: &LatentTensor,
    eps: &LatentTensor,
    abar_t: f64,
    abar_prev: f64,
) -> Result<LatentTensor> {
    check_alpha(abar_t, "ᾱ_t")?;
    check_alpha(abar_prev, "ᾱ_prev")?;
    if abar_t > abar_prev {
        return Err(Error::Schedule(format!(
            "sampling needs ᾱ_t ≤ ᾱ_prev, got {abar_t} > {abar_prev}"
        )));
    }
    ddim_move(x_t, eps, abar_t, abar_prev)
}

/// One DDIM inversion step from `ᾱ_t` up to the noisier `ᾱ_next`.
pub fn ddim_invert_step(
    x_t: &LatentTensor,
    eps: &LatentTensor,
    abar_t: f64,
    abar_next: f64,
) -> Result<LatentTensor> {
    check_alpha(abar_t, "ᾱ_t")?;
    check_alpha(abar_next, "ᾱ_next")?;
    if abar_next > abar_t {
        return Err(Error::Schedule(format!(
            "inversion needs ᾱ_next ≤ ᾱ_t, got {abar_next} > {abar_t}"
        )));
    }
    ddim_move(x_t, eps, abar_t, abar_next)
}

/// Latents and control payloads captured along one trajectory.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    /// `(level, latent)` in visiting order.
    pub latents: Vec<(usize, LatentTensor)>,
    payloads: BTreeMap<(usize, String), Tensor>,
}

impl TrajectoryRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_payload(&mut self, level: usize, site: &str, tensor: Tensor) -> Result<()> {
        let key = (level, site.to_string());
        if self.payloads.contains_key(&key) {
            return Err(Error::Payload {
                site: site.into(),
                reason: format!("recorded twice at step {level}"),
            });
        }
        self.payloads.insert(key, tensor);
        Ok(())
    }

    pub fn payload(&self, level: usize, site: &str) -> Option<&Tensor> {
        self.payloads.get(&(level, site.to_string()))
    }

    pub fn payload_count(&self) -> usize {
        self.payloads.len()
    }

    pub fn payload_keys(&self) -> impl Iterator<Item = (usize, &str)> {
        self.payloads.keys().map(|(l, s)| (*l, s.as_str()))
    }

    pub fn latent(&self, level: usize) -> Option<&LatentTensor> {
        self.latents.iter().find(|(l, _)| *l == level).map(|(_, t)| t)
    }
}

fn denoiser_error(denoiser: &dyn Denoiser, level: usize, e: Error) -> Error {
    match e {
        e @ Error::Denoiser { .. } => e,
        other => Error::Denoiser {
            denoiser: denoiser.name().to_string(),
            step: level,
            reason: other.to_string(),
        },
    }
}

/// DDIM inversion of a clean latent. The step to level `k` evaluates the
/// denoiser on the level `k − 1` latent at timestep `t_k`. The record holds
/// one latent per step (levels `1..=T`).
pub fn run_inversion(
    x0: &LatentTensor,
    denoiser: &dyn Denoiser,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
) -> Result<(LatentTensor, TrajectoryRecord)> {
    let mut record = TrajectoryRecord::new();
    let mut x = x0.clone();
    for level in 1..=schedule.steps() {
        let info = schedule.step_info(level);
        let pred = denoiser
            .predict(&x, &info, cond, None)
            .map_err(|e| denoiser_error(denoiser, level, e))?;
        x = ddim_invert_step(&x, &pred.eps, schedule.alpha_bar(level - 1), info.alpha_bar)?;
        record.latents.push((level, x.clone()));
    }
    Ok((x, record))
}

/// Untiled deterministic sampling from level `T` to 0.
///
/// `inject` supplies per-step payloads for the denoiser; when `record` is
/// set, the payloads the denoiser emits are stored under `(level, site)`.
/// The record's latents hold the input of every step plus the final `x₀`.
pub fn run_sampling(
    x_t: &LatentTensor,
    denoiser: &dyn Denoiser,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    inject: &dyn Fn(usize) -> Result<Option<PayloadSet>>,
    record_payloads: bool,
) -> Result<(LatentTensor, TrajectoryRecord)> {
    let mut record = TrajectoryRecord::new();
    let mut x = x_t.clone();
    for level in (1..=schedule.steps()).rev() {
        let info = schedule.step_info(level);
        let injected = inject(level)?;
        let pred = denoiser
            .predict(&x, &info, cond, injected.as_ref())
            .map_err(|e| denoiser_error(denoiser, level, e))?;
        if record_payloads {
            for (site, t) in pred.payloads {
                record.insert_payload(level, &site, t)?;
            }
        }
        record.latents.push((level, x.clone()));
        x = ddim_sample_step(&x, &pred.eps, info.alpha_bar, schedule.alpha_bar(level - 1))?;
    }
    record.latents.push((0, x.clone()));
    Ok((x, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::ZeroEpsDenoiser;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.5f32..1.5))
    }

    #[test]
    fn default_schedule_shape() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.timesteps()[0], 19);
        assert_eq!(*s.timesteps().last().unwrap(), 999);
        assert!(s.timesteps().windows(2).all(|w| w[1] - w[0] == 20));
        assert_eq!(s.alpha_bar(0), 1.0);
        for k in 1..=50 {
            assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
        }
        // ᾱ_0 = 1 − β_0
        assert!((s.alpha_bar_train()[0] - (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_monotone_alpha_bar() {
        let p = ScheduleParams::default();
        assert!(NoiseSchedule::from_parts(p, vec![0.9, 0.95, 0.5], vec![0, 2]).is_err());
        assert!(NoiseSchedule::from_parts(p, vec![0.9, 0.9], vec![0, 1]).is_err());
        assert!(NoiseSchedule::from_parts(p, vec![1.2, 0.9], vec![0, 1]).is_err());
        assert!(NoiseSchedule::from_parts(p, vec![0.9, 0.5], vec![1, 1]).is_err());
        assert!(NoiseSchedule::from_parts(p, vec![0.9, 0.5], vec![0, 1]).is_ok());
    }

    #[test]
    fn rejects_bad_params_together() {
        let err = NoiseSchedule::new(ScheduleParams {
            train_steps: 10,
            beta_start: 0.0,
            beta_end: 0.02,
            ddim_steps: 20,
        })
        .unwrap_err();
        match err {
            Error::Validation(v) => assert_eq!(v.len(), 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn sample_step_zero_eps_closed_form() {
        let x = Tensor::filled(1, 1, 1, 1.0);
        let e = Tensor::zeros(1, 1, 1);
        let out = ddim_sample_step(&x, &e, 0.5, 0.8).unwrap();
        assert!((out.get(0, 0, 0) - 1.264_911).abs() < 1e-6);
    }

    #[test]
    fn degenerate_step_is_identity_for_zero_eps() {
        let x = random(2, 3, 4, 1);
        let e = Tensor::zeros(2, 3, 4);
        let out = ddim_sample_step(&x, &e, 0.3, 0.3).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-7);
    }

    #[test]
    fn pure_noise_direction() {
        let e = random(2, 2, 2, 2);
        let (a, ap) = (0.2f64, 0.7f64);
        let x = e.map(|v| ((1.0 - a).sqrt() * v as f64) as f32);
        let out = ddim_sample_step(&x, &e, a, ap).unwrap();
        let want = e.map(|v| ((1.0 - ap).sqrt() * v as f64) as f32);
        assert!(out.max_abs_diff(&want).unwrap() < 1e-6);
    }

    #[test]
    fn step_rejects_bad_alpha() {
        let x = Tensor::zeros(1, 1, 1);
        assert!(ddim_sample_step(&x, &x, 0.0, 0.5).is_err());
        assert!(ddim_sample_step(&x, &x, 0.6, 0.5).is_err());
        assert!(ddim_invert_step(&x, &x, 0.5, 0.6).is_err());
        assert!(ddim_invert_step(&x, &x, -0.1, -0.2).is_err());
        assert!(ddim_sample_step(&x, &Tensor::zeros(1, 1, 2), 0.5, 0.6).is_err());
    }

    #[test]
    fn invert_then_sample_same_eps() {
        let x = random(4, 4, 8, 3);
        let e = random(4, 4, 8, 4);
        for (a, an) in [(0.99, 0.9), (0.5, 0.2), (0.05, 0.01)] {
            let up = ddim_invert_step(&x, &e, a, an).unwrap();
            let back = ddim_sample_step(&up, &e, an, a).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() <= 1e-6, "{a} {an}");
        }
    }

    #[test]
    fn zero_eps_inversion_scales() {
        let x = random(1, 2, 2, 5);
        let out = ddim_invert_step(&x, &Tensor::zeros(1, 2, 2), 0.8, 0.2).unwrap();
        let want = x.map(|v| (v as f64 * (0.2f64 / 0.8).sqrt()) as f32);
        assert!(out.max_abs_diff(&want).unwrap() < 1e-7);
    }

    #[test]
    fn zero_eps_full_round_trip() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let x0 = random(4, 16, 64, 6);
        let (xt, rec) = run_inversion(&x0, &ZeroEpsDenoiser, &Conditioning::null(), &s).unwrap();
        assert_eq!(rec.latents.len(), 50);
        // Pure rescaling chain.
        let scale = s.alpha_bar(50).sqrt();
        let want = x0.map(|v| (v as f64 * scale) as f32);
        assert!(xt.max_abs_diff(&want).unwrap() < 1e-6);
        let (back, _) =
            run_sampling(&xt, &ZeroEpsDenoiser, &Conditioning::null(), &s, &|_| Ok(None), false)
                .unwrap();
        assert!(back.max_abs_diff(&x0).unwrap() <= 1e-5);
    }

    #[test]
    fn duplicate_payload_rejected() {
        let mut r = TrajectoryRecord::new();
        r.insert_payload(3, "feat.l1", Tensor::zeros(1, 1, 1)).unwrap();
        assert!(r.insert_payload(3, "feat.l1", Tensor::zeros(1, 1, 1)).is_err());
        r.insert_payload(2, "feat.l1", Tensor::zeros(1, 1, 1)).unwrap();
        assert_eq!(r.payload_count(), 2);
    }
}
