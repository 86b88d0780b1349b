//! Spatial control during tiled denoising: payload injection from a recorded
//! source trajectory, and quadratic structure/appearance energy guidance.

use crate::denoise::{Conditioning, Denoiser, PayloadSet, SITE_ATTENTION, SITE_FEATURE};
use crate::diffusion::{run_sampling, NoiseSchedule, StepInfo, TrajectoryRecord};
use crate::error::{Error, Result, Violations};
use crate::tensor::{ColumnRange, LatentTensor, Tensor};
use crate::tiler::WindowControl;

/// Which payload sites are injected, and for how much of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionPolicy {
    /// Fraction `τ_f` of steps (from the noisy end) with feature injection.
    pub feature_until: f64,
    /// Fraction `τ_A` for attention sites (`attn.*`).
    pub attention_until: f64,
    pub sites: Vec<String>,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        Self {
            feature_until: 0.8,
            attention_until: 0.5,
            sites: vec![SITE_FEATURE.to_string(), SITE_ATTENTION.to_string()],
        }
    }
}

impl InjectionPolicy {
    pub fn new(feature_until: f64, attention_until: f64) -> Result<Self> {
        let p = Self {
            feature_until,
            attention_until,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        v.check((0.0..=1.0).contains(&self.feature_until), || {
            format!("tau-f={} must lie in [0,1]", self.feature_until)
        });
        v.check((0.0..=1.0).contains(&self.attention_until), || {
            format!("tau-a={} must lie in [0,1]", self.attention_until)
        });
        v.into_result()
    }

    fn fraction_for(&self, site: &str) -> f64 {
        if site.starts_with("attn.") {
            self.attention_until
        } else {
            self.feature_until
        }
    }

    /// Injection of `site` is on at `level` iff `(T − level)/T < τ`.
    pub fn is_active(&self, site: &str, level: usize, total: usize) -> bool {
        let elapsed = total.saturating_sub(level) as f64 / total.max(1) as f64;
        elapsed < self.fraction_for(site)
    }
}

/// Untiled denoising of the inverted latent with null conditioning, keeping
/// every payload the denoiser emits.
pub fn record_source_trajectory(
    x_t: &LatentTensor,
    denoiser: &dyn Denoiser,
    noise: &NoiseSchedule,
) -> Result<TrajectoryRecord> {
    let (_, record) = run_sampling(
        x_t,
        denoiser,
        &Conditioning::null(),
        noise,
        &|_| Ok(None),
        true,
    )?;
    Ok(record)
}

/// The payloads active at `level`, cropped to `range`.
pub fn inject_controls(
    policy: &InjectionPolicy,
    record: &TrajectoryRecord,
    level: usize,
    total: usize,
    range: &ColumnRange,
) -> Result<PayloadSet> {
    let mut out = PayloadSet::new();
    for site in &policy.sites {
        if !policy.is_active(site, level, total) {
            continue;
        }
        let full = record.payload(level, site).ok_or_else(|| Error::Payload {
            site: site.clone(),
            reason: format!("no recorded payload at step {level}"),
        })?;
        out.insert(site.clone(), full.crop(range)?);
    }
    Ok(out)
}

/// Window control that injects recorded source payloads.
#[derive(Debug, Clone, Copy)]
pub struct PnpControl<'a> {
    pub policy: &'a InjectionPolicy,
    pub record: &'a TrajectoryRecord,
    pub total_steps: usize,
}

impl WindowControl for PnpControl<'_> {
    fn payloads(&self, level: usize, range: &ColumnRange) -> Result<Option<PayloadSet>> {
        inject_controls(self.policy, self.record, level, self.total_steps, range).map(Some)
    }
}

/// Rows averaged together by the structure pooling.
pub const STRUCTURE_POOL_ROWS: usize = 4;

/// Averages blocks of [`STRUCTURE_POOL_ROWS`] rows; columns are kept so the
/// result crops exactly like the latent.
pub fn structure_pool(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims();
    let cells = h.div_ceil(STRUCTURE_POOL_ROWS);
    Tensor::from_fn(c, cells, w, |ch, i, xx| {
        let lo = i * STRUCTURE_POOL_ROWS;
        let hi = (lo + STRUCTURE_POOL_ROWS).min(h);
        let s: f64 = (lo..hi).map(|y| x.get(ch, y, xx) as f64).sum();
        (s / (hi - lo) as f64) as f32
    })
}

/// Per-channel mean over all cells.
pub fn channel_means(x: &Tensor) -> Vec<f32> {
    let plane = x.height() * x.width();
    x.data()
        .chunks_exact(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect()
}

/// Structure/appearance guidance weights and frozen targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    pub structure_weight: f64,
    pub appearance_weight: f64,
    /// Row-pooled source latent, full width.
    pub structure_target: Tensor,
    pub appearance_target: Vec<f32>,
}

impl GuidanceSpec {
    /// Targets taken from a clean source latent.
    pub fn from_source(source: &LatentTensor, structure_weight: f64, appearance_weight: f64) -> Result<Self> {
        let mut v = Violations::default();
        v.check(structure_weight.is_finite() && structure_weight >= 0.0, || {
            format!("lambda-s={structure_weight} must be finite and >= 0")
        });
        v.check(appearance_weight.is_finite() && appearance_weight >= 0.0, || {
            format!("lambda-a={appearance_weight} must be finite and >= 0")
        });
        v.into_result()?;
        Ok(Self {
            structure_weight,
            appearance_weight,
            structure_target: structure_pool(source),
            appearance_target: channel_means(source),
        })
    }

    pub fn is_off(&self) -> bool {
        self.structure_weight == 0.0 && self.appearance_weight == 0.0
    }
}

/// Energies of the clean estimate implied by `(x_t, ε)`, in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceEnergy {
    pub structure: f64,
    pub appearance: f64,
}

fn predicted_x0(x_t: &Tensor, eps: &Tensor, abar: f64) -> Result<Vec<f64>> {
    if !(abar > 0.0 && abar <= 1.0) {
        return Err(Error::Schedule(format!("guidance needs 0 < ᾱ <= 1, got {abar}")));
    }
    x_t.ensure_same_shape(eps, "guidance ε")?;
    let (sa, sb) = (abar.sqrt(), (1.0 - abar).sqrt());
    Ok(x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (x as f64 - sb * e as f64) / sa)
        .collect())
}

/// Residuals of the pooled estimate against the cropped structure target,
/// and of the channel means against the appearance target.
struct Residuals {
    pooled: Vec<f64>,
    means: Vec<f64>,
}

fn residuals(
    x0: &[f64],
    dims: (usize, usize, usize),
    spec: &GuidanceSpec,
    range: &ColumnRange,
) -> Result<Residuals> {
    let (c, h, w) = dims;
    let target = spec.structure_target.crop(range)?;
    let cells = h.div_ceil(STRUCTURE_POOL_ROWS);
    if target.dims() != (c, cells, w) || spec.appearance_target.len() != c {
        return Err(Error::Shape(format!(
            "guidance targets {:?}/{} do not fit window {dims:?}",
            target.dims(),
            spec.appearance_target.len()
        )));
    }
    let mut pooled = vec![0.0f64; c * cells * w];
    let mut means = vec![0.0f64; c];
    for ch in 0..c {
        for i in 0..cells {
            let lo = i * STRUCTURE_POOL_ROWS;
            let hi = (lo + STRUCTURE_POOL_ROWS).min(h);
            for xx in 0..w {
                let s: f64 = (lo..hi).map(|y| x0[(ch * h + y) * w + xx]).sum();
                pooled[(ch * cells + i) * w + xx] =
                    s / (hi - lo) as f64 - target.get(ch, i, xx) as f64;
            }
        }
        let plane = &x0[ch * h * w..(ch + 1) * h * w];
        means[ch] = plane.iter().sum::<f64>() / (h * w) as f64 - spec.appearance_target[ch] as f64;
    }
    Ok(Residuals { pooled, means })
}

/// `E_s = ½‖pool(x̂₀) − S‖²` and `E_a = ½‖mean(x̂₀) − a‖²` for a window.
pub fn guidance_energy(
    x_t: &LatentTensor,
    eps: &LatentTensor,
    abar: f64,
    spec: &GuidanceSpec,
    range: &ColumnRange,
) -> Result<GuidanceEnergy> {
    let x0 = predicted_x0(x_t, eps, abar)?;
    let r = residuals(&x0, x_t.dims(), spec, range)?;
    Ok(GuidanceEnergy {
        structure: 0.5 * r.pooled.iter().map(|v| v * v).sum::<f64>(),
        appearance: 0.5 * r.means.iter().map(|v| v * v).sum::<f64>(),
    })
}

/// Gradient of `λ_s·E_s + λ_a·E_a` with respect to `x_t`, holding `ε` fixed.
pub fn guidance_gradients(
    x_t: &LatentTensor,
    eps: &LatentTensor,
    abar: f64,
    spec: &GuidanceSpec,
    range: &ColumnRange,
) -> Result<LatentTensor> {
    let (c, h, w) = x_t.dims();
    let x0 = predicted_x0(x_t, eps, abar)?;
    let r = residuals(&x0, (c, h, w), spec, range)?;
    let cells = h.div_ceil(STRUCTURE_POOL_ROWS);
    let inv_sa = 1.0 / abar.sqrt();
    let plane = (h * w) as f64;
    Ok(Tensor::from_fn(c, h, w, |ch, y, xx| {
        let i = y / STRUCTURE_POOL_ROWS;
        let n = ((i + 1) * STRUCTURE_POOL_ROWS).min(h) - i * STRUCTURE_POOL_ROWS;
        let gs = r.pooled[(ch * cells + i) * w + xx] / n as f64;
        let ga = r.means[ch] / plane;
        ((spec.structure_weight * gs + spec.appearance_weight * ga) * inv_sa) as f32
    }))
}

/// Noise-space correction for one window.
///
/// The weights are rescaled per step by `ᾱ/(1−ᾱ)` so that `λ` is the step
/// size the clean estimate `x̂₀` takes along `−∇E` at every noise level; the
/// correction is `√(1−ᾱ)·ᾱ/(1−ᾱ)·∇ₓ(λE)`.
pub fn guidance_eps_correction(
    x_t: &LatentTensor,
    eps: &LatentTensor,
    abar: f64,
    spec: &GuidanceSpec,
    range: &ColumnRange,
) -> Result<LatentTensor> {
    if spec.is_off() {
        return Ok(Tensor::zeros(x_t.channels(), x_t.height(), x_t.width()));
    }
    if abar >= 1.0 {
        return Err(Error::Schedule("guidance needs ᾱ < 1".into()));
    }
    let grad = guidance_gradients(x_t, eps, abar, spec, range)?;
    let scale = abar / (1.0 - abar).sqrt();
    Ok(grad.map(|g| (g as f64 * scale) as f32))
}

/// Window control adding the guidance correction to each window's ε.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceControl<'a> {
    pub spec: &'a GuidanceSpec,
}

impl WindowControl for GuidanceControl<'_> {
    fn adjust_eps(
        &self,
        x: &LatentTensor,
        eps: &mut LatentTensor,
        range: &ColumnRange,
        step: &StepInfo,
    ) -> Result<()> {
        if self.spec.is_off() {
            return Ok(());
        }
        let corr = guidance_eps_correction(x, eps, step.alpha_bar, self.spec, range)?;
        for (e, c) in eps.data_mut().iter_mut().zip(corr.data()) {
            *e += c;
        }
        Ok(())
    }
}
