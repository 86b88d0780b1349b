//! End-to-end panorama translation: extend, encode, invert, tiled
//! translation with optional control, decode, crop back.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{Codec, CodecKind};
use crate::control::{record_source_trajectory, GuidanceControl, GuidanceSpec, InjectionPolicy, PnpControl};
use crate::denoise::{
    ColumnPadding, Conditioning, ConvToyDenoiser, Denoiser, LinearGaussianDenoiser, ZeroEpsDenoiser,
};
use crate::diffusion::{run_inversion, NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::eval::{halves_discrepancy, seam_metric, SeamReport};
use crate::geometry::{count_matching_windows, crop_back, extend, ExtendSpec};
use crate::tensor::{ImageTensor, LatentTensor, Tensor};
use crate::tiler::{build_schedule, NoControl, TileMode, Tiler, WindowControl, WindowSchedule};

/// Output seam ratios above this are flagged in the run report.
pub const SEAM_FLAG_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlMode {
    None,
    #[default]
    Pnp,
    FreeControl,
}

impl FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "pnp" => Ok(Self::Pnp),
            "freecontrol" => Ok(Self::FreeControl),
            other => Err(Error::validation(format!(
                "unknown control {other:?} (expected pnp|freecontrol|none)"
            ))),
        }
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Pnp => "pnp",
            Self::FreeControl => "freecontrol",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenoiserKind {
    Zero,
    LinearGauss,
    #[default]
    ConvToy,
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "linear-gauss" => Ok(Self::LinearGauss),
            "conv-toy" => Ok(Self::ConvToy),
            other => Err(Error::validation(format!(
                "unknown denoiser {other:?} (expected zero|linear-gauss|conv-toy)"
            ))),
        }
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::LinearGauss => "linear-gauss",
            Self::ConvToy => "conv-toy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: usize,
    pub width: usize,
    pub height: usize,
    pub schedule: ScheduleParams,
    pub omega: usize,
    pub mode: TileMode,
    pub control: ControlMode,
    pub injection: InjectionPolicy,
    pub lambda_s: f64,
    pub lambda_a: f64,
    pub denoiser: DenoiserKind,
    pub denoiser_seed: u64,
    pub conv_padding: ColumnPadding,
    pub lg_mean: f32,
    pub lg_variance: f32,
    pub codec: CodecKind,
    /// Seed of the random starting latent used by guided translation.
    pub noise_seed: u64,
    /// Mixed into prompt hashing.
    pub prompt_seed: u64,
    /// Worker threads for window evaluation; 0 means all cores.
    pub threads: usize,
}

impl PipelineConfig {
    /// Defaults for a `W × H` panorama: `α = 3W/4`, `ω = W/64`.
    pub fn for_image(width: usize, height: usize) -> Self {
        Self {
            alpha: width / 4 * 3,
            width,
            height,
            schedule: ScheduleParams::default(),
            omega: (width / 64).max(1),
            mode: TileMode::Paper,
            control: ControlMode::Pnp,
            injection: InjectionPolicy::default(),
            lambda_s: 1.0,
            lambda_a: 1.0,
            denoiser: DenoiserKind::ConvToy,
            denoiser_seed: 0,
            conv_padding: ColumnPadding::Circular,
            lg_mean: 0.0,
            lg_variance: 0.25,
            codec: CodecKind::BlockAverage,
            noise_seed: 0,
            prompt_seed: 0,
            threads: 0,
        }
    }

    /// Every setting that affects results, as `(key, value)` pairs in a
    /// fixed order. `threads` is left out since it never changes outputs.
    pub fn settings(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("omega", self.omega.to_string()),
            ("mode", self.mode.to_string()),
            ("control", self.control.to_string()),
            ("denoiser", self.denoiser.to_string()),
            ("conv_padding", self.conv_padding.to_string()),
            ("codec", self.codec.to_string()),
            ("train_steps", self.schedule.train_steps.to_string()),
            ("beta_start", self.schedule.beta_start.to_string()),
            ("beta_end", self.schedule.beta_end.to_string()),
            ("ddim_steps", self.schedule.ddim_steps.to_string()),
            ("tau_f", self.injection.feature_until.to_string()),
            ("tau_a", self.injection.attention_until.to_string()),
            ("lambda_s", self.lambda_s.to_string()),
            ("lambda_a", self.lambda_a.to_string()),
            ("lg_mean", self.lg_mean.to_string()),
            ("lg_variance", self.lg_variance.to_string()),
            ("denoiser_seed", self.denoiser_seed.to_string()),
            ("noise_seed", self.noise_seed.to_string()),
            ("prompt_seed", self.prompt_seed.to_string()),
        ]
    }

    pub fn extend_spec(&self) -> ExtendSpec {
        ExtendSpec {
            alpha: self.alpha,
            width: self.width,
            height: self.height,
        }
    }

    /// Every violated rule across all components.
    pub fn validate(&self) -> Result<()> {
        let mut msgs = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(Error::Validation(m)) = r {
                for s in m {
                    if !msgs.contains(&s) {
                        msgs.push(s);
                    }
                }
            }
        };
        collect(self.extend_spec().validate());
        collect(build_schedule(self.width, self.omega, self.mode).map(|_| ()));
        collect(NoiseSchedule::new(self.schedule).map(|_| ()));
        collect(self.injection.validate());
        collect(GuidanceSpec::from_source(&Tensor::zeros(4, 1, 1), self.lambda_s, self.lambda_a).map(|_| ()));
        if self.denoiser == DenoiserKind::LinearGauss {
            collect(LinearGaussianDenoiser::new(self.lg_mean, self.lg_variance).map(|_| ()));
        }
        if msgs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(msgs))
        }
    }

    pub fn build_denoiser(&self) -> Result<Box<dyn Denoiser>> {
        Ok(match self.denoiser {
            DenoiserKind::Zero => Box::new(ZeroEpsDenoiser),
            DenoiserKind::LinearGauss => Box::new(LinearGaussianDenoiser::new(self.lg_mean, self.lg_variance)?),
            DenoiserKind::ConvToy => Box::new(ConvToyDenoiser::with_padding(self.denoiser_seed, self.conv_padding)),
        })
    }

    /// The starting latent for guided translation: standard normal noise
    /// drawn at half width and repeated, so both halves start identical.
    pub fn random_latent(&self, channels: usize, height: usize, width: usize) -> Result<LatentTensor> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(Error::Shape(format!("random latent width {width} must be even")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let half = Tensor::from_fn(channels, height, width / 2, |_, _, _| StandardNormal.sample(&mut rng));
        Tensor::hconcat(&[&half, &half])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    /// Boundary-encoded translation with injection (or no) control.
    Pant,
    /// Boundary-encoded translation with energy guidance.
    PantFree,
    /// Same stages directly on the unextended input.
    Baseline,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pant => "pant",
            Self::PantFree => "pant-free",
            Self::Baseline => "baseline",
        })
    }
}

/// Metadata and measurements of one run, rendered as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub pipeline: PipelineKind,
    pub boundary_encoding: bool,
    pub config: PipelineConfig,
    pub target: String,
    pub matching_windows: Option<usize>,
    pub seam: SeamReport,
    pub input_seam_ratio: f64,
    pub halves: Option<(f64, f64)>,
    pub wall_ms: u128,
    pub schedule_dump: String,
}

impl RunReport {
    pub fn seam_flagged(&self) -> bool {
        self.seam.seam_ratio > SEAM_FLAG_THRESHOLD
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("pipeline", &self.pipeline);
        kv("boundary_encoding", &if self.boundary_encoding { "on" } else { "off" });
        for (k, v) in c.settings() {
            kv(k, &v);
        }
        kv("target", &self.target);
        match self.matching_windows {
            Some(n) => kv("matching_windows", &n),
            None => kv("matching_windows", &"n/a"),
        }
        kv("seam_wrap_gap", &self.seam.wrap_gap);
        kv("seam_interior_gap", &self.seam.interior_gap);
        kv("seam_ratio", &self.seam.seam_ratio);
        kv("seam_flagged", &self.seam_flagged());
        kv("input_seam_ratio", &self.input_seam_ratio);
        match self.halves {
            Some((max, mean)) => {
                kv("halves_max", &max);
                kv("halves_mean", &mean);
            }
            None => {
                kv("halves_max", &"n/a");
                kv("halves_mean", &"n/a");
            }
        }
        kv("wall_ms", &self.wall_ms);
        for line in self.schedule_dump.lines() {
            let _ = writeln!(out, "schedule.{line}");
        }
        out
    }
}

/// Parses `key = value` lines (blank lines and `#` comments skipped).
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub image: ImageTensor,
    /// Decoded output before crop-back (boundary-encoded pipelines only).
    pub extended: Option<ImageTensor>,
    pub latent: LatentTensor,
    pub report: RunReport,
}

fn target_label(cond: &Conditioning) -> String {
    if cond.is_null() {
        "null".into()
    } else {
        "prompt".into()
    }
}

/// Resolved components shared by every pipeline variant.
struct Parts {
    codec: Box<dyn Codec>,
    denoiser: Box<dyn Denoiser>,
    noise: NoiseSchedule,
}

fn prepare(img: &ImageTensor, cfg: &PipelineConfig) -> Result<Parts> {
    cfg.validate()?;
    let want = (3, cfg.height, cfg.width);
    if img.dims() != want {
        return Err(Error::Validation(vec![format!(
            "input image is {:?}, configuration expects {want:?}",
            img.dims()
        )]));
    }
    Ok(Parts {
        codec: cfg.codec.build(),
        denoiser: cfg.build_denoiser()?,
        noise: NoiseSchedule::new(cfg.schedule)?,
    })
}

/// Denoises `x_t` over `schedule` with the configured control. For
/// injection, the source trajectory is recorded untiled from `x_t` itself.
fn tiled_denoise(
    x_t: &LatentTensor,
    source_x0: &LatentTensor,
    schedule: WindowSchedule,
    parts: &Parts,
    target: &Conditioning,
    cfg: &PipelineConfig,
    control: ControlMode,
) -> Result<LatentTensor> {
    let tiler = Tiler::new(schedule, cfg.threads)?;
    let denoiser = parts.denoiser.as_ref();
    let run = |ctl: &dyn WindowControl| {
        tiler
            .run(x_t, denoiser, target, ctl, &parts.noise, &mut |_, _| {})
            .map_err(|e| e.in_stage("translate"))
    };
    match control {
        ControlMode::None => run(&NoControl),
        ControlMode::Pnp => {
            let record = record_source_trajectory(x_t, denoiser, &parts.noise)
                .map_err(|e| e.in_stage("record"))?;
            run(&PnpControl {
                policy: &cfg.injection,
                record: &record,
                total_steps: parts.noise.steps(),
            })
        }
        ControlMode::FreeControl => {
            let spec = GuidanceSpec::from_source(source_x0, cfg.lambda_s, cfg.lambda_a)?;
            run(&GuidanceControl { spec: &spec })
        }
    }
}

/// Clean latent of the extended panorama and its DDIM inversion.
pub fn invert_panorama(img: &ImageTensor, cfg: &PipelineConfig) -> Result<(LatentTensor, LatentTensor)> {
    let parts = prepare(img, cfg)?;
    let ext = extend(img, &cfg.extend_spec()).map_err(|e| e.in_stage("extend"))?;
    let x0 = parts.codec.encode(&ext).map_err(|e| e.in_stage("encode"))?;
    let (xt, _) = run_inversion(&x0, parts.denoiser.as_ref(), &Conditioning::null(), &parts.noise)
        .map_err(|e| e.in_stage("invert"))?;
    Ok((xt, x0))
}

fn boundary_encoded(
    img: &ImageTensor,
    target: &Conditioning,
    cfg: &PipelineConfig,
    guided: bool,
) -> Result<Translation> {
    let start = Instant::now();
    let parts = prepare(img, cfg)?;
    let spec = cfg.extend_spec();
    let schedule = build_schedule(cfg.width, cfg.omega, cfg.mode)?;
    let schedule_dump = schedule.dump();
    let matching = count_matching_windows(&spec, cfg.omega, cfg.mode)?;

    let ext = extend(img, &spec).map_err(|e| e.in_stage("extend"))?;
    let x0 = parts.codec.encode(&ext).map_err(|e| e.in_stage("encode"))?;
    let (control, x_start) = if guided {
        let (c, h, w) = x0.dims();
        (ControlMode::FreeControl, cfg.random_latent(c, h, w)?)
    } else {
        let (xt, _) = run_inversion(&x0, parts.denoiser.as_ref(), &Conditioning::null(), &parts.noise)
            .map_err(|e| e.in_stage("invert"))?;
        let control = match cfg.control {
            ControlMode::FreeControl => ControlMode::None,
            other => other,
        };
        (control, xt)
    };
    let latent = tiled_denoise(&x_start, &x0, schedule, &parts, target, cfg, control)?;
    let decoded = parts.codec.decode(&latent).map_err(|e| e.in_stage("decode"))?;
    let image = crop_back(&decoded, &spec).map_err(|e| e.in_stage("crop_back"))?;
    let halves = halves_discrepancy(&decoded).map_err(|e| e.in_stage("metrics"))?;
    let seam = seam_metric(&image).map_err(|e| e.in_stage("metrics"))?;
    let input_seam = seam_metric(img).map_err(|e| e.in_stage("metrics"))?;
    let mut cfg = cfg.clone();
    cfg.control = control;
    let report = RunReport {
        pipeline: if guided { PipelineKind::PantFree } else { PipelineKind::Pant },
        boundary_encoding: true,
        config: cfg,
        target: target_label(target),
        matching_windows: Some(matching.count),
        seam,
        input_seam_ratio: input_seam.seam_ratio,
        halves: Some((halves.max, halves.mean)),
        wall_ms: start.elapsed().as_millis(),
        schedule_dump,
    };
    Ok(Translation {
        image,
        extended: Some(decoded),
        latent,
        report,
    })
}

/// Boundary-encoded translation. `control = freecontrol` dispatches to
/// [`translate_freecontrol`].
pub fn translate(img: &ImageTensor, target: &Conditioning, cfg: &PipelineConfig) -> Result<Translation> {
    boundary_encoded(img, target, cfg, cfg.control == ControlMode::FreeControl)
}

/// Boundary-encoded translation of a fresh noise latent steered toward the
/// input's structure and appearance. The input may be any condition map.
pub fn translate_freecontrol(
    img: &ImageTensor,
    target: &Conditioning,
    cfg: &PipelineConfig,
) -> Result<Translation> {
    boundary_encoded(img, target, cfg, true)
}

/// The same stages without boundary encoding: the input's own latent is
/// inverted and translated as one untiled window.
pub fn baseline_translate(
    img: &ImageTensor,
    target: &Conditioning,
    cfg: &PipelineConfig,
) -> Result<Translation> {
    let start = Instant::now();
    let parts = prepare(img, cfg)?;
    let x0 = parts.codec.encode(img).map_err(|e| e.in_stage("encode"))?;
    let (c, h, w) = x0.dims();
    let schedule = WindowSchedule::single(w)?;
    let schedule_dump = schedule.dump();
    let x_start = match cfg.control {
        ControlMode::FreeControl => cfg.random_latent(c, h, w)?,
        _ => {
            run_inversion(&x0, parts.denoiser.as_ref(), &Conditioning::null(), &parts.noise)
                .map_err(|e| e.in_stage("invert"))?
                .0
        }
    };
    let latent = tiled_denoise(&x_start, &x0, schedule, &parts, target, cfg, cfg.control)?;
    let image = parts.codec.decode(&latent).map_err(|e| e.in_stage("decode"))?;
    let seam = seam_metric(&image).map_err(|e| e.in_stage("metrics"))?;
    let input_seam = seam_metric(img).map_err(|e| e.in_stage("metrics"))?;
    let report = RunReport {
        pipeline: PipelineKind::Baseline,
        boundary_encoding: false,
        config: cfg.clone(),
        target: target_label(target),
        matching_windows: None,
        seam,
        input_seam_ratio: input_seam.seam_ratio,
        halves: None,
        wall_ms: start.elapsed().as_millis(),
        schedule_dump,
    };
    Ok(Translation {
        image,
        extended: None,
        latent,
        report,
    })
}
