//! Window schedules and the blended (tiled) denoising step.
//!
//! Every window is cropped from the current latent, denoised and DDIM-stepped
//! on its own, then placed back. Overlaps are averaged with the per-cell
//! coverage count Π.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::denoise::{Conditioning, Denoiser, PayloadSet};
use crate::diffusion::{ddim_sample_step, NoiseSchedule, StepInfo};
use crate::error::{Error, Result, Violations};
use crate::tensor::{ColumnRange, LatentTensor, Tensor, WeightField};

/// Image pixels per latent cell along each axis.
pub const SPATIAL_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TileMode {
    /// Regular windows `0, ω, …, w` plus the stitch patch counted twice.
    #[default]
    Paper,
    /// Wrapping windows at `0, ω, …, 2w − ω`, each counted once.
    Circular,
}

impl FromStr for TileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "circular" => Ok(Self::Circular),
            other => Err(Error::validation(format!(
                "unknown mode {other:?} (expected paper|circular)"
            ))),
        }
    }
}

impl fmt::Display for TileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Circular => "circular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WindowId {
    Regular(usize),
    Stitch,
}

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Regular(i) => write!(f, "window {i}"),
            Self::Stitch => f.write_str("stitch"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub id: WindowId,
    pub range: ColumnRange,
    /// How many times the window's output enters the blend.
    pub multiplicity: u32,
}

/// The set of windows one blended step evaluates, in accumulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSchedule {
    image_width: usize,
    omega: usize,
    mode: TileMode,
    latent_width: usize,
    window_width: usize,
    windows: Vec<Window>,
}

/// Schedule over the extended latent (width `2·W/8`) of a `W`-wide panorama.
pub fn build_schedule(image_width: usize, omega: usize, mode: TileMode) -> Result<WindowSchedule> {
    let mut v = Violations::default();
    v.check(image_width > 0 && image_width.is_multiple_of(16), || {
        format!("width W={image_width} must be a positive multiple of 16")
    });
    v.check(omega >= 1, || "omega must be at least 1".to_string());
    v.check(omega >= 1 && image_width.is_multiple_of(SPATIAL_FACTOR * omega), || {
        format!("8·omega={} must divide W={image_width}", SPATIAL_FACTOR * omega)
    });
    v.into_result()?;

    let w = image_width / SPATIAL_FACTOR;
    let latent_width = 2 * w;
    let windows = match mode {
        TileMode::Paper => {
            let mut ws: Vec<Window> = (0..=w)
                .step_by(omega)
                .enumerate()
                .map(|(i, s)| Window {
                    id: WindowId::Regular(i),
                    range: ColumnRange::new(s, w, false),
                    multiplicity: 1,
                })
                .collect();
            ws.push(Window {
                id: WindowId::Stitch,
                range: ColumnRange::new(latent_width - w / 2, w, true),
                multiplicity: 2,
            });
            ws
        }
        TileMode::Circular => (0..latent_width)
            .step_by(omega)
            .enumerate()
            .map(|(i, s)| Window {
                id: WindowId::Regular(i),
                range: ColumnRange::new(s, w, true),
                multiplicity: 1,
            })
            .collect(),
    };
    Ok(WindowSchedule {
        image_width,
        omega,
        mode,
        latent_width,
        window_width: w,
        windows,
    })
}

impl WindowSchedule {
    /// One window spanning the whole latent: plain untiled denoising.
    pub fn single(latent_width: usize) -> Result<Self> {
        if latent_width == 0 {
            return Err(Error::validation("latent width must be positive"));
        }
        Ok(Self {
            image_width: latent_width * SPATIAL_FACTOR,
            omega: latent_width,
            mode: TileMode::Paper,
            latent_width,
            window_width: latent_width,
            windows: vec![Window {
                id: WindowId::Regular(0),
                range: ColumnRange::full(latent_width),
                multiplicity: 1,
            }],
        })
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn mode(&self) -> TileMode {
        self.mode
    }

    pub fn latent_width(&self) -> usize {
        self.latent_width
    }

    pub fn window_width(&self) -> usize {
        self.window_width
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn regular_starts(&self) -> Vec<usize> {
        self.windows
            .iter()
            .filter(|w| matches!(w.id, WindowId::Regular(_)))
            .map(|w| w.range.start)
            .collect()
    }

    pub fn stitch(&self) -> Option<ColumnRange> {
        self.windows
            .iter()
            .find(|w| w.id == WindowId::Stitch)
            .map(|w| w.range)
    }

    /// Π for a latent of the given height.
    pub fn weight_field(&self, height: usize) -> WeightField {
        let mut wf = WeightField::zeros(height, self.latent_width);
        for win in &self.windows {
            wf.add_range(&win.range, win.multiplicity as f32)
                .expect("schedule ranges are valid by construction");
        }
        wf
    }

    /// Human-readable description: windows, stitch range and Π histogram.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode = {}", self.mode);
        let _ = writeln!(out, "image_width = {}", self.image_width);
        let _ = writeln!(out, "latent_width = {}", self.latent_width);
        let _ = writeln!(out, "window_width = {}", self.window_width);
        let _ = writeln!(out, "omega = {}", self.omega);
        let starts = self.regular_starts();
        let _ = writeln!(out, "regular_windows = {}", starts.len());
        let joined: Vec<String> = starts.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "regular_starts = {}", joined.join(","));
        match self.stitch() {
            Some(r) => {
                let (segs, n) = r.segments(self.latent_width);
                let parts: Vec<String> = segs[..n]
                    .iter()
                    .map(|(s, l)| format!("[{s},{})", s + l))
                    .collect();
                let _ = writeln!(out, "stitch = {} x2", parts.join("+"));
            }
            None => {
                let _ = writeln!(out, "stitch = none");
            }
        }
        let wf = self.weight_field(1);
        let hist: Vec<String> = wf
            .histogram()
            .iter()
            .map(|(w, n)| format!("{w}:{n}"))
            .collect();
        let _ = writeln!(out, "pi_histogram = {}", hist.join(","));
        out
    }
}

/// Per-window hooks used by the control mechanisms.
pub trait WindowControl: Sync {
    /// Payloads to inject into the denoiser for the window at `range`.
    fn payloads(&self, _level: usize, _range: &ColumnRange) -> Result<Option<PayloadSet>> {
        Ok(None)
    }

    /// Adjusts the window's predicted noise before the DDIM step.
    fn adjust_eps(
        &self,
        _x: &LatentTensor,
        _eps: &mut LatentTensor,
        _range: &ColumnRange,
        _step: &StepInfo,
    ) -> Result<()> {
        Ok(())
    }
}

/// No injection, no guidance.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoControl;

impl WindowControl for NoControl {}

/// Runs blended steps for one schedule on a dedicated thread pool.
pub struct Tiler {
    schedule: WindowSchedule,
    pool: rayon::ThreadPool,
}

impl fmt::Debug for Tiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tiler")
            .field("schedule", &self.schedule)
            .field("threads", &self.pool.current_num_threads())
            .finish()
    }
}

impl Tiler {
    /// `threads = 0` uses the hardware thread count.
    pub fn new(schedule: WindowSchedule, threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        Ok(Self { schedule, pool })
    }

    pub fn schedule(&self) -> &WindowSchedule {
        &self.schedule
    }

    #[allow(clippy::too_many_arguments)]
    fn window_update(
        &self,
        win: &Window,
        x_t: &LatentTensor,
        denoiser: &dyn Denoiser,
        cond: &Conditioning,
        control: &dyn WindowControl,
        step: &StepInfo,
        abar_prev: f64,
    ) -> Result<LatentTensor> {
        let x = x_t.crop(&win.range)?;
        let payloads = control.payloads(step.level, &win.range)?;
        let mut pred = denoiser.predict(&x, step, cond, payloads.as_ref())?;
        control.adjust_eps(&x, &mut pred.eps, &win.range, step)?;
        ddim_sample_step(&x, &pred.eps, step.alpha_bar, abar_prev)
    }

    /// One tiled step from `step.alpha_bar` to `abar_prev`.
    ///
    /// Windows may run in parallel; their outputs are accumulated in
    /// schedule order in f64, so the result does not depend on the thread
    /// count.
    pub fn blended_step(
        &self,
        x_t: &LatentTensor,
        denoiser: &dyn Denoiser,
        cond: &Conditioning,
        control: &dyn WindowControl,
        step: &StepInfo,
        abar_prev: f64,
    ) -> Result<LatentTensor> {
        let (c, h, width) = x_t.dims();
        if width != self.schedule.latent_width {
            return Err(Error::Shape(format!(
                "latent width {width} does not match schedule width {}",
                self.schedule.latent_width
            )));
        }
        let outputs: Vec<Result<LatentTensor>> = self.pool.install(|| {
            self.schedule
                .windows
                .par_iter()
                .map(|win| {
                    self.window_update(win, x_t, denoiser, cond, control, step, abar_prev)
                        .map_err(|e| Error::Window {
                            window: win.id.to_string(),
                            source: Box::new(e),
                        })
                })
                .collect()
        });

        let mut acc = vec![0.0f64; c * h * width];
        let mut weights = WeightField::zeros(h, width);
        for (win, out) in self.schedule.windows.iter().zip(outputs) {
            let out = out?;
            let m = win.multiplicity as f64;
            for ch in 0..c {
                for y in 0..h {
                    let base = (ch * h + y) * width;
                    for i in 0..win.range.len {
                        let xx = win.range.column(i, width);
                        acc[base + xx] += m * out.get(ch, y, i) as f64;
                    }
                }
            }
            weights.add_range(&win.range, win.multiplicity as f32)?;
        }
        if let Some(i) = weights.data().iter().position(|&w| w <= 0.0) {
            return Err(Error::Coverage { column: i % width });
        }
        let plane = h * width;
        let data = acc
            .iter()
            .enumerate()
            .map(|(i, v)| (v / weights.data()[i % plane] as f64) as f32)
            .collect();
        Tensor::new(c, h, width, data)
    }

    /// Folds [`Tiler::blended_step`] over every step of `noise`, calling
    /// `observe(level, x)` with each new latent (level `T−1` down to 0).
    pub fn run(
        &self,
        x_t: &LatentTensor,
        denoiser: &dyn Denoiser,
        cond: &Conditioning,
        control: &dyn WindowControl,
        noise: &NoiseSchedule,
        observe: &mut dyn FnMut(usize, &LatentTensor),
    ) -> Result<LatentTensor> {
        let mut x = x_t.clone();
        for level in (1..=noise.steps()).rev() {
            let step = noise.step_info(level);
            x = self
                .blended_step(&x, denoiser, cond, control, &step, noise.alpha_bar(level - 1))
                .map_err(|e| match e {
                    Error::Window { window, source } => Error::Window {
                        window: format!("{window} at step {level}"),
                        source,
                    },
                    other => other,
                })?;
            observe(level - 1, &x);
        }
        Ok(x)
    }
}

/// Convenience wrapper: tiled sampling from `x_T` to `x_0` with no observer.
pub fn run_tiled_translation(
    x_t: &LatentTensor,
    tiler: &Tiler,
    denoiser: &dyn Denoiser,
    cond: &Conditioning,
    control: &dyn WindowControl,
    noise: &NoiseSchedule,
) -> Result<LatentTensor> {
    tiler.run(x_t, denoiser, cond, control, noise, &mut |_, _| {})
}
