//! Synthetic panoramas, seam and halves metrics, and the α/ω sweep.

use std::f64::consts::TAU;
use std::io;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::denoise::Conditioning;
use crate::error::{Error, Result};
use crate::geometry::count_matching_windows;
use crate::pipeline::{translate, PipelineConfig};
use crate::tensor::{ColumnRange, ImageTensor, Tensor};
use crate::tiler::TileMode;

/// Vertical frequencies of successive harmonics. No small integer
/// combination of them vanishes, so the row-averaged horizontal gradient
/// barely depends on the column and the wrap pair looks like any other.
const VERTICAL_FREQS: [f64; 3] = [1.0, 4.0, 11.0];

fn synth(seed: u64, width: usize, height: usize, harmonics: usize, circular: bool) -> Result<ImageTensor> {
    if harmonics == 0 {
        return Err(Error::validation("harmonics must be at least 1"));
    }
    if width == 0 || height == 0 {
        return Err(Error::validation("panorama must be at least 1x1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * width * height);
    for _ in 0..3 {
        let terms: Vec<(f64, f64, f64, f64)> = (0..harmonics)
            .map(|j| {
                let fx = rng.random_range(1..=4) as f64;
                // A half-integer horizontal frequency leaves a jump at the wrap.
                let fx = if circular { fx } else { fx - 0.5 };
                let fy = VERTICAL_FREQS[j % VERTICAL_FREQS.len()];
                (rng.random_range(0.3..1.0), fx, fy, rng.random_range(0.0..TAU))
            })
            .collect();
        let plane: Vec<f64> = (0..height * width)
            .map(|i| {
                let (y, x) = ((i / width) as f64, (i % width) as f64);
                terms
                    .iter()
                    .map(|(a, fx, fy, ph)| a * (TAU * (fx * x / width as f64 + fy * y / height as f64) + ph).sin())
                    .sum()
            })
            .collect();
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        data.extend(plane.iter().map(|v| ((v - lo) / span) as f32));
    }
    Tensor::new(3, height, width, data)
}

/// A panorama made of `harmonics` sinusoids per channel with integer
/// horizontal frequencies, so it wraps seamlessly. Values span `[0, 1]`.
pub fn synth_panorama(seed: u64, width: usize, height: usize, harmonics: usize) -> Result<ImageTensor> {
    synth(seed, width, height, harmonics, true)
}

/// Like [`synth_panorama`] but with half-integer horizontal frequencies, so
/// the left and right edges do not meet.
pub fn synth_noncircular(seed: u64, width: usize, height: usize, harmonics: usize) -> Result<ImageTensor> {
    synth(seed, width, height, harmonics, false)
}

/// `n` panoramas with seeds `seed, seed+1, …`.
pub fn synth_corpus(n: usize, seed: u64, width: usize, height: usize, harmonics: usize) -> Result<Vec<ImageTensor>> {
    (0..n as u64)
        .map(|i| synth_panorama(seed.wrapping_add(i), width, height, harmonics))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamReport {
    /// Mean absolute difference between the first and last column.
    pub wrap_gap: f64,
    /// Mean absolute difference over all adjacent non-wrapping column pairs.
    pub interior_gap: f64,
    pub seam_ratio: f64,
}

pub fn seam_metric(img: &Tensor) -> Result<SeamReport> {
    let (c, h, w) = img.dims();
    if w < 2 {
        return Err(Error::Shape(format!("seam metric needs width >= 2, got {w}")));
    }
    let mut wrap = 0.0f64;
    let mut interior = 0.0f64;
    for row in img.data().chunks_exact(w) {
        wrap += (row[0] as f64 - row[w - 1] as f64).abs();
        interior += row.windows(2).map(|p| (p[1] as f64 - p[0] as f64).abs()).sum::<f64>();
    }
    let rows = (c * h) as f64;
    let wrap_gap = wrap / rows;
    let interior_gap = interior / (rows * (w - 1) as f64);
    let seam_ratio = if interior_gap == 0.0 {
        if wrap_gap == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        wrap_gap / interior_gap
    };
    Ok(SeamReport {
        wrap_gap,
        interior_gap,
        seam_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halves {
    pub max: f64,
    pub mean: f64,
}

/// Elementwise comparison of columns `[0, w)` against `[w, 2w)`.
pub fn halves_discrepancy(t: &Tensor) -> Result<Halves> {
    let w2 = t.width();
    if w2 == 0 || !w2.is_multiple_of(2) {
        return Err(Error::Shape(format!("halves need an even width, got {w2}")));
    }
    let w = w2 / 2;
    let l = t.crop(&ColumnRange::new(0, w, false))?;
    let r = t.crop(&ColumnRange::new(w, w, false))?;
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for (a, b) in l.data().iter().zip(r.data()) {
        let d = (*a as f64 - *b as f64).abs();
        max = max.max(d);
        sum += d;
    }
    Ok(Halves {
        max,
        mean: sum / l.len() as f64,
    })
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub alphas: Vec<usize>,
    pub omegas: Vec<usize>,
    pub modes: Vec<TileMode>,
    /// Everything except α, ω and mode; its `threads` sets the row pool.
    pub base: PipelineConfig,
    pub target: Conditioning,
    /// Record wall time; off keeps the CSV byte-stable.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub corpus: usize,
    pub alpha: usize,
    pub omega: usize,
    pub mode: String,
    pub matching_windows: Option<usize>,
    pub seam_ratio: Option<f64>,
    pub halves_max: Option<f64>,
    pub wall_ms: u128,
    pub skip_reason: String,
}

fn sweep_row(index: usize, img: &ImageTensor, alpha: usize, omega: usize, mode: TileMode, cfg: &SweepConfig) -> SweepRow {
    let mut row = SweepRow {
        corpus: index,
        alpha,
        omega,
        mode: mode.to_string(),
        matching_windows: None,
        seam_ratio: None,
        halves_max: None,
        wall_ms: 0,
        skip_reason: String::new(),
    };
    let mut pc = cfg.base.clone();
    pc.alpha = alpha;
    pc.omega = omega;
    pc.mode = mode;
    pc.threads = 1;
    let start = Instant::now();
    let result = pc.validate().and_then(|_| {
        let m = count_matching_windows(&pc.extend_spec(), omega, mode)?;
        let t = translate(img, &cfg.target, &pc)?;
        Ok((m.count, t))
    });
    match result {
        Ok((count, t)) => {
            row.matching_windows = Some(count);
            row.seam_ratio = Some(t.report.seam.seam_ratio);
            row.halves_max = t.report.halves.map(|h| h.0);
        }
        Err(e) => row.skip_reason = e.to_string(),
    }
    if cfg.timing {
        row.wall_ms = start.elapsed().as_millis();
    }
    row
}

/// Runs every (corpus entry, α, ω, mode) combination. Rows come back
/// ordered by corpus index, then α, ω, mode; invalid combinations carry a
/// skip reason instead of measurements.
pub fn sweep(corpus: &[ImageTensor], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut jobs = Vec::new();
    for (i, img) in corpus.iter().enumerate() {
        for &a in &cfg.alphas {
            for &o in &cfg.omegas {
                for &m in &cfg.modes {
                    jobs.push((i, img, a, o, m));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.base.threads)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(i, img, a, o, m)| sweep_row(i, img, a, o, m, cfg))
            .collect()
    }))
}

pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: io::Error::other(e.to_string()),
    };
    if rows.is_empty() {
        w.write_record([
            "corpus",
            "alpha",
            "omega",
            "mode",
            "matching_windows",
            "seam_ratio",
            "halves_max",
            "wall_ms",
            "skip_reason",
        ])
        .map_err(io_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Median of the finite values, or `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
