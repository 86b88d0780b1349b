//! The denoiser abstraction and its deterministic toy instantiations.
//!
//! A denoiser predicts `ε` for a latent at a given step and may expose
//! named intermediates ("payloads"). Payloads handed back in through
//! `injected` replace the computed intermediate and everything downstream
//! is recomputed from it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::diffusion::StepInfo;
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Tensor};

/// Length of every conditioning vector.
pub const EMBED_DIM: usize = 16;

pub const SITE_FEATURE: &str = "feat.l1";
pub const SITE_ATTENTION: &str = "attn.l1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningKind {
    Null,
    Prompt,
}

/// A target prompt (or the null prompt) as a fixed-length vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    kind: ConditioningKind,
    embedding: Vec<f32>,
}

impl Conditioning {
    pub fn null() -> Self {
        Self {
            kind: ConditioningKind::Null,
            embedding: vec![0.0; EMBED_DIM],
        }
    }

    pub fn from_vector(embedding: Vec<f32>) -> Result<Self> {
        if embedding.len() != EMBED_DIM {
            return Err(Error::Shape(format!(
                "conditioning needs {EMBED_DIM} values, got {}",
                embedding.len()
            )));
        }
        Ok(Self {
            kind: ConditioningKind::Prompt,
            embedding,
        })
    }

    /// Maps a prompt string to a reproducible pseudo-random vector. The empty
    /// prompt is the null conditioning.
    pub fn from_prompt(text: &str, seed: u64) -> Self {
        if text.is_empty() {
            return Self::null();
        }
        let digest = Sha256::digest(text.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(word) ^ seed);
        let embedding = (0..EMBED_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            kind: ConditioningKind::Prompt,
            embedding,
        }
    }

    pub fn kind(&self) -> ConditioningKind {
        self.kind
    }

    pub fn is_null(&self) -> bool {
        self.kind == ConditioningKind::Null
    }

    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }
}

/// Payloads for one denoiser call, keyed by site.
pub type PayloadSet = BTreeMap<String, Tensor>;

/// One recorded intermediate.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPayload {
    pub step: usize,
    pub site: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub eps: LatentTensor,
    pub payloads: PayloadSet,
}

/// Noise predictor. Implementations must be deterministic and preserve the
/// input shape.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    fn predict(
        &self,
        x: &LatentTensor,
        step: &StepInfo,
        cond: &Conditioning,
        injected: Option<&PayloadSet>,
    ) -> Result<Prediction>;
}

/// Always predicts `ε = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroEpsDenoiser;

impl Denoiser for ZeroEpsDenoiser {
    fn name(&self) -> &str {
        "zero"
    }

    fn predict(
        &self,
        x: &LatentTensor,
        _step: &StepInfo,
        _cond: &Conditioning,
        _injected: Option<&PayloadSet>,
    ) -> Result<Prediction> {
        let (c, h, w) = x.dims();
        Ok(Prediction {
            eps: Tensor::zeros(c, h, w),
            payloads: PayloadSet::new(),
        })
    }
}

/// Optimal noise predictor for data `x₀ ~ N(m, v·I)`:
/// `ε = (x_t − √ᾱ·m)·√(1−ᾱ) / (ᾱ·v + 1 − ᾱ)`.
///
/// A prompt shifts the mean of channel `c` by `0.25 · embedding[c]`.
#[derive(Debug, Clone)]
pub struct LinearGaussianDenoiser {
    mean: f32,
    variance: f32,
}

impl LinearGaussianDenoiser {
    pub const PROMPT_SHIFT: f32 = 0.25;

    pub fn new(mean: f32, variance: f32) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::validation(format!(
                "linear-gauss needs finite mean and variance > 0, got {mean}, {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f32 {
        self.mean
    }

    pub fn variance(&self) -> f32 {
        self.variance
    }

    /// Data mean of channel `c` under `cond`.
    pub fn channel_mean(&self, c: usize, cond: &Conditioning) -> f32 {
        self.mean + Self::PROMPT_SHIFT * cond.embedding()[c % EMBED_DIM]
    }
}

impl Denoiser for LinearGaussianDenoiser {
    fn name(&self) -> &str {
        "linear-gauss"
    }

    fn predict(
        &self,
        x: &LatentTensor,
        step: &StepInfo,
        cond: &Conditioning,
        _injected: Option<&PayloadSet>,
    ) -> Result<Prediction> {
        let a = step.alpha_bar;
        let v = self.variance as f64;
        let gain = (1.0 - a).sqrt() / (a * v + 1.0 - a);
        let sa = a.sqrt();
        let means: Vec<f64> = (0..x.channels())
            .map(|c| self.channel_mean(c, cond) as f64)
            .collect();
        let eps = Tensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
            ((x.get(c, y, xx) as f64 - sa * means[c]) * gain) as f32
        });
        Ok(Prediction {
            eps,
            payloads: PayloadSet::new(),
        })
    }
}

/// How a convolution reads past the left/right edge of its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnPadding {
    /// Columns wrap around; the operator commutes with column rotation.
    #[default]
    Circular,
    /// Out-of-range columns read as zero, like an ordinary conv layer.
    Zero,
}

impl std::str::FromStr for ColumnPadding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Self::Circular),
            "zero" => Ok(Self::Zero),
            other => Err(Error::validation(format!(
                "unknown padding {other:?} (expected circular|zero)"
            ))),
        }
    }
}

impl std::fmt::Display for ColumnPadding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Circular => "circular",
            Self::Zero => "zero",
        })
    }
}

/// A small seeded two-stage operator with feature and attention sites.
///
/// Stage 1: `f = tanh(K₁ ⊛ x + b₁)`, a 3×3 convolution (rows zero-padded,
/// columns per [`ColumnPadding`]). Its output is site `feat.l1`.
///
/// Attention: `f` is average-pooled over blocks of 4 rows; for every column
/// the pooled cells attend to each other with a row softmax of scaled dot
/// products. The `(cells × cells × width)` map is site `attn.l1`, so it
/// crops by columns exactly like the latent.
///
/// Stage 2: `u = γ(c)⊙f + β(c) + A·pool(f)` feeds a 3×1 (rows only)
/// convolution producing a prior mean `P`, and
/// `ε = √(1−ᾱ)·(x − √ᾱ·P)`: the optimal predictor for a unit-variance
/// prior centred on `P`. Stage 2 never mixes columns, so denoising any
/// window with injected payloads equals the matching crop of the full
/// latent's prediction.
#[derive(Debug, Clone)]
pub struct ConvToyDenoiser {
    seed: u64,
    padding: ColumnPadding,
    channels: usize,
    features: usize,
    k1: Vec<f32>,
    b1: Vec<f32>,
    k2: Vec<f32>,
    gamma_proj: Vec<f32>,
    beta_proj: Vec<f32>,
}

impl ConvToyDenoiser {
    pub const FEATURES: usize = 8;
    pub const POOL_ROWS: usize = 4;

    pub fn new(seed: u64) -> Self {
        Self::with_padding(seed, ColumnPadding::Circular)
    }

    pub fn with_padding(seed: u64, padding: ColumnPadding) -> Self {
        let channels = 4;
        let features = Self::FEATURES;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, std: f64| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect()
        };
        let k1 = normal(features * channels * 9, 1.5 / (9.0 * channels as f64).sqrt());
        let b1 = normal(features, 0.1);
        let k2 = normal(channels * features * 3, 1.0 / (3.0 * features as f64).sqrt());
        let gamma_proj = normal(features * EMBED_DIM, 1.0 / (EMBED_DIM as f64).sqrt());
        let beta_proj = normal(features * EMBED_DIM, 1.0 / (EMBED_DIM as f64).sqrt());
        Self {
            seed,
            padding,
            channels,
            features,
            k1,
            b1,
            k2,
            gamma_proj,
            beta_proj,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn padding(&self) -> ColumnPadding {
        self.padding
    }

    fn stage1(&self, x: &Tensor) -> Tensor {
        let (c_in, h, w) = x.dims();
        let mut out = Tensor::zeros(self.features, h, w);
        for f in 0..self.features {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = self.b1[f];
                    for c in 0..c_in {
                        let base = (f * c_in + c) * 9;
                        for dy in 0..3 {
                            let yy = y as isize + dy as isize - 1;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for dx in 0..3 {
                                let xs = xx as isize + dx as isize - 1;
                                let xs = if xs < 0 || xs >= w as isize {
                                    match self.padding {
                                        ColumnPadding::Circular => xs.rem_euclid(w as isize),
                                        ColumnPadding::Zero => continue,
                                    }
                                } else {
                                    xs
                                };
                                acc += self.k1[base + dy * 3 + dx]
                                    * x.get(c, yy as usize, xs as usize);
                            }
                        }
                    }
                    out.set(f, y, xx, acc.tanh());
                }
            }
        }
        out
    }

    fn pooled_rows(h: usize) -> usize {
        h.div_ceil(Self::POOL_ROWS)
    }

    fn pool(&self, f: &Tensor) -> Tensor {
        let (fc, h, w) = f.dims();
        let cells = Self::pooled_rows(h);
        Tensor::from_fn(fc, cells, w, |c, i, x| {
            let lo = i * Self::POOL_ROWS;
            let hi = (lo + Self::POOL_ROWS).min(h);
            let s: f32 = (lo..hi).map(|y| f.get(c, y, x)).sum();
            s / (hi - lo) as f32
        })
    }

    fn attention(&self, pooled: &Tensor) -> Tensor {
        let (fc, cells, w) = pooled.dims();
        let scale = 1.0 / (fc as f32).sqrt();
        let mut out = Tensor::zeros(cells, cells, w);
        let mut logits = vec![0.0f32; cells];
        for x in 0..w {
            for i in 0..cells {
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = (0..fc)
                        .map(|c| pooled.get(c, i, x) * pooled.get(c, j, x))
                        .sum::<f32>()
                        * scale;
                }
                let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let z: f32 = logits.iter().map(|l| (l - m).exp()).sum();
                for (j, l) in logits.iter().enumerate() {
                    out.set(i, j, x, (l - m).exp() / z);
                }
            }
        }
        out
    }

    fn modulation(&self, cond: &Conditioning) -> (Vec<f32>, Vec<f32>) {
        let e = cond.embedding();
        let proj = |m: &[f32], f: usize| -> f32 {
            (0..EMBED_DIM).map(|k| m[f * EMBED_DIM + k] * e[k]).sum()
        };
        let gamma = (0..self.features)
            .map(|f| 1.0 + 0.5 * proj(&self.gamma_proj, f).tanh())
            .collect();
        let beta = (0..self.features)
            .map(|f| 0.2 * proj(&self.beta_proj, f).tanh())
            .collect();
        (gamma, beta)
    }

    fn injected_or(
        injected: Option<&PayloadSet>,
        site: &str,
        dims: (usize, usize, usize),
        computed: impl FnOnce() -> Tensor,
    ) -> Result<Tensor> {
        match injected.and_then(|p| p.get(site)) {
            Some(t) if t.dims() == dims => Ok(t.clone()),
            Some(t) => Err(Error::Payload {
                site: site.into(),
                reason: format!("injected shape {:?}, expected {dims:?}", t.dims()),
            }),
            None => Ok(computed()),
        }
    }
}

impl Denoiser for ConvToyDenoiser {
    fn name(&self) -> &str {
        "conv-toy"
    }

    fn predict(
        &self,
        x: &LatentTensor,
        step: &StepInfo,
        cond: &Conditioning,
        injected: Option<&PayloadSet>,
    ) -> Result<Prediction> {
        let (c_in, h, w) = x.dims();
        if c_in != self.channels {
            return Err(Error::Shape(format!(
                "conv-toy expects {} latent channels, got {c_in}",
                self.channels
            )));
        }
        let fc = self.features;
        let cells = Self::pooled_rows(h);
        let feat = Self::injected_or(injected, SITE_FEATURE, (fc, h, w), || self.stage1(x))?;
        let pooled = self.pool(&feat);
        let attn = Self::injected_or(injected, SITE_ATTENTION, (cells, cells, w), || {
            self.attention(&pooled)
        })?;

        let (gamma, beta) = self.modulation(cond);
        let u = Tensor::from_fn(fc, h, w, |f, y, xx| {
            let i = y / Self::POOL_ROWS;
            let mix: f32 = (0..cells)
                .map(|j| attn.get(i, j, xx) * pooled.get(f, j, xx))
                .sum();
            gamma[f] * feat.get(f, y, xx) + beta[f] + mix
        });

        let a = step.alpha_bar;
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        let eps = Tensor::from_fn(c_in, h, w, |c, y, xx| {
            let mut p = 0.0f32;
            for f in 0..fc {
                let base = (c * fc + f) * 3;
                for dy in 0..3 {
                    let yy = y as isize + dy as isize - 1;
                    if yy >= 0 && yy < h as isize {
                        p += self.k2[base + dy] * u.get(f, yy as usize, xx);
                    }
                }
            }
            (sb * (x.get(c, y, xx) as f64 - sa * p as f64)) as f32
        });

        let mut payloads = PayloadSet::new();
        payloads.insert(SITE_FEATURE.to_string(), feat);
        payloads.insert(SITE_ATTENTION.to_string(), attn);
        Ok(Prediction { eps, payloads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{NoiseSchedule, ScheduleParams};
    use crate::tensor::ColumnRange;
    use rand::Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0f32..1.0))
    }

    fn info(a: f64) -> StepInfo {
        StepInfo {
            level: 10,
            timestep: 199,
            alpha_bar: a,
            total: 50,
        }
    }

    #[test]
    fn prompt_vectors() {
        assert!(Conditioning::from_prompt("", 1).is_null());
        let a = Conditioning::from_prompt("watercolor painting", 7);
        let b = Conditioning::from_prompt("watercolor painting", 7);
        let c = Conditioning::from_prompt("anime artwork", 7);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, Conditioning::from_prompt("watercolor painting", 8));
        assert_eq!(Conditioning::null().embedding(), &[0.0; EMBED_DIM]);
        assert!(Conditioning::from_vector(vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_eps_outputs() {
        let x = random(4, 3, 5, 1);
        let p = ZeroEpsDenoiser
            .predict(&x, &info(0.5), &Conditioning::from_prompt("x", 0), None)
            .unwrap();
        assert_eq!(p.eps.dims(), x.dims());
        assert!(p.eps.data().iter().all(|&v| v == 0.0));
        assert!(p.payloads.is_empty());
    }

    #[test]
    fn linear_gauss_at_mean_is_zero() {
        let d = LinearGaussianDenoiser::new(0.3, 0.5).unwrap();
        let a = 0.4f64;
        let x = Tensor::filled(4, 2, 2, (a.sqrt() * 0.3f64) as f32);
        let p = d.predict(&x, &info(a), &Conditioning::null(), None).unwrap();
        assert!(p.eps.max_abs() < 1e-7);
    }

    #[test]
    fn linear_gauss_wide_prior_limit() {
        let d = LinearGaussianDenoiser::new(0.0, 1e9).unwrap();
        let x = Tensor::filled(4, 2, 2, 1.0);
        for a in [0.99, 0.5, 0.05, 0.01] {
            let p = d.predict(&x, &info(a), &Conditioning::null(), None).unwrap();
            assert!(p.eps.max_abs() <= 1e-6, "ᾱ={a}: {}", p.eps.max_abs());
        }
        assert!(LinearGaussianDenoiser::new(0.0, 0.0).is_err());
    }

    #[test]
    fn linear_gauss_sampling_tracks_posterior_mean() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let d = LinearGaussianDenoiser::new(0.2, 0.05).unwrap();
        let cond = Conditioning::from_prompt("cartoon", 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Tensor::from_fn(4, 4, 4, |_, _, _| StandardNormal.sample(&mut rng));
        let target: Vec<f64> = (0..4).map(|c| d.channel_mean(c, &cond) as f64).collect();
        let dev = |x: &Tensor, a: f64| -> f64 {
            let mut acc = 0.0;
            for (c, t) in target.iter().enumerate() {
                for y in 0..4 {
                    for xx in 0..4 {
                        acc += (x.get(c, y, xx) as f64 - a.sqrt() * t).abs();
                    }
                }
            }
            acc / 64.0
        };
        let mut last = dev(&x, s.alpha_bar(50));
        for level in (1..=50).rev() {
            let st = s.step_info(level);
            let p = d.predict(&x, &st, &cond, None).unwrap();
            // x̂₀ implied by ε equals the analytic Gaussian posterior mean.
            let a = st.alpha_bar;
            let v = d.variance() as f64;
            for (c, &t) in target.iter().enumerate() {
                let xv = x.get(c, 0, 0) as f64;
                let post = t + a.sqrt() * v * (xv - a.sqrt() * t) / (a * v + 1.0 - a);
                let x0 = (xv - (1.0 - a).sqrt() * p.eps.get(c, 0, 0) as f64) / a.sqrt();
                assert!((x0 - post).abs() < 1e-3 * (1.0 + post.abs()), "level {level}");
            }
            x = crate::diffusion::ddim_sample_step(&x, &p.eps, a, s.alpha_bar(level - 1)).unwrap();
            let now = dev(&x, s.alpha_bar(level - 1));
            assert!(now <= last + 1e-6, "level {level}: {now} > {last}");
            last = now;
        }
        // Final spread is on the order of the data std √v.
        assert!(last < 0.5);
    }

    #[test]
    fn conv_toy_is_shift_equivariant() {
        let d = ConvToyDenoiser::new(5);
        let x = random(4, 8, 16, 2);
        let cond = Conditioning::from_prompt("oil painting", 1);
        let base = d.predict(&x, &info(0.3), &cond, None).unwrap();
        for k in [1, 5, 15] {
            let rot = d.predict(&x.rotate_columns(k), &info(0.3), &cond, None).unwrap();
            assert!(rot.eps.max_abs_diff(&base.eps.rotate_columns(k)).unwrap() <= 1e-6);
            for site in [SITE_FEATURE, SITE_ATTENTION] {
                assert!(
                    rot.payloads[site]
                        .max_abs_diff(&base.payloads[site].rotate_columns(k))
                        .unwrap()
                        <= 1e-6
                );
            }
        }
    }

    #[test]
    fn zero_padding_breaks_equivariance_only_near_edges() {
        let d = ConvToyDenoiser::with_padding(5, ColumnPadding::Zero);
        let x = random(4, 8, 16, 2);
        let cond = Conditioning::null();
        let base = d.predict(&x, &info(0.3), &cond, None).unwrap();
        let rot = d.predict(&x.rotate_columns(4), &info(0.3), &cond, None).unwrap();
        let shifted = base.eps.rotate_columns(4);
        assert!(rot.eps.max_abs_diff(&shifted).unwrap() > 1e-4);
        let interior = ColumnRange::new(6, 8, false);
        assert!(
            rot.eps.crop(&interior).unwrap().max_abs_diff(&shifted.crop(&interior).unwrap()).unwrap()
                <= 1e-6
        );
    }

    #[test]
    fn self_injection_is_noop() {
        let d = ConvToyDenoiser::new(9);
        let x = random(4, 8, 12, 3);
        let cond = Conditioning::from_prompt("sketch", 0);
        let a = d.predict(&x, &info(0.6), &cond, None).unwrap();
        let b = d.predict(&x, &info(0.6), &cond, Some(&a.payloads)).unwrap();
        assert!(a.eps.bit_eq(&b.eps));
        let again = d.predict(&x, &info(0.6), &cond, None).unwrap();
        for (site, t) in &a.payloads {
            assert!(t.bit_eq(&again.payloads[site]));
        }
    }

    #[test]
    fn injected_window_matches_full_crop() {
        let d = ConvToyDenoiser::with_padding(9, ColumnPadding::Zero);
        let x = random(4, 8, 24, 4);
        let cond = Conditioning::from_prompt("sketch", 0);
        let full = d.predict(&x, &info(0.6), &cond, None).unwrap();
        let r = ColumnRange::new(18, 12, true);
        let mut inj = PayloadSet::new();
        for (site, t) in &full.payloads {
            inj.insert(site.clone(), t.crop(&r).unwrap());
        }
        let win = d.predict(&x.crop(&r).unwrap(), &info(0.6), &cond, Some(&inj)).unwrap();
        assert!(win.eps.bit_eq(&full.eps.crop(&r).unwrap()));
    }

    #[test]
    fn half_symmetric_input_gives_half_symmetric_output() {
        let d = ConvToyDenoiser::new(2);
        let half = random(4, 8, 10, 7);
        let x = Tensor::hconcat(&[&half, &half]).unwrap();
        let p = d.predict(&x, &info(0.5), &Conditioning::null(), None).unwrap();
        let l = ColumnRange::new(0, 10, false);
        let r = ColumnRange::new(10, 10, false);
        assert!(p.eps.crop(&l).unwrap().bit_eq(&p.eps.crop(&r).unwrap()));
        for t in p.payloads.values() {
            assert!(t.crop(&l).unwrap().bit_eq(&t.crop(&r).unwrap()));
        }
    }

    #[test]
    fn injected_shape_mismatch_names_site() {
        let d = ConvToyDenoiser::new(1);
        let x = random(4, 8, 12, 3);
        let mut inj = PayloadSet::new();
        inj.insert(SITE_ATTENTION.to_string(), Tensor::zeros(2, 2, 11));
        match d.predict(&x, &info(0.5), &Conditioning::null(), Some(&inj)) {
            Err(Error::Payload { site, .. }) => assert_eq!(site, SITE_ATTENTION),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_changes_output() {
        let d = ConvToyDenoiser::new(1);
        let x = random(4, 8, 12, 3);
        let a = d.predict(&x, &info(0.5), &Conditioning::null(), None).unwrap();
        let b = d
            .predict(&x, &info(0.5), &Conditioning::from_prompt("ink", 0), None)
            .unwrap();
        assert!(a.eps.max_abs_diff(&b.eps).unwrap() > 1e-3);
    }
}
