//! Image ↔ latent transforms with an 8× spatial factor.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor, Tensor};
use crate::tiler::SPATIAL_FACTOR;

/// Luminance weights in thousandths, so gray maps to itself exactly.
const LUMA_MILLI: [f64; 3] = [299.0, 587.0, 114.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecDescriptor {
    pub name: &'static str,
    pub latent_channels: usize,
    pub spatial_factor: usize,
}

pub trait Codec: Send + Sync {
    fn descriptor(&self) -> CodecDescriptor;

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor>;

    fn decode(&self, latent: &LatentTensor) -> Result<ImageTensor>;
}

/// Built-in codecs selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodecKind {
    #[default]
    BlockAverage,
    BlockAverageBilinear,
}

impl CodecKind {
    pub fn build(self) -> Box<dyn Codec> {
        match self {
            Self::BlockAverage => Box::new(BlockAverageCodec),
            Self::BlockAverageBilinear => Box::new(BilinearBlockCodec),
        }
    }
}

impl FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block-avg" => Ok(Self::BlockAverage),
            "block-avg-bilinear" => Ok(Self::BlockAverageBilinear),
            other => Err(Error::validation(format!(
                "unknown codec {other:?} (expected block-avg|block-avg-bilinear)"
            ))),
        }
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BlockAverage => "block-avg",
            Self::BlockAverageBilinear => "block-avg-bilinear",
        })
    }
}

/// Per 8×8 block: RGB means mapped by `2v − 1`, plus block luminance.
fn block_average_encode(img: &ImageTensor) -> Result<LatentTensor> {
    let (c, h, w) = img.dims();
    if c != 3 || h == 0 || w == 0 || h % SPATIAL_FACTOR != 0 || w % SPATIAL_FACTOR != 0 {
        return Err(Error::Shape(format!(
            "encode needs a 3-channel image with sides divisible by 8, got {c}x{h}x{w}"
        )));
    }
    let (lh, lw) = (h / SPATIAL_FACTOR, w / SPATIAL_FACTOR);
    let n = (SPATIAL_FACTOR * SPATIAL_FACTOR) as f64;
    let mut out = Tensor::zeros(4, lh, lw);
    for by in 0..lh {
        for bx in 0..lw {
            let mut means = [0.0f64; 3];
            for (ch, m) in means.iter_mut().enumerate() {
                let mut s = 0.0f64;
                for y in by * SPATIAL_FACTOR..(by + 1) * SPATIAL_FACTOR {
                    for x in bx * SPATIAL_FACTOR..(bx + 1) * SPATIAL_FACTOR {
                        s += img.get(ch, y, x) as f64;
                    }
                }
                *m = s / n;
                out.set(ch, by, bx, (2.0 * *m - 1.0) as f32);
            }
            let luma = means.iter().zip(LUMA_MILLI).map(|(m, k)| m * k).sum::<f64>() / 1000.0;
            out.set(3, by, bx, (2.0 * luma - 1.0) as f32);
        }
    }
    Ok(out)
}

fn check_latent(latent: &LatentTensor) -> Result<()> {
    if latent.channels() < 3 {
        return Err(Error::Shape(format!(
            "decode needs at least 3 latent channels, got {}",
            latent.channels()
        )));
    }
    Ok(())
}

fn to_pixel(v: f32) -> f32 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// Block-average encoder with nearest-neighbour decoding. Exactly
/// column-local: 8 image columns map to one latent column and back.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockAverageCodec;

impl Codec for BlockAverageCodec {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "block-avg",
            latent_channels: 4,
            spatial_factor: SPATIAL_FACTOR,
        }
    }

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor> {
        block_average_encode(img)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<ImageTensor> {
        check_latent(latent)?;
        let (_, h, w) = latent.dims();
        Ok(Tensor::from_fn(3, h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, |c, y, x| {
            to_pixel(latent.get(c, y / SPATIAL_FACTOR, x / SPATIAL_FACTOR))
        }))
    }
}

/// Same encoder; decoding interpolates bilinearly between block centres
/// (edges clamp), so decoded images have no 8-pixel staircase.
#[derive(Debug, Clone, Copy, Default)]
pub struct BilinearBlockCodec;

/// Source cells and weight of the far cell for output pixel `p` along an
/// axis of `n` cells.
fn lerp_taps(p: usize, n: usize) -> (usize, usize, f32) {
    let u = (p as f32 + 0.5) / SPATIAL_FACTOR as f32 - 0.5;
    if u <= 0.0 {
        return (0, 0, 0.0);
    }
    let i0 = u.floor() as usize;
    if i0 + 1 >= n {
        return (n - 1, n - 1, 0.0);
    }
    (i0, i0 + 1, u - i0 as f32)
}

impl Codec for BilinearBlockCodec {
    fn descriptor(&self) -> CodecDescriptor {
        CodecDescriptor {
            name: "block-avg-bilinear",
            latent_channels: 4,
            spatial_factor: SPATIAL_FACTOR,
        }
    }

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor> {
        block_average_encode(img)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<ImageTensor> {
        check_latent(latent)?;
        let (_, h, w) = latent.dims();
        let rows: Vec<_> = (0..h * SPATIAL_FACTOR).map(|y| lerp_taps(y, h)).collect();
        let cols: Vec<_> = (0..w * SPATIAL_FACTOR).map(|x| lerp_taps(x, w)).collect();
        Ok(Tensor::from_fn(3, h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, |c, y, x| {
            let (y0, y1, ty) = rows[y];
            let (x0, x1, tx) = cols[x];
            let top = latent.get(c, y0, x0) * (1.0 - tx) + latent.get(c, y0, x1) * tx;
            let bottom = latent.get(c, y1, x0) * (1.0 - tx) + latent.get(c, y1, x1) * tx;
            to_pixel(top * (1.0 - ty) + bottom * ty)
        }))
    }
}
