//! Boundary continuity encoding: the doubled panorama, its crop-back, and
//! the analyzer counting which schedule windows see an exact copy of the
//! input.

use crate::error::{Error, Result, Violations};
use crate::tensor::{ColumnRange, ImageTensor, Tensor};
use crate::tiler::{build_schedule, TileMode, WindowId, SPATIAL_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtendSpec {
    /// Split point in image columns.
    pub alpha: usize,
    pub width: usize,
    pub height: usize,
}

impl ExtendSpec {
    pub fn new(alpha: usize, width: usize, height: usize) -> Result<Self> {
        let spec = Self {
            alpha,
            width,
            height,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default split `α = 3W/4`.
    pub fn with_default_alpha(width: usize, height: usize) -> Result<Self> {
        Self::new(width / 4 * 3, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            alpha,
            width,
            height,
        } = *self;
        let mut v = Violations::default();
        v.check(alpha > 0 && alpha <= width, || {
            format!("alpha={alpha} must satisfy 0 < alpha <= W={width}")
        });
        v.check(alpha % 8 == 0, || format!("alpha={alpha} must be a multiple of 8"));
        v.check(width > 0 && width % 16 == 0, || {
            format!("width W={width} must be a positive multiple of 16")
        });
        v.check(height > 0 && height % 8 == 0, || {
            format!("height H={height} must be a positive multiple of 8")
        });
        v.into_result()
    }

    /// Columns of the extended image kept by [`crop_back`].
    pub fn crop_range(&self) -> ColumnRange {
        ColumnRange::new(self.width - self.alpha, self.width, false)
    }

    fn check_image(&self, img: &ImageTensor, expected_width: usize) -> Result<()> {
        if img.channels() != 3 || img.height() != self.height || img.width() != expected_width {
            return Err(Error::Shape(format!(
                "expected image 3x{}x{expected_width}, got {:?}",
                self.height,
                img.dims()
            )));
        }
        Ok(())
    }
}

/// `Splice(I[α:W], I, I[0:α])`: a `2W`-wide image whose halves are equal.
pub fn extend(img: &ImageTensor, spec: &ExtendSpec) -> Result<ImageTensor> {
    spec.validate()?;
    spec.check_image(img, spec.width)?;
    let w = spec.width;
    if spec.alpha == w {
        return Tensor::hconcat(&[img, img]);
    }
    let tail = img.crop(&ColumnRange::new(spec.alpha, w - spec.alpha, false))?;
    let head = img.crop(&ColumnRange::new(0, spec.alpha, false))?;
    Tensor::hconcat(&[&tail, img, &head])
}

/// Keeps columns `[W−α, 2W−α)` of a `2W`-wide image.
pub fn crop_back(extended: &ImageTensor, spec: &ExtendSpec) -> Result<ImageTensor> {
    spec.validate()?;
    spec.check_image(extended, 2 * spec.width)?;
    extended.crop(&spec.crop_range())
}

/// Circular horizontal rotation by `k` columns (taken mod the width).
pub fn rotate_columns(img: &Tensor, k: usize) -> Tensor {
    img.rotate_columns(k % img.width().max(1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowMatches {
    pub count: usize,
    pub windows: Vec<WindowId>,
}

/// Counts the windows of one blended step whose image-space content equals
/// the input panorama column for column.
///
/// The schedule is built over the extended latent and every window is read
/// back from the extended image at 8× its latent columns. Matching is decided
/// on a probe image whose columns are all distinct, so only a window that
/// starts on the input's own column 0 (and does not rotate it) counts.
pub fn count_matching_windows(
    spec: &ExtendSpec,
    omega: usize,
    mode: TileMode,
) -> Result<WindowMatches> {
    let mut v = Violations::default();
    if let Err(Error::Validation(msgs)) = spec.validate() {
        msgs.into_iter().for_each(|m| v.check(false, || m));
    }
    if let Err(Error::Validation(msgs)) = build_schedule(spec.width, omega, mode) {
        for m in msgs {
            if !m.starts_with("width") {
                v.check(false, || m);
            }
        }
    }
    v.into_result()?;

    let schedule = build_schedule(spec.width, omega, mode)?;
    // One row is enough: a column's identity is its index.
    let probe_spec = ExtendSpec {
        height: 8,
        ..*spec
    };
    let probe = Tensor::from_fn(3, 8, spec.width, |c, y, x| (x * 24 + c * 8 + y) as f32);
    let extended = extend(&probe, &probe_spec)?;
    let mut windows = Vec::new();
    for win in schedule.windows() {
        let r = win.range;
        let image_range = ColumnRange::new(r.start * SPATIAL_FACTOR, r.len * SPATIAL_FACTOR, r.wrap);
        if extended.crop(&image_range)?.bit_eq(&probe) {
            windows.push(win.id);
        }
    }
    Ok(WindowMatches {
        count: windows.len(),
        windows,
    })
}
