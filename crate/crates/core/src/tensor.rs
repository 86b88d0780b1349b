//! Dense `C×H×W` float tensors, circular column ranges, and the raw/PNG
//! file formats.
//!
//! Layout is row-major with channels outermost: element `(c, y, x)` lives at
//! `(c * height + y) * width + x`. Wrapping only ever happens along columns.

use std::fs;
use std::path::Path;

use crate::error::{Error, RawFormatError, Result};

pub const RAW_MAGIC: [u8; 4] = *b"PANT";
pub const RAW_VERSION: u32 = 1;
const RAW_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Pixel-space tensor, 3 channels with values in `[0, 1]`.
pub type ImageTensor = Tensor;
/// Latent-space tensor, 4 channels by default.
pub type LatentTensor = Tensor;

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Shape(format!("{channels}x{height}x{width} overflows")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor from values the caller already knows to be well formed.
    pub(crate) fn from_parts(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::from_parts(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_parts(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.ensure_same_shape(other, "zip_map")?;
        Ok(Tensor::from_parts(
            self.channels,
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Copies the given column slab; see [`crop_columns`].
    pub fn crop(&self, range: &ColumnRange) -> Result<Tensor> {
        crop_columns(self, range)
    }

    /// Concatenates tensors along the column axis.
    pub fn hconcat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("hconcat of zero tensors".into()))?;
        let (c, h) = (first.channels, first.height);
        if let Some(bad) = parts.iter().find(|p| p.channels != c || p.height != h) {
            return Err(Error::Shape(format!(
                "hconcat: {:?} does not match {c}x{h}xW",
                bad.dims()
            )));
        }
        let width: usize = parts.iter().map(|p| p.width).sum();
        let mut data = Vec::with_capacity(c * h * width);
        for ch in 0..c {
            for y in 0..h {
                for p in parts {
                    let row = p.index(ch, y, 0);
                    data.extend_from_slice(&p.data[row..row + p.width]);
                }
            }
        }
        Ok(Tensor::from_parts(c, h, width, data))
    }

    /// Circular horizontal rotation: output column `x` holds input column
    /// `x - k (mod width)`. `k` is reduced modulo the width.
    pub fn rotate_columns(&self, k: usize) -> Tensor {
        let w = self.width;
        if w == 0 {
            return self.clone();
        }
        let k = k % w;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(w) {
            data.extend_from_slice(&row[w - k..]);
            data.extend_from_slice(&row[..w - k]);
        }
        Tensor::from_parts(self.channels, self.height, w, data)
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&RAW_MAGIC);
        out.extend_from_slice(&RAW_VERSION.to_le_bytes());
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Tensor, RawFormatError> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(RawFormatError::Truncated {
                what: "header",
                expected: RAW_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != RAW_MAGIC {
            return Err(RawFormatError::BadMagic(magic));
        }
        let version = word(4);
        if version != RAW_VERSION {
            return Err(RawFormatError::UnsupportedVersion(version));
        }
        let (channels, height, width) = (word(8), word(12), word(16));
        let overflow = RawFormatError::DimensionOverflow {
            channels,
            height,
            width,
        };
        let count = (channels as usize)
            .checked_mul(height as usize)
            .and_then(|v| v.checked_mul(width as usize))
            .ok_or(overflow.clone())?;
        let payload = count.checked_mul(4).ok_or(overflow)?;
        let body = &bytes[RAW_HEADER_LEN..];
        if body.len() < payload {
            return Err(RawFormatError::Truncated {
                what: "payload",
                expected: payload,
                found: body.len(),
            });
        }
        if body.len() > payload {
            return Err(RawFormatError::TrailingBytes(body.len() - payload));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_parts(
            channels as usize,
            height as usize,
            width as usize,
            data,
        ))
    }
}

/// A horizontal slab of columns, optionally continuing circularly past the
/// right edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnRange {
    pub start: usize,
    pub len: usize,
    pub wrap: bool,
}

impl ColumnRange {
    pub fn new(start: usize, len: usize, wrap: bool) -> Self {
        Self { start, len, wrap }
    }

    pub fn full(width: usize) -> Self {
        Self::new(0, width, false)
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let ok = self.start < width
            && self.len >= 1
            && if self.wrap {
                self.len <= width
            } else {
                self.start + self.len <= width
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRange {
                start: self.start,
                len: self.len,
                wrap: self.wrap,
                width,
            })
        }
    }

    /// Source column for offset `i` inside the range.
    #[inline]
    pub fn column(&self, i: usize, width: usize) -> usize {
        let x = self.start + i;
        if x >= width {
            x - width
        } else {
            x
        }
    }

    /// The range as at most two contiguous `(start, len)` segments.
    pub fn segments(&self, width: usize) -> ([(usize, usize); 2], usize) {
        if self.start + self.len <= width {
            ([(self.start, self.len), (0, 0)], 1)
        } else {
            let head = width - self.start;
            ([(self.start, head), (0, self.len - head)], 2)
        }
    }

    pub fn covers(&self, x: usize, width: usize) -> bool {
        if x >= width {
            return false;
        }
        let offset = (x + width - self.start) % width;
        offset < self.len
    }
}

/// Returns the columns of `t` selected by `range`; the source is untouched.
pub fn crop_columns(t: &Tensor, range: &ColumnRange) -> Result<Tensor> {
    range.validate(t.width)?;
    let (segs, n) = range.segments(t.width);
    let mut data = Vec::with_capacity(t.channels * t.height * range.len);
    for row in t.data.chunks_exact(t.width) {
        for &(s, l) in &segs[..n] {
            data.extend_from_slice(&row[s..s + l]);
        }
    }
    Ok(Tensor::from_parts(t.channels, t.height, range.len, data))
}

/// Per-cell accumulated coverage weights (the normaliser of a blended step).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WeightField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Weight of the first row, i.e. the per-column coverage.
    pub fn column_weights(&self) -> &[f32] {
        &self.data[..self.width]
    }

    /// Sorted `(weight, cell count)` pairs.
    pub fn histogram(&self) -> Vec<(f32, usize)> {
        let mut sorted = self.data.clone();
        sorted.sort_by(f32::total_cmp);
        let mut out: Vec<(f32, usize)> = Vec::new();
        for v in sorted {
            match out.last_mut() {
                Some((w, n)) if *w == v => *n += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    /// Adds `weight` to every cell of the columns covered by `range`.
    pub fn add_range(&mut self, range: &ColumnRange, weight: f32) -> Result<()> {
        range.validate(self.width)?;
        for y in 0..self.height {
            for i in 0..range.len {
                let x = range.column(i, self.width);
                self.data[y * self.width + x] += weight;
            }
        }
        Ok(())
    }

    /// Divides `t` by the weights cell by cell, failing on any uncovered cell.
    pub fn normalize(&self, t: &mut Tensor) -> Result<()> {
        if t.height != self.height || t.width != self.width {
            return Err(Error::Shape(format!(
                "normalize: weights {}x{} vs tensor {:?}",
                self.height,
                self.width,
                t.dims()
            )));
        }
        if let Some(i) = self.data.iter().position(|&w| w <= 0.0) {
            return Err(Error::Coverage {
                column: i % self.width,
            });
        }
        let plane = self.height * self.width;
        for chunk in t.data.chunks_exact_mut(plane) {
            for (v, w) in chunk.iter_mut().zip(&self.data) {
                *v /= w;
            }
        }
        Ok(())
    }
}

/// Adds `src` into `dst` at `range` and bumps the covered weights by one.
pub fn place_columns_accumulate(
    dst: &mut Tensor,
    src: &Tensor,
    range: &ColumnRange,
    weights: &mut WeightField,
) -> Result<()> {
    place_columns_weighted(dst, src, range, weights, 1.0)
}

/// Like [`place_columns_accumulate`] with an explicit multiplicity: `src` is
/// added `weight` times and the covered weights grow by `weight`.
pub fn place_columns_weighted(
    dst: &mut Tensor,
    src: &Tensor,
    range: &ColumnRange,
    weights: &mut WeightField,
    weight: f32,
) -> Result<()> {
    range.validate(dst.width)?;
    if src.width != range.len || src.channels != dst.channels || src.height != dst.height {
        return Err(Error::Shape(format!(
            "place: patch {:?} into {:?} at width {}",
            src.dims(),
            dst.dims(),
            range.len
        )));
    }
    if weights.height != dst.height || weights.width != dst.width {
        return Err(Error::Shape(format!(
            "place: weights {}x{} vs tensor {:?}",
            weights.height,
            weights.width,
            dst.dims()
        )));
    }
    let width = dst.width;
    for c in 0..dst.channels {
        for y in 0..dst.height {
            let srow = src.index(c, y, 0);
            let drow = dst.index(c, y, 0);
            for i in 0..range.len {
                let x = range.column(i, width);
                dst.data[drow + x] += weight * src.data[srow + i];
            }
        }
    }
    weights.add_range(range, weight)
}

pub fn write_raw(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_raw_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let t = Tensor::from_raw_bytes(&bytes).map_err(|source| Error::RawFormat {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(t)
}

/// Reads an 8-bit PNG as a 3-channel image with values `byte / 255`.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(3, h, w, |c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Writes the first three channels as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn write_png(path: impl AsRef<Path>, t: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    if t.channels != 3 {
        return Err(Error::Shape(format!(
            "PNG output needs 3 channels, got {}",
            t.channels
        )));
    }
    let (h, w) = (t.height, t.width);
    let mut buf = vec![0u8; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                buf[(y * w + x) * 3 + c] = (t.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Shape("PNG buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
