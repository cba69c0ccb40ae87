//! Time series to grayscale image transformation.
//!
//! Each univariate channel is robust-scaled, front-padded with its first
//! value until the patch grid fits exactly, cut into (possibly overlapping)
//! windows of length `P` taken every `S` samples, and the resulting `M x P`
//! stack is rendered as an `R x R` 8-bit image with three identical channels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Patch geometry: either fixed, or derived per channel from its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchGeometry {
    Auto,
    Fixed { patch_len: usize, stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchingConfig {
    pub geometry: PatchGeometry,
    pub resolution: usize,
    pub contrast: f64,
}

impl Default for PatchingConfig {
    fn default() -> Self {
        Self {
            geometry: PatchGeometry::Auto,
            resolution: 224,
            contrast: 0.8,
        }
    }
}

impl PatchingConfig {
    pub fn fixed(patch_len: usize, stride: usize, resolution: usize, contrast: f64) -> Result<Self> {
        let cfg = Self {
            geometry: PatchGeometry::Fixed { patch_len, stride },
            resolution,
            contrast,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let PatchGeometry::Fixed { patch_len, stride } = self.geometry {
            if stride < 1 || stride > patch_len {
                return Err(Error::InvalidArgument(format!(
                    "stride must satisfy 1 <= S <= P, got P={patch_len} S={stride}"
                )));
            }
        }
        if self.resolution < 16 {
            return Err(Error::InvalidArgument(format!(
                "resolution must be at least 16, got {}",
                self.resolution
            )));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contrast must lie in (0, 1], got {}",
                self.contrast
            )));
        }
        Ok(())
    }

    /// Patch length and stride for a channel of length `len`.
    pub fn resolve(&self, len: usize) -> (usize, usize) {
        match self.geometry {
            PatchGeometry::Auto => {
                let p = default_patch_len(len);
                (p, default_stride(p))
            }
            PatchGeometry::Fixed { patch_len, stride } => (patch_len, stride),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneMeta {
    pub original_len: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub pad_len: usize,
}

/// A rendered channel: the patch stack and its `R x R x 3` pixel buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<F> {
    matrix: Array2<F>,
    /// Row-major interleaved RGB, `resolution * resolution * 3` bytes.
    pixels: Vec<u8>,
    resolution: usize,
    meta: PlaneMeta,
}

impl<F: Scalar> ImagePlane<F> {
    pub fn matrix(&self) -> &Array2<F> {
        &self.matrix
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn meta(&self) -> PlaneMeta {
        self.meta
    }

    /// Number of patches M.
    pub fn n_patches(&self) -> usize {
        self.matrix.nrows()
    }

    /// One channel of the (gray) image, row-major.
    pub fn gray(&self) -> impl Iterator<Item = u8> + '_ {
        self.pixels.iter().step_by(3).copied()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let side = self.resolution as u32;
        let mut encoder = png::Encoder::new(BufWriter::new(file), side, side);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
    }
}

/// Linear-interpolation quantile of already sorted data.
pub(crate) fn quantile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = F::of(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `(x - Q2) / (Q3 - Q1)`; the denominator falls back to 1 when the
/// interquartile range is zero.
pub fn robust_scale<F: Scalar>(x: &[F]) -> Vec<F> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite input"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q2 = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let spread = q3 - q1;
    let denom = if spread == F::zero() { F::one() } else { spread };
    x.iter().map(|&v| (v - q2) / denom).collect()
}

/// `round(sqrt(T))` with halves rounded up, never below 1.
pub fn default_patch_len(len: usize) -> usize {
    let n = len.isqrt();
    // sqrt(T) >= n + 1/2  <=>  T >= n^2 + n + 1/4  <=>  T > n^2 + n
    let p = if len > n * n + n { n + 1 } else { n };
    p.max(1)
}

/// `round(P / 10)` with halves rounded up, never below 1.
pub fn default_stride(patch_len: usize) -> usize {
    ((patch_len + 5) / 10).max(1)
}

/// Number of leading copies of `x[0]` needed so the patch grid ends exactly
/// on the last sample.
pub fn front_pad_len(len: usize, patch_len: usize, stride: usize) -> usize {
    if len < patch_len {
        patch_len - len
    } else {
        (stride - (len - patch_len) % stride) % stride
    }
}

pub fn pad_front<F: Scalar>(x: &[F], patch_len: usize, stride: usize) -> Vec<F> {
    let Some(&first) = x.first() else {
        return Vec::new();
    };
    let q = front_pad_len(x.len(), patch_len, stride);
    let mut out = Vec::with_capacity(x.len() + q);
    out.resize(q, first);
    out.extend_from_slice(x);
    out
}

/// `M = (len - P) / S + 1` windows; row `m` is `x[m*S .. m*S + P]`.
pub fn patch_stack<F: Scalar>(x: &[F], patch_len: usize, stride: usize) -> Result<Array2<F>> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch length and stride must be positive".into()));
    }
    if x.len() < patch_len {
        return Err(Error::Shape(format!(
            "series of length {} is shorter than the patch length {patch_len}",
            x.len()
        )));
    }
    if !(x.len() - patch_len).is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "series length {} is not stride-aligned for P={patch_len}, S={stride}",
            x.len()
        )));
    }
    let m = (x.len() - patch_len) / stride + 1;
    Ok(Array2::from_shape_fn((m, patch_len), |(r, c)| x[r * stride + c]))
}

/// Min-max normalize, nearest-resize to `R x R`, blend toward the mean by
/// `contrast`, quantize with round-half-up, replicate to three channels.
pub fn render_image<F: Scalar>(
    matrix: &Array2<F>,
    resolution: usize,
    contrast: f64,
) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("cannot render an empty patch matrix".into()));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let (lo, hi) = matrix
        .iter()
        .fold((matrix[[0, 0]], matrix[[0, 0]]), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let half = F::of(0.5);
    let normalize = |v: F| if span > F::zero() { (v - lo) / span } else { half };

    let row_src: Vec<usize> = (0..resolution).map(|r| r * rows / resolution).collect();
    let col_src: Vec<usize> = (0..resolution).map(|c| c * cols / resolution).collect();
    let mut plane = Vec::with_capacity(resolution * resolution);
    for &sr in &row_src {
        for &sc in &col_src {
            plane.push(normalize(matrix[[sr, sc]]));
        }
    }

    let mean = plane.iter().copied().sum::<F>() / F::of_usize(plane.len());
    let factor = F::of(contrast);
    let full = F::of(255.0);
    let mut pixels = Vec::with_capacity(plane.len() * 3);
    for v in plane {
        let v = (mean + factor * (v - mean)).max(F::zero()).min(F::one());
        let q = (v * full + half).floor().to_u8().unwrap_or(255);
        pixels.extend_from_slice(&[q, q, q]);
    }
    Ok(pixels)
}

/// Full pipeline for one univariate series.
pub fn transform_series<F: Scalar>(x: &[F], cfg: &PatchingConfig) -> Result<ImagePlane<F>> {
    if x.is_empty() {
        return Err(Error::Shape("cannot transform an empty series".into()));
    }
    cfg.validate()?;
    let (patch_len, stride) = cfg.resolve(x.len());
    let scaled = robust_scale(x);
    let pad_len = front_pad_len(x.len(), patch_len, stride);
    let padded = pad_front(&scaled, patch_len, stride);
    let matrix = patch_stack(&padded, patch_len, stride)?;
    let pixels = render_image(&matrix, cfg.resolution, cfg.contrast)?;
    Ok(ImagePlane {
        matrix,
        pixels,
        resolution: cfg.resolution,
        meta: PlaneMeta {
            original_len: x.len(),
            patch_len,
            stride,
            pad_len,
        },
    })
}

/// One image per channel, in channel order.
pub fn transform_sample<F: Scalar>(sample: &Sample, cfg: &PatchingConfig) -> Result<Vec<ImagePlane<F>>> {
    if sample.channels.is_empty() {
        return Err(Error::Shape("sample has no channels".into()));
    }
    sample
        .channels
        .iter()
        .map(|ch| {
            let x: Vec<F> = ch.iter().map(|&v| F::of(v)).collect();
            transform_series(&x, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn robust_scale_examples() {
        let out = robust_scale(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(out, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(robust_scale(&[3.0f32; 4]), vec![0.0; 4]);
    }

    #[test]
    fn robust_scale_affine_invariance() {
        let x = [0.3, -1.2, 4.0, 2.5, 0.0, 7.5];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 3.0).collect();
        for (a, b) in robust_scale(&x).iter().zip(robust_scale(&y)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        // positions 0.75, 1.5, 2.25 over [10, 20, 30, 40]
        let s = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile_sorted(&s, 0.25), 17.5);
        assert_eq!(quantile_sorted(&s, 0.5), 25.0);
        assert_eq!(quantile_sorted(&s, 0.75), 32.5);
    }

    #[test]
    fn default_geometry() {
        assert_eq!(default_patch_len(96), 10);
        assert_eq!(default_patch_len(100), 10);
        assert_eq!(default_patch_len(2), 1);
        assert_eq!(default_patch_len(144), 12);
        // sqrt(110) = 10.488, sqrt(111) = 10.536
        assert_eq!(default_patch_len(110), 10);
        assert_eq!(default_patch_len(111), 11);
        assert_eq!(default_stride(10), 1);
        assert_eq!(default_stride(4), 1);
        assert_eq!(default_stride(25), 3);
        assert_eq!(default_stride(14), 1);
        assert_eq!(default_stride(15), 2);
    }

    #[test]
    fn padding_examples() {
        let x: Vec<f64> = (0..96).map(f64::from).collect();
        assert_eq!(pad_front(&x, 10, 1), x);
        assert_eq!(front_pad_len(13, 4, 3), 0);
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let padded = pad_front(&x, 4, 3);
        assert_eq!(padded.len(), 13);
        assert_eq!(&padded[..3], &[0.0, 0.0, 1.0]);
        assert_eq!(pad_front(&[5.0, 6.0], 4, 1), vec![5.0, 5.0, 5.0, 6.0]);
    }

    #[test]
    fn patch_stack_examples() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let m = patch_stack(&x, 2, 2).unwrap();
        assert_eq!(m, array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
        let x: Vec<f64> = (0..5).map(f64::from).collect();
        let m = patch_stack(&x, 3, 1).unwrap();
        assert_eq!(m, array![[0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]);
        let x = vec![0.0f64; 96];
        assert_eq!(patch_stack(&x, 10, 1).unwrap().nrows(), 87);
        assert!(patch_stack(&x[..3], 4, 1).is_err());
        assert!(patch_stack(&x[..12], 4, 3).is_err());
    }

    #[test]
    fn render_constant_matrix_is_mid_gray() {
        let px = render_image(&array![[0.7f64]], 2, 0.8).unwrap();
        assert_eq!(px, vec![128u8; 12]);
    }

    #[test]
    fn render_nearest_blocks() {
        let px = render_image(&array![[0.0f64, 1.0], [1.0, 0.0]], 4, 1.0).unwrap();
        let gray: Vec<u8> = px.iter().step_by(3).copied().collect();
        #[rustfmt::skip]
        let expected = vec![
            0, 0, 255, 255,
            0, 0, 255, 255,
            255, 255, 0, 0,
            255, 255, 0, 0,
        ];
        assert_eq!(gray, expected);
        assert!(px.chunks(3).all(|c| c[0] == c[1] && c[1] == c[2]));
    }

    #[test]
    fn contrast_contracts_range() {
        // mean 0.5, extremes 0 and 1 map to 0.1 and 0.9
        let px = render_image(&array![[0.0f64, 1.0], [1.0, 0.0]], 4, 0.8).unwrap();
        let lo = *px.iter().min().unwrap();
        let hi = *px.iter().max().unwrap();
        // 0.5 + 0.8 * -0.5 lands just below 0.1 in binary, so 25.5 - eps
        assert_eq!(lo, 25);
        assert_eq!(hi, 230);
    }

    #[test]
    fn render_rejects_empty() {
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(render_image(&empty, 16, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PatchingConfig::fixed(4, 5, 224, 0.8).is_err());
        assert!(PatchingConfig::fixed(4, 0, 224, 0.8).is_err());
        assert!(PatchingConfig::fixed(4, 2, 8, 0.8).is_err());
        assert!(PatchingConfig::fixed(4, 2, 224, 0.0).is_err());
        assert!(PatchingConfig::fixed(4, 2, 224, 1.0).is_ok());
    }

    #[test]
    fn auto_resolves_per_channel() {
        let s = Sample {
            channels: vec![
                (0..100).map(|i| (i as f64).sin()).collect(),
                (0..144).map(|i| (i as f64).cos()).collect(),
            ],
            label: 0,
        };
        let planes = transform_sample::<f64>(&s, &PatchingConfig::default()).unwrap();
        assert_eq!(planes.len(), 2);
        assert_eq!((planes[0].meta().patch_len, planes[0].meta().stride), (10, 1));
        assert_eq!((planes[1].meta().patch_len, planes[1].meta().stride), (12, 1));
        assert_eq!(planes[0].pixels().len(), 224 * 224 * 3);
    }

    #[test]
    fn png_export() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let plane = transform_series(&x, &PatchingConfig { resolution: 32, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        plane.write_png(&path).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (32, 32));
        assert_eq!(&buf[..info.buffer_size()], plane.pixels());
    }
}
