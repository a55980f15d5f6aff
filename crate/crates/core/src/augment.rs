//! MI augmentation: foreground-constrained random crops and dihedral flips.
//!
//! Crops never resize the image, so the instance size seen by the FCN is the
//! same for every crop size. The bag label is applied to whatever instances
//! the crop contains.

use rand::Rng;

use crate::agg::IntegralMask;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Minimum foreground fraction of an accepted crop.
pub const MIN_FOREGROUND: f64 = 0.75;

/// Square crop window; `x` is the column offset and `y` the row offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropSpec {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSample {
    pub spec: CropSpec,
    /// Foreground fraction of the crop, by pixel count.
    pub foreground: f64,
    /// Set when no candidate reached [`MIN_FOREGROUND`] and the best one seen
    /// was returned instead.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub full_size: usize,
    pub mirror: bool,
    pub rotate90: bool,
    pub max_resample_attempts: usize,
}

impl AugmentConfig {
    pub fn new(crop_size: usize, full_size: usize) -> Self {
        Self {
            crop_size,
            full_size,
            mirror: true,
            rotate90: true,
            max_resample_attempts: 100,
        }
    }

    /// Checks `field ≤ crop_size ≤ full_size`.
    pub fn validate(&self, field: usize) -> Result<()> {
        if self.crop_size < field || self.crop_size > self.full_size {
            return Err(invalid(format!(
                "crop size {} outside [{field}, {}]",
                self.crop_size, self.full_size
            )));
        }
        if self.max_resample_attempts == 0 {
            return Err(invalid("max_resample_attempts must be positive"));
        }
        Ok(())
    }
}

pub fn foreground_fraction(mask: &Tensor<f32>, spec: &CropSpec) -> f64 {
    let count = IntegralMask::new(mask).count(spec.y, spec.x, spec.size, spec.size);
    count as f64 / (spec.size * spec.size) as f64
}

/// Rejection-samples a uniformly placed crop with at least 75% foreground.
pub fn sample_crop<R: Rng>(mask: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut R) -> Result<CropSample> {
    if mask.rank() != 2 {
        return Err(invalid(format!("mask must be rank 2, got {:?}", mask.shape())));
    }
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let size = cfg.crop_size;
    if size == 0 || size > h || size > w {
        return Err(invalid(format!("crop size {size} does not fit a {h}×{w} image")));
    }
    let integral = IntegralMask::new(mask);
    let area = (size * size) as f64;
    let mut best: Option<CropSample> = None;
    for _ in 0..cfg.max_resample_attempts.max(1) {
        let spec = CropSpec {
            y: rng.gen_range(0..=h - size),
            x: rng.gen_range(0..=w - size),
            size,
        };
        let foreground = integral.count(spec.y, spec.x, size, size) as f64 / area;
        if foreground >= MIN_FOREGROUND {
            return Ok(CropSample {
                spec,
                foreground,
                fallback: false,
            });
        }
        if best.map_or(true, |b| foreground > b.foreground) {
            best = Some(CropSample {
                spec,
                foreground,
                fallback: true,
            });
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// Crops per image per epoch so every crop size samples about the same number
/// of pixels: `⌈W_full² / w²⌉`, and exactly one (the whole image) when
/// `w == W_full`.
pub fn crop_count(crop_size: usize, full_size: usize) -> usize {
    assert!(crop_size > 0 && crop_size <= full_size, "0 < w ≤ W_full");
    if crop_size == full_size {
        return 1;
    }
    (full_size * full_size).div_ceil(crop_size * crop_size)
}

pub fn extract_crop<T: Scalar>(
    image: &Tensor<T>,
    mask: &Tensor<f32>,
    spec: &CropSpec,
) -> Result<(Tensor<T>, Tensor<f32>)> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    if image.rank() != 3 || image.shape()[..2] != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "extract_crop",
            left: image.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    }
    if spec.size == 0 || spec.y + spec.size > h || spec.x + spec.size > w {
        return Err(invalid(format!("crop {spec:?} outside {h}×{w} image")));
    }
    let c = image.shape()[2];
    let mut pixels = Vec::with_capacity(spec.size * spec.size * c);
    let mut sub_mask = Vec::with_capacity(spec.size * spec.size);
    for y in spec.y..spec.y + spec.size {
        pixels.extend_from_slice(&image.data()[(y * w + spec.x) * c..(y * w + spec.x + spec.size) * c]);
        sub_mask.extend_from_slice(&mask.data()[y * w + spec.x..y * w + spec.x + spec.size]);
    }
    Ok((
        Tensor::new(&[spec.size, spec.size, c], pixels)?,
        Tensor::new(&[spec.size, spec.size], sub_mask)?,
    ))
}

/// Horizontal mirror followed by `rotations` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Dihedral {
    pub mirror: bool,
    pub rotations: u8,
}

impl Dihedral {
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        Self {
            mirror: cfg.mirror && rng.gen_bool(0.5),
            rotations: if cfg.rotate90 { rng.gen_range(0..4) } else { 0 },
        }
    }
}

/// Applies the same exact pixel permutation to a square image and its mask.
pub fn apply_dihedral<T: Scalar>(
    image: &Tensor<T>,
    mask: &Tensor<f32>,
    transform: Dihedral,
) -> Result<(Tensor<T>, Tensor<f32>)> {
    let n = mask.shape()[0];
    if mask.rank() != 2 || mask.shape()[1] != n {
        return Err(invalid(format!("dihedral transform needs a square mask, got {:?}", mask.shape())));
    }
    if image.rank() != 3 || image.shape()[..2] != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "apply_dihedral",
            left: image.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    }
    let c = image.shape()[2];
    let source = source_map(n, transform);
    let mut pixels = Vec::with_capacity(image.len());
    let mut out_mask = Vec::with_capacity(mask.len());
    for &s in &source {
        pixels.extend_from_slice(&image.data()[s * c..(s + 1) * c]);
        out_mask.push(mask.data()[s]);
    }
    Ok((Tensor::new(image.shape(), pixels)?, Tensor::new(mask.shape(), out_mask)?))
}

/// For each output pixel, the flat index of the input pixel it comes from.
fn source_map(n: usize, transform: Dihedral) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n * n)
        .map(|p| {
            let (i, j) = (p / n, p % n);
            if transform.mirror {
                i * n + (n - 1 - j)
            } else {
                p
            }
        })
        .collect();
    for _ in 0..transform.rotations % 4 {
        // out(i, j) = prev(j, n − 1 − i)
        map = (0..n * n)
            .map(|p| {
                let (i, j) = (p / n, p % n);
                map[j * n + (n - 1 - i)]
            })
            .collect();
    }
    map
}
