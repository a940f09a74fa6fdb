//! Image pre-processing operators.
//!
//! Every stochastic operator draws from the caller's generator in a fixed
//! order, so identical `(image, config, generator state)` always yields
//! bit-identical output.

use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Rejection-sampling budget for a rectangle that fits inside the image.
pub const MAX_RECT_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub target_h: usize,
    pub target_w: usize,
    pub flip_prob: f64,
    pub erase_prob: f64,
    /// Erased area as a fraction of the image area.
    pub erase_area_range: (f64, f64),
    /// Rectangle height / width.
    pub erase_aspect_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_h: 256,
            target_w: 128,
            flip_prob: 0.5,
            erase_prob: 0.5,
            erase_area_range: (0.02, 0.4),
            erase_aspect_range: (0.3, 10.0 / 3.0),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_h == 0 || self.target_w == 0 {
            return Err(Error::InvalidParam("target size must be positive".into()));
        }
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("erase_prob", self.erase_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParam(format!(
                    "{name} = {p} is outside [0, 1]"
                )));
            }
        }
        let (alo, ahi) = self.erase_area_range;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "erase_area_range ({alo}, {ahi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        let (rlo, rhi) = self.erase_aspect_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "erase_aspect_range ({rlo}, {rhi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Bilinear resize with half-pixel centers (`align_corners = false`).
pub fn resize(img: &ImageTensor, target_h: usize, target_w: usize) -> Result<ImageTensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidParam("resize target must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let src = img.view();
    let rows: Vec<_> = (0..target_h)
        .map(|y| source_coord(y, h, target_h))
        .collect();
    let cols: Vec<_> = (0..target_w)
        .map(|x| source_coord(x, w, target_w))
        .collect();
    let mut out = Array3::zeros((target_h, target_w, 3));
    for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..3 {
                let top = src[[y0, x0, c]] * (1.0 - fx) + src[[y0, x1, c]] * fx;
                let bottom = src[[y1, x0, c]] * (1.0 - fx) + src[[y1, x1, c]] * fx;
                out[[y, x, c]] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageTensor::from_array_unchecked(out))
}

/// Maps output index `i` onto the two neighbouring source indices and the
/// interpolation weight of the second.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Mirrors the image left to right.
pub fn horizontal_flip(img: &ImageTensor) -> ImageTensor {
    let flipped = img.view().slice(s![.., ..;-1, ..]).to_owned();
    ImageTensor::from_array_unchecked(flipped)
}

/// Flips with probability `cfg.flip_prob`.
pub fn random_flip<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ImageTensor {
    if rng.random::<f64>() < cfg.flip_prob {
        horizontal_flip(img)
    } else {
        img.clone()
    }
}

/// Draws a rectangle whose area fraction and aspect ratio come from the
/// configured ranges. A draw is rejected if it does not fit inside the image
/// or its rounded area exceeds `area_hi · H · W`; after ten rejections the
/// result is `None`.
pub fn sample_rect<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Option<Rect> {
    let area = (height * width) as f64;
    let (alo, ahi) = cfg.erase_area_range;
    let (rlo, rhi) = cfg.erase_aspect_range;
    for _ in 0..MAX_RECT_ATTEMPTS {
        let target = rng.random_range(alo..=ahi) * area;
        let aspect = rng.random_range(rlo..=rhi);
        let rh = (target * aspect).sqrt().round() as usize;
        let rw = (target / aspect).sqrt().round() as usize;
        // rounding may not grow the rectangle past the upper area bound
        if rh == 0 || rw == 0 || rh > height || rw > width || (rh * rw) as f64 > ahi * area {
            continue;
        }
        let top = rng.random_range(0..=height - rh);
        let left = rng.random_range(0..=width - rw);
        return Some(Rect {
            top,
            left,
            height: rh,
            width: rw,
        });
    }
    None
}

fn gate_and_sample<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Option<Rect>> {
    cfg.validate()?;
    if rng.random::<f64>() >= cfg.erase_prob {
        return Ok(None);
    }
    Ok(sample_rect(img.height(), img.width(), cfg, rng))
}

/// Overwrites one rectangle with i.i.d. uniform `[0, 1)` values, drawn in
/// row, column, channel order.
pub fn random_erasing<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    let Some(rect) = gate_and_sample(img, cfg, rng)? else {
        return Ok(img.clone());
    };
    let mut out = img.view().to_owned();
    for v in region_mut(&mut out, rect).iter_mut() {
        *v = rng.random::<f64>();
    }
    Ok(ImageTensor::from_array_unchecked(out))
}

/// Zeroes one rectangle.
pub fn cutout<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    let Some(rect) = gate_and_sample(img, cfg, rng)? else {
        return Ok(img.clone());
    };
    let mut out = img.view().to_owned();
    region_mut(&mut out, rect).fill(0.0);
    Ok(ImageTensor::from_array_unchecked(out))
}

/// Where the pasted crop is taken from in the patch source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CropMode {
    /// Uniformly random offset inside the source.
    #[default]
    Random,
    /// Same offset as the destination rectangle.
    Aligned,
}

/// Pastes a same-size crop of `source` over one rectangle. The crop is
/// copied verbatim, without photometric changes.
pub fn random_patch<R: Rng + ?Sized>(
    img: &ImageTensor,
    source: &ImageTensor,
    cfg: &AugmentConfig,
    crop: CropMode,
    rng: &mut R,
) -> Result<ImageTensor> {
    let Some(rect) = gate_and_sample(img, cfg, rng)? else {
        return Ok(img.clone());
    };
    let (sh, sw) = (source.height(), source.width());
    let (src_top, src_left) = match crop {
        CropMode::Random if rect.height <= sh && rect.width <= sw => (
            rng.random_range(0..=sh - rect.height),
            rng.random_range(0..=sw - rect.width),
        ),
        CropMode::Aligned if rect.top + rect.height <= sh && rect.left + rect.width <= sw => {
            (rect.top, rect.left)
        }
        _ => {
            return Err(Error::PatchSourceTooSmall {
                source_h: sh,
                source_w: sw,
                rect_h: rect.height,
                rect_w: rect.width,
            })
        }
    };
    let source_view = source.view();
    let patch = source_view.slice(s![
        src_top..src_top + rect.height,
        src_left..src_left + rect.width,
        ..
    ]);
    let mut out = img.view().to_owned();
    region_mut(&mut out, rect).assign(&patch);
    Ok(ImageTensor::from_array_unchecked(out))
}

fn region_mut(arr: &mut Array3<f64>, r: Rect) -> ndarray::ArrayViewMut3<'_, f64> {
    arr.slice_mut(s![r.top..r.top + r.height, r.left..r.left + r.width, ..])
}

/// Training-time chain: resize, random flip, random erasing.
pub fn augment<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let resized = resize(img, cfg.target_h, cfg.target_w)?;
    let flipped = random_flip(&resized, cfg, rng);
    random_erasing(&flipped, cfg, rng)
}
