//! Image normalization and non-overlapping patch extraction.

use alloc::vec::Vec;

use super::{Result, VlmConfig, VlmError};
use crate::math::Real;
use crate::nn::Tensor;
use crate::scene::GrayImage;

/// Area-averaged resize to `size × size`, then `(p/255 − 0.5)/0.5`.
pub fn normalize_image<T: Real>(raw: &GrayImage, size: usize) -> Result<Tensor<T>> {
    if raw.width == 0 || raw.height == 0 || raw.pixels.len() != raw.width * raw.height {
        return Err(VlmError::Format("empty or inconsistent image".into()));
    }
    let map = |v: f64| T::lit((v / 255.0 - 0.5) / 0.5);
    if raw.width == size && raw.height == size {
        return Ok(Tensor::from_fn(size, size, |r, c| map(f64::from(raw.get(c, r)))));
    }
    let sx = raw.width as f64 / size as f64;
    let sy = raw.height as f64 / size as f64;
    // Overlap of source cell `i` with target interval `[a, b)`.
    let overlap = |i: usize, a: f64, b: f64| (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
    Ok(Tensor::from_fn(size, size, |r, c| {
        let (y0, y1) = (r as f64 * sy, (r + 1) as f64 * sy);
        let (x0, x1) = (c as f64 * sx, (c + 1) as f64 * sx);
        let mut acc = 0.0;
        for y in (y0 as usize)..(libm::ceil(y1) as usize).min(raw.height) {
            let wy = overlap(y, y0, y1);
            for x in (x0 as usize)..(libm::ceil(x1) as usize).min(raw.width) {
                acc += wy * overlap(x, x0, x1) * f64::from(raw.get(x, y));
            }
        }
        map(acc / (sx * sy))
    }))
}

/// Splits a square image into `(size/p)²` rows of `p²` values; patches and
/// their pixels are both in row-major order.
pub fn patchify<T: Real>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (h, w) = (img.rows(), img.cols());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(VlmError::Shape(crate::nn::NnError::Shape(alloc::format!(
            "{h}×{w} image not divisible into {patch}-pixel patches"
        ))));
    }
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(h * w);
    for py in 0..ph {
        for px in 0..pw {
            for y in 0..patch {
                out.extend_from_slice(&img.row(py * patch + y)[px * patch..(px + 1) * patch]);
            }
        }
    }
    Ok(Tensor::from_vec(&[ph * pw, patch * patch], out)?)
}

/// Normalizes and patchifies the frames of one sample, oldest first, into
/// an `(n_frames · patches) × p²` matrix.
pub fn frames_to_patches<T: Real>(frames: &[GrayImage], cfg: &VlmConfig) -> Result<Tensor<T>> {
    if frames.len() != cfg.n_frames {
        return Err(VlmError::Shape(crate::nn::NnError::Shape(alloc::format!(
            "expected {} frames, got {}",
            cfg.n_frames,
            frames.len()
        ))));
    }
    let per = cfg.patches_per_frame();
    let p2 = cfg.patch_size * cfg.patch_size;
    let mut data = Vec::with_capacity(frames.len() * per * p2);
    for f in frames {
        let img = normalize_image::<T>(f, cfg.image_size)?;
        data.extend_from_slice(patchify(&img, cfg.patch_size)?.data());
    }
    Ok(Tensor::from_vec(&[frames.len() * per, p2], data)?)
}
