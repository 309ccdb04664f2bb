use crate::data::image::Image;
use crate::data::noise::{add_awgn, NoiseSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_size: 40,
            stride: 10,
        }
    }
}

/// Number of windows along an axis of length `len`.
pub fn windows_along(len: usize, size: usize, stride: usize) -> usize {
    if size > len {
        0
    } else {
        (len - size) / stride + 1
    }
}

/// All `s x s` windows on the stride grid, in row-major order of their
/// top-left corners.
pub fn extract_patches(image: &Image, cfg: PatchConfig) -> Result<Vec<Image>> {
    let PatchConfig {
        patch_size: s,
        stride,
    } = cfg;
    if s == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if s > image.width() || s > image.height() {
        return Err(Error::invalid(format!(
            "patch size {s} exceeds {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let rows = windows_along(image.height(), s, stride);
    let cols = windows_along(image.width(), s, stride);
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y0, x0) = (r * stride, c * stride);
            let mut px = Vec::with_capacity(s * s);
            for y in y0..y0 + s {
                let row = &image.pixels()[y * image.width() + x0..y * image.width() + x0 + s];
                px.extend_from_slice(row);
            }
            patches.push(Image::new(s, s, px)?);
        }
    }
    Ok(patches)
}

/// Aligned clean/noisy patch tensors, `[N, 1, s, s]`, scaled to `[0, 1]`.
/// The noisy side is unclamped so that `noisy - clean` is exactly the noise.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub clean: Tensor,
    pub noisy: Tensor,
    pub patch_size: usize,
}

impl PatchSet {
    /// Corrupts each patch with its own noise stream (`spec.seed + index`).
    pub fn from_patches(patches: &[Image], spec: &NoiseSpec) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::invalid("no patches to assemble"))?;
        let s = first.width();
        let mut clean = Vec::with_capacity(patches.len() * s * s);
        let mut noisy = Vec::with_capacity(patches.len() * s * s);
        for (i, p) in patches.iter().enumerate() {
            if p.width() != s || p.height() != s {
                return Err(Error::invalid("patches must share one square size"));
            }
            let n = add_awgn(
                p,
                &NoiseSpec::new(spec.sigma, spec.seed.wrapping_add(i as u64))?,
            );
            clean.extend(p.pixels().iter().map(|&v| v as f32 / 255.0));
            noisy.extend(n.values.iter().map(|&v| v / 255.0));
        }
        let shape = [patches.len(), 1, s, s];
        Ok(PatchSet {
            clean: Tensor::from_vec(&shape, clean)?,
            noisy: Tensor::from_vec(&shape, noisy)?,
            patch_size: s,
        })
    }
}
