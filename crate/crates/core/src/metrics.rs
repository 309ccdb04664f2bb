//! PSNR and SSIM on 8-bit grayscale images.

use std::fmt;

use crate::data::Image;
use crate::error::{Error, Result};

pub const PEAK_8BIT: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * PEAK_8BIT) * (0.01 * PEAK_8BIT);
pub const SSIM_C2: f64 = (0.03 * PEAK_8BIT) * (0.03 * PEAK_8BIT);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn between(reference: &Image, test: &Image) -> Result<Self> {
        Ok(MetricReport {
            psnr_db: psnr(reference, test)?,
            ssim: ssim(reference, test)?,
        })
    }
}

/// Decibel value for reports; infinity prints as `inf`.
#[derive(Debug, Clone, Copy)]
pub struct Db(pub f64);

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() && self.0 > 0.0 {
            f.pad("inf")
        } else {
            let prec = f.precision().unwrap_or(2);
            match f.width() {
                Some(w) => write!(f, "{:>w$.prec$}", self.0),
                None => write!(f, "{:.prec$}", self.0),
            }
        }
    }
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)` over two equally long value slices.
pub fn psnr_values(reference: &[f64], test: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::invalid(format!(
            "psnr: value counts differ or are empty ({} vs {})",
            reference.len(),
            test.len()
        )));
    }
    let sse: f64 = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / reference.len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    same_dims(reference, test)?;
    psnr_values(&to_f64(reference), &to_f64(test), PEAK_8BIT)
}

fn to_f64(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| p as f64).collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable Gaussian filter over every valid window position.
fn filter_valid(plane: &[f64], width: usize, height: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; height * ow];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = taps
                .iter()
                .zip(&row[x..x + SSIM_WINDOW])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian-weighted windows (sigma 1.5).
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    same_dims(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let x = to_f64(reference);
    let y = to_f64(test);
    let taps = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&x, w, h, &taps);
    let mu_y = filter_valid(&y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let (mxx, myy, mxy) = (mx * mx, my * my, mx * my);
        let var_x = e_xx[i] - mxx;
        let var_y = e_yy[i] - myy;
        let cov = e_xy[i] - mxy;
        let num = (2.0 * mxy + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mxx + myy + SSIM_C1) * (var_x + var_y + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}
