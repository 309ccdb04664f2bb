//! Additive white Gaussian noise, `noisy = clean + sigma * z`.

use crate::data::image::{quantize, Image};
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};

/// Noise level on the 0-255 scale and the seed of its realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma, seed })
    }
}

/// A noisy observation before quantization, on the 0-255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl NoisyImage {
    /// The observation as an 8-bit image (clamped to `[0, 255]`, rounded).
    pub fn to_image(&self) -> Image {
        Image::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| quantize(v)).collect(),
        )
        .expect("dimensions carried over from a valid image")
    }
}

pub fn add_awgn(image: &Image, spec: &NoiseSpec) -> NoisyImage {
    let mut rng = seeded(spec.seed);
    let values = image
        .pixels()
        .iter()
        .map(|&p| {
            let z = standard_normal(&mut rng);
            (p as f64 + spec.sigma * z) as f32
        })
        .collect();
    NoisyImage {
        width: image.width(),
        height: image.height(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::new(4, 2, (0..8).map(|v| v * 30).collect()).unwrap();
        let noisy = add_awgn(&img, &NoiseSpec::new(0.0, 9).unwrap());
        assert_eq!(noisy.to_image(), img);
        assert!(noisy
            .values
            .iter()
            .zip(img.pixels())
            .all(|(&v, &p)| v == p as f32));
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn same_seed_same_noise() {
        let img = Image::filled(16, 16, 100).unwrap();
        let spec = NoiseSpec::new(25.0, 42).unwrap();
        assert_eq!(add_awgn(&img, &spec), add_awgn(&img, &spec));
        let other = NoiseSpec::new(25.0, 43).unwrap();
        assert_ne!(add_awgn(&img, &spec), add_awgn(&img, &other));
    }
}
