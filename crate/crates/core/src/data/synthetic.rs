//! Piecewise-smooth test images: a shaded background with overlapping
//! rectangles and discs. Used as a stand-in corpus for tests and demos.

use rand::Rng;

use crate::data::image::{quantize, Image};
use crate::rng::seeded;

pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    let (w, h) = (width as f32, height as f32);
    let base = rng.random_range(60.0..190.0f32);
    let gx = rng.random_range(-60.0..60.0f32) / w;
    let gy = rng.random_range(-60.0..60.0f32) / h;
    let mut px: Vec<f32> = (0..height)
        .flat_map(|y| (0..width).map(move |x| base + gx * x as f32 + gy * y as f32))
        .collect();

    let shapes = rng.random_range(6..14);
    for _ in 0..shapes {
        let level = rng.random_range(10.0..245.0f32);
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let rx = rng.random_range(0.05..0.35f32) * w;
        let ry = rng.random_range(0.05..0.35f32) * h;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f32 - cx) / rx;
                let dy = (y as f32 - cy) / ry;
                let inside = if disc {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    px[y * width + x] = level + 8.0 * dx;
                }
            }
        }
    }
    Image::new(width, height, px.into_iter().map(quantize).collect()).expect("positive dimensions")
}
