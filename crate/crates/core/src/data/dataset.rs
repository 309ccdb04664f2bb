//! Deterministic streaming of shuffled (clean, noisy) training batches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::data::image::{load_image, Image};
use crate::data::noise::NoiseSpec;
use crate::data::patches::{extract_patches, PatchConfig};
use crate::error::{Error, Result};
use crate::rng::{seeded_stream, standard_normal};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Batch {
    pub clean: Tensor,
    pub noisy: Tensor,
}

/// Clean patches held in memory. Every epoch draws a fresh noise realization
/// (stream `epoch` of the noise seed) and a fresh shuffle (stream `epoch` of
/// the shuffle seed).
#[derive(Debug, Clone)]
pub struct Dataset {
    clean: Vec<f32>,
    count: usize,
    patch_size: usize,
    sigma: f64,
    noise_seed: u64,
    shuffle_seed: u64,
    batch_size: usize,
}

impl Dataset {
    pub fn from_images(
        images: &[Image],
        noise: NoiseSpec,
        patches: PatchConfig,
        batch_size: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("dataset needs at least one image"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let mut clean = Vec::new();
        let mut count = 0;
        for img in images {
            for p in extract_patches(img, patches)? {
                clean.extend(p.pixels().iter().map(|&v| v as f32 / 255.0));
                count += 1;
            }
        }
        Ok(Dataset {
            clean,
            count,
            patch_size: patches.patch_size,
            sigma: noise.sigma,
            noise_seed: noise.seed,
            shuffle_seed,
            batch_size,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.count
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.count.div_ceil(self.batch_size)
    }

    /// Batches for epoch `epoch`; the last one may be short.
    pub fn epoch(&self, epoch: u64) -> EpochBatches<'_> {
        let plane = self.patch_size * self.patch_size;
        let scale = (self.sigma / 255.0) as f32;
        let mut rng = seeded_stream(self.noise_seed, epoch);
        let noise = (0..self.count * plane)
            .map(|_| standard_normal(&mut rng) as f32 * scale)
            .collect();
        let mut order: Vec<usize> = (0..self.count).collect();
        order.shuffle(&mut seeded_stream(self.shuffle_seed, epoch));
        EpochBatches {
            data: self,
            noise,
            order,
            next: 0,
        }
    }
}

pub struct EpochBatches<'a> {
    data: &'a Dataset,
    noise: Vec<f32>,
    order: Vec<usize>,
    next: usize,
}

impl Iterator for EpochBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.data.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        let s = self.data.patch_size;
        let plane = s * s;
        let mut clean = Vec::with_capacity(idx.len() * plane);
        let mut noisy = Vec::with_capacity(idx.len() * plane);
        for &i in idx {
            let c = &self.data.clean[i * plane..(i + 1) * plane];
            let z = &self.noise[i * plane..(i + 1) * plane];
            clean.extend_from_slice(c);
            noisy.extend(c.iter().zip(z).map(|(a, b)| a + b));
        }
        let shape = [idx.len(), 1, s, s];
        Some(Batch {
            clean: Tensor::from_vec(&shape, clean).expect("batch shape"),
            noisy: Tensor::from_vec(&shape, noisy).expect("batch shape"),
        })
    }
}

/// Sorted `.pgm` files directly inside `dir`.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Image)>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .pgm images in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| load_image(&p).map(|img| (p, img)))
        .collect()
}

pub fn make_dataset(
    clean_dir: impl AsRef<Path>,
    noise: NoiseSpec,
    patches: PatchConfig,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Dataset> {
    let images: Vec<Image> = load_dir(clean_dir)?
        .into_iter()
        .map(|(_, img)| img)
        .collect();
    Dataset::from_images(&images, noise, patches, batch_size, shuffle_seed)
}
