//! Images, noise injection, patches and training streams.

mod dataset;
mod image;
mod noise;
mod patches;
mod synthetic;

pub use dataset::{list_images, load_dir, make_dataset, Batch, Dataset, EpochBatches};
pub use image::{load_image, save_image, Image};
pub use noise::{add_awgn, NoiseSpec, NoisyImage};
pub use patches::{extract_patches, windows_along, PatchConfig, PatchSet};
pub use synthetic::synthetic_image;
