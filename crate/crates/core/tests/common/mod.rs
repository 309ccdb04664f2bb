use rdncnn_core::data::{synthetic_image, Dataset, NoiseSpec, PatchConfig};
use rdncnn_core::dsd::TrainConfig;
use rdncnn_core::NetworkConfig;

/// A few hundred 20x20 patches; fast enough for per-step assertions.
pub fn small_dataset(seed: u64) -> Dataset {
    let imgs: Vec<_> = (0..2)
        .map(|i| synthetic_image(60, 60, 100 * seed + i))
        .collect();
    Dataset::from_images(
        &imgs,
        NoiseSpec::new(25.0, seed + 2).unwrap(),
        PatchConfig {
            patch_size: 20,
            stride: 10,
        },
        8,
        seed + 3,
    )
    .unwrap()
}

pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        network: NetworkConfig {
            depth: 4,
            filters: 4,
            kernel_size: 3,
            input_channels: 1,
        },
        epochs_dense: 2,
        epochs_sparse: 2,
        epochs_retrain: 0,
        sparsity: 0.15,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}
