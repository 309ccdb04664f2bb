//! Dense-sparse training of a small denoiser on synthetic images.
//!
//! cargo run --release -p rdncnn-core --example toy_dsd -- [seed] [dense] [sparse]

use std::time::Instant;

use rdncnn_core::data::{synthetic_image, Dataset, NoiseSpec, PatchConfig};
use rdncnn_core::dsd::{reports_text, run_dsd_pipeline, TrainConfig, ValidationSet};
use rdncnn_core::NetworkConfig;

fn main() -> rdncnn_core::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let seed = args.first().copied().unwrap_or(0);
    let dense = args.get(1).copied().unwrap_or(5) as usize;
    let sparse = args.get(2).copied().unwrap_or(5) as usize;

    let train: Vec<_> = (0..9)
        .map(|i| synthetic_image(180, 180, 1000 * seed + i))
        .collect();
    let val: Vec<_> = (0..3)
        .map(|i| synthetic_image(96, 96, 1000 * seed + 500 + i))
        .collect();
    let data = Dataset::from_images(
        &train,
        NoiseSpec::new(25.0, seed + 2)?,
        PatchConfig::default(),
        16,
        seed + 3,
    )?;
    let val = ValidationSet::new(val, 25.0, seed + 4)?;
    let config = TrainConfig {
        network: NetworkConfig {
            depth: 5,
            filters: 16,
            kernel_size: 3,
            input_channels: 1,
        },
        epochs_dense: dense,
        epochs_sparse: sparse,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    println!(
        "{} patches, baseline PSNR {:.2} dB",
        data.patch_count(),
        val.baseline_psnr()?
    );
    let start = Instant::now();
    let outcome = run_dsd_pipeline(&config, &data, Some(&val))?;
    print!("{}", reports_text(&outcome.reports));
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
