use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use rdncnn_core::checkpoint::{load_checkpoint, write_atomic};
use rdncnn_core::data::{add_awgn, load_dir, NoiseSpec};
use rdncnn_core::metrics::{Db, MetricReport};

use crate::commands::{denoise_image, CmdResult, Failure};

struct Row {
    image: String,
    sigma: f64,
    before: MetricReport,
    after: MetricReport,
}

fn csv_db(v: f64) -> String {
    format!("{:.4}", Db(v))
}

fn render_csv(rows: &[Row]) -> String {
    let mut out = String::from("image,sigma,psnr_before,psnr_after,ssim_before,ssim_after\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            r.image,
            r.sigma,
            csv_db(r.before.psnr_db),
            csv_db(r.after.psnr_db),
            r.before.ssim,
            r.after.ssim
        );
    }
    out
}

fn render_table(rows: &[Row]) -> String {
    let name_w = rows.iter().map(|r| r.image.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<name_w$}  {:>5}  {:>11}  {:>10}  {:>11}  {:>10}\n",
        "image", "sigma", "PSNR before", "PSNR after", "SSIM before", "SSIM after"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>5}  {:>11}  {:>10}  {:>11.4}  {:>10.4}",
            r.image,
            r.sigma,
            Db(r.before.psnr_db).to_string(),
            Db(r.after.psnr_db).to_string(),
            r.before.ssim,
            r.after.ssim
        );
    }
    out
}

/// Noise for image `i` at level `j` uses seed `seed + j * images + i`.
pub fn run(
    checkpoint: &Path,
    clean_dir: &Path,
    sigmas: &[f64],
    seed: u64,
    out: &Path,
) -> CmdResult {
    for &s in sigmas {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Usage(format!(
                "--sigma must be finite and >= 0, got {s}"
            )));
        }
    }
    if !checkpoint.is_file() {
        return Err(Failure::Runtime(format!(
            "checkpoint {} not found",
            checkpoint.display()
        )));
    }
    let net = load_checkpoint(checkpoint)?.network;
    let images = load_dir(clean_dir)?;
    let mut rows = Vec::with_capacity(images.len() * sigmas.len());
    for (i, (path, clean)) in images.iter().enumerate() {
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        for (j, &sigma) in sigmas.iter().enumerate() {
            let noise_seed = seed.wrapping_add((j * images.len() + i) as u64);
            let noisy = add_awgn(clean, &NoiseSpec::new(sigma, noise_seed)?).to_image();
            let denoised = denoise_image(&net, &noisy)?;
            rows.push(Row {
                image: name.clone(),
                sigma,
                before: MetricReport::between(clean, &noisy)?,
                after: MetricReport::between(clean, &denoised)?,
            });
        }
    }
    print!("{}", render_table(&rows));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    write_atomic(out, render_csv(&rows).as_bytes())?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
