use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rdncnn_core::checkpoint::{load_checkpoint, write_atomic, Checkpoint};
use rdncnn_core::config::RunConfig;
use rdncnn_core::data::{
    add_awgn, load_dir, load_image, make_dataset, synthetic_image, Dataset, Image, NoiseSpec,
};
use rdncnn_core::dsd::{
    compute_mask, reports_csv, reports_text, run_dsd_pipeline, train_dense as dense_phase,
    train_dense_retrain, train_sparse as sparse_phase, OptimizerState, Phase, PhaseOptions,
    PhaseReport, ValidationSet,
};
use rdncnn_core::gradcheck::{run_suite, Backends, DEFAULT_SEEDS};
use rdncnn_core::metrics::{Db, MetricReport};
use rdncnn_core::network::NetworkConfig;
use rdncnn_core::rng::{derive_seed, SeedPurpose};
use rdncnn_core::{Error, Network};

use crate::TrainArgs;

/// A failed command: usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

pub type CmdResult = Result<ExitCode, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

/// Loads the configuration and applies command-line overrides, validating
/// everything before any data is read.
pub fn load_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file {} not found", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(sigma) = args.sigma {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(usage(format!(
                "--sigma must be finite and >= 0, got {sigma}"
            )));
        }
        cfg.train.sigma = sigma;
    }
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn training_data(cfg: &RunConfig) -> Result<(Dataset, Option<ValidationSet>), Failure> {
    let t = &cfg.train;
    let dir = cfg.require_train_dir()?;
    let noise = NoiseSpec::new(t.sigma, derive_seed(t.seed, SeedPurpose::Noise))?;
    let data = make_dataset(
        dir,
        noise,
        cfg.patches,
        t.batch_size,
        derive_seed(t.seed, SeedPurpose::Shuffle),
    )?;
    let val = match &cfg.val_dir {
        Some(dir) => {
            let images = load_dir(dir)?.into_iter().map(|(_, img)| img).collect();
            Some(ValidationSet::new(
                images,
                t.sigma,
                derive_seed(t.seed, SeedPurpose::Validation),
            )?)
        }
        None => None,
    };
    if let Some(v) = &val {
        println!("validation baseline PSNR {}", Db(v.baseline_psnr()?));
    }
    println!(
        "{} patches of {}x{}, {} batches per epoch",
        data.patch_count(),
        data.patch_size(),
        data.patch_size(),
        data.batches_per_epoch()
    );
    Ok((data, val))
}

fn save(ck: &Checkpoint, path: &Path) -> Result<(), Failure> {
    write_atomic(path, &ck.encode())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn out_path(cfg: &RunConfig, out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| cfg.out_dir.join(default_name))
}

fn print_reports(reports: &[PhaseReport]) {
    print!("{}", reports_text(reports));
}

pub fn dsd(args: &TrainArgs, out: Option<PathBuf>) -> CmdResult {
    let mut cfg = load_config(args)?;
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    let (data, val) = training_data(&cfg)?;
    let outcome = run_dsd_pipeline(&cfg.train, &data, val.as_ref())?;
    print_reports(&outcome.reports);

    // Everything is written only once training has succeeded.
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let dir = &cfg.out_dir;
    if cfg.train.sparsity == 0.0 {
        // Nothing is pruned, so every phase is dense training of one network.
        let ck = Checkpoint::new(outcome.network.clone(), None, Phase::Dense)?;
        files.push((dir.join("netdense.ckpt"), ck.encode()));
        files.push((
            dir.join("mask.txt"),
            format!("sparsity 0\nmasked 0 of {}\n", outcome.mask.total()).into_bytes(),
        ));
    } else {
        for snap in &outcome.snapshots {
            let name = match snap.phase {
                Phase::Dense => "netdense.ckpt",
                Phase::Sparse => "netsparse.ckpt",
                Phase::Retrain => "netretrained.ckpt",
            };
            let ck = Checkpoint::new(snap.network.clone(), snap.mask.clone(), snap.phase)?;
            files.push((dir.join(name), ck.encode()));
        }
    }
    files.push((
        dir.join("train_log.txt"),
        reports_text(&outcome.reports).into_bytes(),
    ));
    files.push((
        dir.join("train_log.csv"),
        reports_csv(&outcome.reports).into_bytes(),
    ));
    files.push((dir.join("config.txt"), cfg.to_text().into_bytes()));

    create_dir(dir)?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn phase_opts(cfg: &RunConfig, epochs: usize, first_epoch: usize) -> PhaseOptions {
    PhaseOptions {
        epochs,
        lr: cfg.train.lr,
        first_epoch: first_epoch as u64,
    }
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn train_dense(args: &TrainArgs, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(args)?;
    let path = out_path(&cfg, out, "netdense.ckpt");
    let (data, val) = training_data(&cfg)?;
    let mut net = Network::new(
        cfg.train.network,
        derive_seed(cfg.train.seed, SeedPurpose::Init),
    )?;
    let mut opt = OptimizerState::new(&net);
    let report = dense_phase(
        &mut net,
        &data,
        phase_opts(&cfg, cfg.train.epochs_dense, 0),
        &mut opt,
        val.as_ref(),
    )?;
    print_reports(&[report]);
    ensure_parent(&path)?;
    save(&Checkpoint::new(net, None, Phase::Dense)?, &path)?;
    Ok(ExitCode::SUCCESS)
}

fn load(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(runtime(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// Checkpoints carry their own architecture; a configured one must agree.
fn check_architecture(cfg: &RunConfig, args: &TrainArgs, net: &Network) -> Result<(), Failure> {
    if args.config.is_some() && cfg.train.network != *net.config() {
        return Err(runtime(format!(
            "checkpoint architecture {:?} differs from the configured {:?}",
            net.config(),
            cfg.train.network
        )));
    }
    Ok(())
}

pub fn mask(checkpoint: &Path, args: &TrainArgs, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(args)?;
    let ck = load(checkpoint)?;
    check_architecture(&cfg, args, &ck.network)?;
    let mask = compute_mask(&ck.network, cfg.train.sparsity, cfg.train.ranking)?;
    println!(
        "masked {} of {} kernel weights (sparsity {})",
        mask.masked_count(),
        mask.total(),
        cfg.train.sparsity
    );
    let path = out_path(&cfg, out, "netmasked.ckpt");
    ensure_parent(&path)?;
    save(&Checkpoint::new(ck.network, Some(mask), ck.phase)?, &path)?;
    Ok(ExitCode::SUCCESS)
}

pub fn train_sparse(checkpoint: &Path, args: &TrainArgs, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(args)?;
    let path = out_path(&cfg, out, "netsparse.ckpt");
    let ck = load(checkpoint)?;
    check_architecture(&cfg, args, &ck.network)?;
    let mask = ck.mask.ok_or_else(|| {
        runtime(format!(
            "{} has no mask; run `mask` first",
            checkpoint.display()
        ))
    })?;
    if cfg.train.epochs_sparse == 0 {
        return Err(usage("epochs_sparse is 0; nothing to train"));
    }
    let (data, val) = training_data(&cfg)?;
    let mut net = ck.network;
    let mut opt = OptimizerState::new(&net);
    let report = sparse_phase(
        &mut net,
        &mask,
        &data,
        phase_opts(&cfg, cfg.train.epochs_sparse, cfg.train.epochs_dense),
        &mut opt,
        val.as_ref(),
    )?;
    print_reports(&[report]);
    ensure_parent(&path)?;
    save(&Checkpoint::new(net, Some(mask), Phase::Sparse)?, &path)?;
    Ok(ExitCode::SUCCESS)
}

pub fn retrain_dense(checkpoint: &Path, args: &TrainArgs, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(args)?;
    let path = out_path(&cfg, out, "netretrained.ckpt");
    let ck = load(checkpoint)?;
    check_architecture(&cfg, args, &ck.network)?;
    if cfg.train.epochs_retrain == 0 {
        return Err(usage("epochs_retrain is 0; nothing to train"));
    }
    let (data, val) = training_data(&cfg)?;
    let mut net = ck.network;
    let mut opt = OptimizerState::new(&net);
    let report = train_dense_retrain(
        &mut net,
        &data,
        phase_opts(
            &cfg,
            cfg.train.epochs_retrain,
            cfg.train.epochs_dense + cfg.train.epochs_sparse,
        ),
        &mut opt,
        val.as_ref(),
    )?;
    print_reports(&[report]);
    ensure_parent(&path)?;
    save(&Checkpoint::new(net, None, Phase::Retrain)?, &path)?;
    Ok(ExitCode::SUCCESS)
}

pub fn denoise_image(net: &Network, noisy: &Image) -> Result<Image, Failure> {
    if net.config().input_channels != 1 {
        return Err(runtime(format!(
            "network expects {} input channels; PGM images have 1",
            net.config().input_channels
        )));
    }
    Ok(Image::from_tensor(&net.denoise(&noisy.to_tensor())?)?)
}

fn print_metrics(label: &str, m: &MetricReport) {
    println!(
        "{label:<7} PSNR {:>6} dB  SSIM {:.4}",
        Db(m.psnr_db).to_string(),
        m.ssim
    );
}

pub fn denoise(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    reference: Option<&Path>,
    sigma: Option<f64>,
    seed: u64,
) -> CmdResult {
    let ck = load(checkpoint)?;
    let image = load_image(input)?;
    let (noisy, clean) = match (sigma, reference) {
        (Some(s), _) => {
            let spec = NoiseSpec::new(s, seed).map_err(|e| usage(e.to_string()))?;
            (add_awgn(&image, &spec).to_image(), Some(image))
        }
        (None, Some(r)) => (image, Some(load_image(r)?)),
        (None, None) => (image, None),
    };
    let denoised = denoise_image(&ck.network, &noisy)?;
    if let Some(clean) = &clean {
        print_metrics("before", &MetricReport::between(clean, &noisy)?);
        print_metrics("after", &MetricReport::between(clean, &denoised)?);
    }
    ensure_parent(out)?;
    write_atomic(out, &denoised.encode_pgm())?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Count quoted elsewhere for the 17-layer network; it matches no layer
/// arithmetic, so it is only flagged.
const QUOTED_DEPTH17_COUNT: &str = "447,057";

pub fn param_count(
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    depth: Option<usize>,
    filters: Option<usize>,
) -> CmdResult {
    let net_config = match checkpoint {
        Some(path) => *load(path)?.network.config(),
        None => {
            let mut c = match config {
                Some(path) => {
                    if !path.is_file() {
                        return Err(usage(format!("config file {} not found", path.display())));
                    }
                    RunConfig::load(path)?.train.network
                }
                None => NetworkConfig::default(),
            };
            if let Some(d) = depth {
                c.depth = d;
            }
            if let Some(f) = filters {
                c.filters = f;
            }
            c.validate().map_err(|e| usage(e.to_string()))?;
            c
        }
    };
    let count = Network::new(net_config, 0)?.count_parameters();
    println!("{count}");
    if net_config
        == (NetworkConfig {
            depth: 17,
            ..NetworkConfig::REDUCED
        })
    {
        println!(
            "note: {QUOTED_DEPTH17_COUNT} is sometimes quoted for this depth; the layer-by-layer count is {count}"
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(seed: u64) -> CmdResult {
    let report = run_suite(seed, DEFAULT_SEEDS, &Backends::default())?;
    print!("{}", report.render());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in report.failures() {
            eprintln!(
                "failed: {} {} max relative error {:.3e}",
                f.op, f.slot, f.max_error
            );
        }
        Ok(ExitCode::from(1))
    }
}

/// Image `i` is generated from seed `seed * 1000 + i`.
pub fn synth(out: &Path, count: usize, size: usize, seed: u64) -> CmdResult {
    if count == 0 || size == 0 {
        return Err(usage("--count and --size must be positive"));
    }
    create_dir(out)?;
    for i in 0..count {
        let img = synthetic_image(size, size, seed.wrapping_mul(1000).wrapping_add(i as u64));
        write_atomic(out.join(format!("synth_{i:03}.pgm")), &img.encode_pgm())?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
