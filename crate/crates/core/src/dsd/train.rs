//! Dense, sparse and dense-retrain phases and the pipeline that chains them.

use std::fmt;

use crate::data::{add_awgn, Dataset, Image, NoiseSpec};
use crate::dsd::adam::{adam_step, OptimizerState};
use crate::dsd::mask::{apply_mask, compute_mask, Mask, RankingScope};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::network::{Network, NetworkConfig};
use crate::ops::{residual_mse_loss, Mode};
use crate::rng::{derive_seed, SeedPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Dense,
    Sparse,
    Retrain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Dense => "dense",
            Phase::Sparse => "sparse",
            Phase::Retrain => "retrain",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Step-decay schedule: `initial` for the first half of a phase, then
/// `initial * drop_factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f32,
    pub drop_factor: f32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            drop_factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch_in_phase: usize, phase_epochs: usize) -> f32 {
        if phase_epochs >= 2 && 2 * epoch_in_phase >= phase_epochs {
            self.initial * self.drop_factor
        } else {
            self.initial
        }
    }
}

/// How one phase runs: its length, learning rate, and the global index of
/// its first epoch (which selects that epoch's noise and shuffle streams).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOptions {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub first_epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub phase: Phase,
    /// 1-based, counted across the whole run.
    pub epoch: u64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub phase: Phase,
    pub epochs: Vec<EpochReport>,
    /// Set for the sparse phase.
    pub masked_count: Option<usize>,
}

impl PhaseReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_val_psnr(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_psnr)
    }
}

/// Fixed noisy copies of held-out images, quantized to 8 bits.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    clean: Vec<Image>,
    noisy: Vec<Image>,
}

impl ValidationSet {
    pub fn new(images: Vec<Image>, sigma: f64, seed: u64) -> Result<Self> {
        let noisy = images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                NoiseSpec::new(sigma, seed.wrapping_add(i as u64))
                    .map(|s| add_awgn(img, &s).to_image())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ValidationSet {
            clean: images,
            noisy,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Image, &Image)> {
        self.clean.iter().zip(&self.noisy)
    }

    /// Mean PSNR of the noisy inputs themselves.
    pub fn baseline_psnr(&self) -> Result<f64> {
        mean(self.pairs().map(|(c, n)| psnr(c, n)))
    }

    /// Mean PSNR after denoising each noisy image with `net`.
    pub fn denoised_psnr(&self, net: &Network) -> Result<f64> {
        mean(self.pairs().map(|(c, n)| {
            let out = Image::from_tensor(&net.denoise(&n.to_tensor())?)?;
            psnr(c, &out)
        }))
    }
}

fn mean(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let v = values.collect::<Result<Vec<f64>>>()?;
    if v.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn run_epochs(
    net: &mut Network,
    data: &Dataset,
    opts: PhaseOptions,
    opt: &mut OptimizerState,
    mask: Option<&Mask>,
    val: Option<&ValidationSet>,
    phase: Phase,
) -> Result<PhaseReport> {
    if data.patch_count() == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    let mut epochs = Vec::with_capacity(opts.epochs);
    for e in 0..opts.epochs {
        let lr = opts.lr.rate(e, opts.epochs);
        let global = opts.first_epoch + e as u64;
        let (mut total, mut batches) = (0.0f64, 0usize);
        for batch in data.epoch(global) {
            let residual = net.forward(&batch.noisy, Mode::Train)?;
            let (loss, grad) = residual_mse_loss(&residual, &batch.noisy, &batch.clean)?;
            net.backward(&grad)?;
            adam_step(net, opt, lr, mask)?;
            total += loss as f64;
            batches += 1;
        }
        let val_psnr = val.map(|v| v.denoised_psnr(net)).transpose()?;
        epochs.push(EpochReport {
            phase,
            epoch: global + 1,
            loss: total / batches as f64,
            val_psnr,
        });
    }
    Ok(PhaseReport {
        phase,
        epochs,
        masked_count: mask.map(Mask::masked_count),
    })
}

/// Trains every parameter freely.
pub fn train_dense(
    net: &mut Network,
    data: &Dataset,
    opts: PhaseOptions,
    opt: &mut OptimizerState,
    val: Option<&ValidationSet>,
) -> Result<PhaseReport> {
    if opts.epochs == 0 {
        return Err(Error::invalid("dense training needs at least one epoch"));
    }
    run_epochs(net, data, opts, opt, None, val, Phase::Dense)
}

/// Trains with the masked kernel positions held at exactly zero. The mask
/// is (re)applied first, so callers may pass a freshly computed one.
pub fn train_sparse(
    net: &mut Network,
    mask: &Mask,
    data: &Dataset,
    opts: PhaseOptions,
    opt: &mut OptimizerState,
    val: Option<&ValidationSet>,
) -> Result<PhaseReport> {
    apply_mask(net, mask, Some(opt))?;
    run_epochs(net, data, opts, opt, Some(mask), val, Phase::Sparse)
}

/// Lifts the mask and retrains everything from fresh optimizer moments.
pub fn train_dense_retrain(
    net: &mut Network,
    data: &Dataset,
    opts: PhaseOptions,
    opt: &mut OptimizerState,
    val: Option<&ValidationSet>,
) -> Result<PhaseReport> {
    opt.reset();
    run_epochs(net, data, opts, opt, None, val, Phase::Retrain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub epochs_dense: usize,
    pub epochs_sparse: usize,
    /// Zero by default: the reduced network gains nothing from retraining.
    pub epochs_retrain: usize,
    pub sparsity: f64,
    pub ranking: RankingScope,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Noise level on the 0-255 scale.
    pub sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::REDUCED,
            epochs_dense: 20,
            epochs_sparse: 20,
            epochs_retrain: 0,
            sparsity: 0.15,
            ranking: RankingScope::Global,
            lr: LrSchedule::default(),
            batch_size: 128,
            seed: 0,
            sigma: 25.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.epochs_dense == 0 {
            return Err(Error::invalid("epochs_dense must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::invalid(format!(
                "sparsity must be in [0, 1), got {}",
                self.sparsity
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::invalid("lr_initial must be positive"));
        }
        if !(self.lr.drop_factor > 0.0 && self.lr.drop_factor <= 1.0) {
            return Err(Error::invalid("lr_drop_factor must be in (0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_dense + self.epochs_sparse + self.epochs_retrain
    }
}

/// Network state at the end of a phase.
#[derive(Debug, Clone)]
pub struct PhaseSnapshot {
    pub phase: Phase,
    pub network: Network,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct DsdOutcome {
    pub network: Network,
    pub mask: Mask,
    pub reports: Vec<PhaseReport>,
    pub snapshots: Vec<PhaseSnapshot>,
}

/// Dense training, global magnitude masking, sparse training, then optional
/// unmasked retraining. The network is initialized from the init stream of
/// `config.seed`; `data` carries its own noise and shuffle seeds.
pub fn run_dsd_pipeline(
    config: &TrainConfig,
    data: &Dataset,
    val: Option<&ValidationSet>,
) -> Result<DsdOutcome> {
    config.validate()?;
    let mut net = Network::new(config.network, derive_seed(config.seed, SeedPurpose::Init))?;
    let mut opt = OptimizerState::new(&net);
    let mut reports = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_epoch = 0u64;
    let mut phase_opts = |epochs: usize| {
        let o = PhaseOptions {
            epochs,
            lr: config.lr,
            first_epoch: next_epoch,
        };
        next_epoch += epochs as u64;
        o
    };

    reports.push(train_dense(
        &mut net,
        data,
        phase_opts(config.epochs_dense),
        &mut opt,
        val,
    )?);
    snapshots.push(PhaseSnapshot {
        phase: Phase::Dense,
        network: net.clone(),
        mask: None,
    });

    let mask = compute_mask(&net, config.sparsity, config.ranking)?;
    if config.epochs_sparse > 0 {
        let report = train_sparse(
            &mut net,
            &mask,
            data,
            phase_opts(config.epochs_sparse),
            &mut opt,
            val,
        )?;
        reports.push(report);
        snapshots.push(PhaseSnapshot {
            phase: Phase::Sparse,
            network: net.clone(),
            mask: Some(mask.clone()),
        });
    }

    if config.epochs_retrain > 0 {
        let report = train_dense_retrain(
            &mut net,
            data,
            phase_opts(config.epochs_retrain),
            &mut opt,
            val,
        )?;
        reports.push(report);
        snapshots.push(PhaseSnapshot {
            phase: Phase::Retrain,
            network: net.clone(),
            mask: None,
        });
    }

    Ok(DsdOutcome {
        network: net,
        mask,
        reports,
        snapshots,
    })
}

/// Comma-separated log: `epoch,phase,loss,val_psnr`.
pub fn reports_csv(reports: &[PhaseReport]) -> String {
    let mut out = String::from("epoch,phase,loss,val_psnr\n");
    for e in reports.iter().flat_map(|r| &r.epochs) {
        let psnr = e.val_psnr.map_or(String::new(), |p| format!("{p:.4}"));
        out.push_str(&format!("{},{},{:.8},{}\n", e.epoch, e.phase, e.loss, psnr));
    }
    out
}

/// Human-readable log with one line per epoch and a line per mask event.
pub fn reports_text(reports: &[PhaseReport]) -> String {
    let mut out = String::new();
    for r in reports {
        if let Some(masked) = r.masked_count {
            out.push_str(&format!("[{}] masked weights: {masked}\n", r.phase));
        }
        for e in &r.epochs {
            out.push_str(&format!(
                "[{}] epoch {:>3}  loss {:.6}",
                e.phase, e.epoch, e.loss
            ));
            if let Some(p) = e.val_psnr {
                out.push_str(&format!("  val PSNR {p:.2} dB"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_drops_at_phase_midpoint() {
        let s = LrSchedule::default();
        let rates: Vec<f32> = (0..4).map(|e| s.rate(e, 4)).collect();
        assert_eq!(rates, vec![1e-3, 1e-3, 1e-3 * 0.1, 1e-3 * 0.1]);
        assert_eq!(s.rate(0, 1), 1e-3);
        assert_eq!(s.rate(2, 5), 1e-3);
        assert_eq!(s.rate(3, 5), 1e-3 * 0.1);
    }

    #[test]
    fn default_config_matches_reduced_network() {
        let c = TrainConfig::default();
        assert_eq!(c.network.depth, 12);
        assert_eq!(c.sparsity, 0.15);
        assert_eq!(c.total_epochs(), 40);
        assert_eq!(
            (c.epochs_dense, c.epochs_sparse, c.epochs_retrain),
            (20, 20, 0)
        );
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                epochs_dense: 0,
                ..Default::default()
            },
            TrainConfig {
                sparsity: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                sigma: -1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
