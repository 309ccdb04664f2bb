//! Magnitude masks over convolution kernels.

use std::cmp::Ordering;

use crate::dsd::adam::OptimizerState;
use crate::error::{Error, Result};
use crate::network::{Network, ParamRole};

/// Whether weights are ranked against the whole network or within each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankingScope {
    #[default]
    Global,
    PerLayer,
}

/// One activity map per convolution kernel; `true` means trainable,
/// `false` means held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    layers: Vec<Vec<bool>>,
    sparsity: f64,
}

impl Mask {
    pub fn all_active(net: &Network) -> Self {
        Mask {
            layers: net
                .layers()
                .iter()
                .map(|l| vec![true; l.kernel.len()])
                .collect(),
            sparsity: 0.0,
        }
    }

    /// Wraps explicit activity maps. `sparsity` is recomputed from the maps.
    pub fn from_layers(layers: Vec<Vec<bool>>) -> Self {
        let total: usize = layers.iter().map(Vec::len).sum();
        let masked = layers.iter().flatten().filter(|a| !**a).count();
        let sparsity = if total == 0 {
            0.0
        } else {
            masked as f64 / total as f64
        };
        Mask { layers, sparsity }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    /// Fraction of kernel weights that are masked.
    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn masked_count(&self) -> usize {
        self.layers.iter().flatten().filter(|a| !**a).count()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_active(&self, layer: usize, offset: usize) -> bool {
        self.layers[layer][offset]
    }

    pub fn check_compatible(&self, net: &Network) -> Result<()> {
        if self.layers.len() != net.layers().len() {
            return Err(Error::invalid(format!(
                "mask has {} layers, network has {}",
                self.layers.len(),
                net.layers().len()
            )));
        }
        for (i, (m, l)) in self.layers.iter().zip(net.layers()).enumerate() {
            if m.len() != l.kernel.len() {
                return Err(Error::invalid(format!(
                    "mask layer {i} covers {} weights, kernel has {}",
                    m.len(),
                    l.kernel.len()
                )));
            }
        }
        Ok(())
    }
}

fn masked_target(count: usize, sparsity: f64) -> usize {
    (sparsity * count as f64).floor() as usize
}

/// Ranks kernel weights by magnitude and masks the `floor(p * W)` smallest.
/// Ties go to the lower (layer, offset) first. The network is not modified.
pub fn compute_mask(net: &Network, sparsity: f64, scope: RankingScope) -> Result<Mask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!(
            "sparsity must be in [0, 1), got {sparsity}"
        )));
    }
    let mut layers: Vec<Vec<bool>> = net
        .layers()
        .iter()
        .map(|l| vec![true; l.kernel.len()])
        .collect();

    let by_magnitude = |a: &(f32, usize, usize), b: &(f32, usize, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };

    match scope {
        RankingScope::Global => {
            let mut ranked: Vec<(f32, usize, usize)> = net
                .layers()
                .iter()
                .enumerate()
                .flat_map(|(li, l)| {
                    l.kernel
                        .data()
                        .iter()
                        .enumerate()
                        .map(move |(off, w)| (w.abs(), li, off))
                })
                .collect();
            let target = masked_target(ranked.len(), sparsity);
            if target > 0 {
                ranked.select_nth_unstable_by(target - 1, by_magnitude);
                for &(_, li, off) in &ranked[..target] {
                    layers[li][off] = false;
                }
            }
        }
        RankingScope::PerLayer => {
            for (li, l) in net.layers().iter().enumerate() {
                let mut ranked: Vec<(f32, usize, usize)> = l
                    .kernel
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(off, w)| (w.abs(), li, off))
                    .collect();
                let target = masked_target(ranked.len(), sparsity);
                if target > 0 {
                    ranked.select_nth_unstable_by(target - 1, by_magnitude);
                    for &(_, _, off) in &ranked[..target] {
                        layers[li][off] = false;
                    }
                }
            }
        }
    }
    Ok(Mask::from_layers(layers))
}

/// Zeroes masked kernel weights and, if given, the optimizer moments at the
/// same positions.
pub fn apply_mask(net: &mut Network, mask: &Mask, opt: Option<&mut OptimizerState>) -> Result<()> {
    mask.check_compatible(net)?;
    for (layer, active) in net.layers_mut().iter_mut().zip(mask.layers()) {
        for (w, &a) in layer.kernel.data_mut().iter_mut().zip(active) {
            if !a {
                *w = 0.0;
            }
        }
    }
    if let Some(opt) = opt {
        opt.check_compatible(net)?;
        for (idx, slot) in net.parameters_mut().iter().enumerate() {
            if slot.role == ParamRole::Kernel {
                opt.zero_masked(idx, &mask.layers()[slot.layer]);
            }
        }
    }
    Ok(())
}
