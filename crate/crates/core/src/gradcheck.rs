//! Finite-difference verification of every backward pass.
//!
//! Each check contracts an op's output with a random upstream gradient,
//! differentiates that scalar by central differences on an independent
//! `f64` re-implementation of the forward pass, and compares against the
//! analytic gradient. The error of a slot is
//! `max_i |analytic_i - numeric_i| / max_i |numeric_i|`.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::Result;
use crate::network::{Network, NetworkConfig};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, relu_backward, residual_mse_loss,
    BatchNormCache, BatchNormGrads, Conv2dGrads, Mode, RunningStats, BN_EPSILON,
};
use crate::rng::{normal_tensor, seeded, Rng};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;

type ConvBackward = fn(&Tensor, &Tensor, &Tensor) -> Result<Conv2dGrads>;
type BnBackward = fn(&Tensor, Option<&BatchNormCache>) -> Result<BatchNormGrads>;
type ReluBackward = fn(&Tensor, &Tensor) -> Result<Tensor>;
type LossFn = fn(&Tensor, &Tensor, &Tensor) -> Result<(f32, Tensor)>;

/// The analytic gradients under test. Swappable so the harness itself can be
/// tested against a broken implementation.
#[derive(Clone, Copy)]
pub struct Backends {
    pub conv2d: ConvBackward,
    pub batchnorm: BnBackward,
    pub relu: ReluBackward,
    pub loss: LossFn,
}

impl Default for Backends {
    fn default() -> Self {
        Backends {
            conv2d: conv2d_backward,
            batchnorm: batchnorm_backward,
            relu: relu_backward,
            loss: residual_mse_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotResult {
    pub op: &'static str,
    pub slot: &'static str,
    /// Worst error over all seeds.
    pub max_error: f64,
    /// Coordinates whose finite difference straddled a ReLU kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seeds: u64,
    pub results: Vec<SlotResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn failures(&self) -> impl Iterator<Item = &SlotResult> {
        self.results
            .iter()
            .filter(|r| r.max_error.is_nan() || r.max_error >= TOLERANCE)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "gradient check: {} seeds, step {FD_STEP:e}, tolerance {TOLERANCE:e}",
            self.seeds
        );
        for r in &self.results {
            let status = if r.max_error < TOLERANCE {
                "ok"
            } else {
                "FAIL"
            };
            let _ = write!(
                out,
                "{:<10} {:<8} max rel error {:.3e}  {status}",
                r.op, r.slot, r.max_error
            );
            if r.skipped > 0 {
                let _ = write!(out, "  ({} kink-straddling coordinates skipped)", r.skipped);
            }
            out.push('\n');
        }
        out
    }
}

struct Accumulator {
    results: Vec<SlotResult>,
}

impl Accumulator {
    fn record(&mut self, op: &'static str, slot: &'static str, error: f64, skipped: usize) {
        match self
            .results
            .iter_mut()
            .find(|r| r.op == op && r.slot == slot)
        {
            Some(r) => {
                // NaN must stick
                if error.is_nan() || error > r.max_error {
                    r.max_error = error;
                }
                r.skipped += skipped;
            }
            None => self.results.push(SlotResult {
                op,
                slot,
                max_error: error,
                skipped,
            }),
        }
    }
}

fn slot_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((*a as f64 - n).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to each coordinate of `x`.
/// `f` returns `None` when the perturbation crosses a non-differentiable point.
fn numeric_gradient(
    x: &mut [f64],
    mut f: impl FnMut(&[f64]) -> (f64, Option<Vec<bool>>),
) -> (Vec<f64>, Vec<bool>) {
    let (_, base_signs) = f(x);
    let mut grad = vec![0.0; x.len()];
    let mut usable = vec![true; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let (plus, s_plus) = f(x);
        x[i] = orig - FD_STEP;
        let (minus, s_minus) = f(x);
        x[i] = orig;
        if base_signs.is_some() && (s_plus != base_signs || s_minus != base_signs) {
            usable[i] = false;
        }
        grad[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    (grad, usable)
}

fn masked_error(analytic: &[f32], numeric: &[f64], usable: &[bool]) -> (f64, usize) {
    let a: Vec<f32> = analytic
        .iter()
        .zip(usable)
        .filter(|(_, u)| **u)
        .map(|(v, _)| *v)
        .collect();
    let n: Vec<f64> = numeric
        .iter()
        .zip(usable)
        .filter(|(_, u)| **u)
        .map(|(v, _)| *v)
        .collect();
    (slot_error(&a, &n), usable.iter().filter(|u| !**u).count())
}

// ---- f64 reference forwards -------------------------------------------------

fn ref_conv(x: &[f64], xs: [usize; 4], k: &[f64], f: usize, ksz: usize, b: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let p = (ksz / 2) as isize;
    let mut out = vec![0.0; n * f * h * w];
    for bi in 0..n {
        for o in 0..f {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[o];
                    for ci in 0..c {
                        for i in 0..ksz {
                            for j in 0..ksz {
                                let yy = y as isize + i as isize - p;
                                let xc = xx as isize + j as isize - p;
                                if yy >= 0 && xc >= 0 && (yy as usize) < h && (xc as usize) < w {
                                    s += k[((o * c + ci) * ksz + i) * ksz + j]
                                        * x[((bi * c + ci) * h + yy as usize) * w + xc as usize];
                                }
                            }
                        }
                    }
                    out[((bi * f + o) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

fn ref_bn_train(x: &[f64], xs: [usize; 4], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
        let mean = idx().map(|i| x[i]).sum::<f64>() / m;
        let var = idx().map(|i| (x[i] - mean).powi(2)).sum::<f64>() / m;
        let inv = 1.0 / (var + BN_EPSILON as f64).sqrt();
        for i in idx() {
            out[i] = gamma[ch] * (x[i] - mean) * inv + beta[ch];
        }
    }
    out
}

fn ref_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Parameters of a network in `f64`, in `parameters_mut` order.
struct RefNet {
    cfg: NetworkConfig,
    params: Vec<Vec<f64>>,
}

impl RefNet {
    fn from(net: &Network) -> Self {
        let mut params = Vec::new();
        for l in net.layers() {
            params.push(to_f64(&l.kernel));
            params.push(to_f64(&l.bias));
            if let Some(bn) = &l.bn {
                params.push(to_f64(&bn.gamma));
                params.push(to_f64(&bn.beta));
            }
        }
        RefNet {
            cfg: *net.config(),
            params,
        }
    }

    /// Train-mode forward; also returns the sign pattern of every ReLU input.
    fn forward(&self, x: &[f64], xs: [usize; 4]) -> (Vec<f64>, Vec<bool>) {
        let NetworkConfig {
            depth,
            filters,
            kernel_size,
            input_channels,
        } = self.cfg;
        let mut act = x.to_vec();
        let mut shape = xs;
        let mut signs = Vec::new();
        let mut p = 0;
        for layer in 0..depth {
            let out_ch = if layer == depth - 1 {
                input_channels
            } else {
                filters
            };
            act = ref_conv(
                &act,
                shape,
                &self.params[p],
                out_ch,
                kernel_size,
                &self.params[p + 1],
            );
            p += 2;
            shape[1] = out_ch;
            if layer > 0 && layer < depth - 1 {
                act = ref_bn_train(&act, shape, &self.params[p], &self.params[p + 1]);
                p += 2;
            }
            if layer < depth - 1 {
                signs.extend(act.iter().map(|&v| v > 0.0));
                act = ref_relu(&act);
            }
        }
        (act, signs)
    }
}

// ---- individual checks ---------------------------------------------------------

fn check_conv(rng: &mut Rng, b: &Backends, acc: &mut Accumulator) -> Result<()> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(1..=5);
    let w = rng.random_range(1..=5);
    let f = rng.random_range(1..=3);
    let k = if rng.random_bool(0.7) { 3 } else { 1 };
    let xs = [n, c, h, w];
    let input = normal_tensor(&xs, 1.0, rng);
    let kernel = normal_tensor(&[f, c, k, k], 1.0, rng);
    let bias = normal_tensor(&[f], 1.0, rng);
    let upstream = normal_tensor(&[n, f, h, w], 1.0, rng);
    let g = to_f64(&upstream);
    let analytic = (b.conv2d)(&upstream, &input, &kernel)?;

    let (xk, xb) = (to_f64(&kernel), to_f64(&bias));
    let (num, _) = numeric_gradient(&mut to_f64(&input), |x| {
        (dot(&g, &ref_conv(x, xs, &xk, f, k, &xb)), None)
    });
    acc.record(
        "conv2d",
        "input",
        slot_error(analytic.input.data(), &num),
        0,
    );

    let xi = to_f64(&input);
    let (num, _) = numeric_gradient(&mut to_f64(&kernel), |kk| {
        (dot(&g, &ref_conv(&xi, xs, kk, f, k, &xb)), None)
    });
    acc.record(
        "conv2d",
        "kernel",
        slot_error(analytic.kernel.data(), &num),
        0,
    );

    let (num, _) = numeric_gradient(&mut to_f64(&bias), |bb| {
        (dot(&g, &ref_conv(&xi, xs, &xk, f, k, bb)), None)
    });
    acc.record("conv2d", "bias", slot_error(analytic.bias.data(), &num), 0);
    Ok(())
}

fn check_batchnorm(rng: &mut Rng, b: &Backends, acc: &mut Accumulator) -> Result<()> {
    let n = rng.random_range(2..=4);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(1..=3);
    let w = rng.random_range(2..=3);
    let xs = [n, c, h, w];
    let input = normal_tensor(&xs, 2.0, rng).map(|v| v + 0.5);
    let gamma = normal_tensor(&[c], 1.0, rng);
    let beta = normal_tensor(&[c], 1.0, rng);
    let upstream = normal_tensor(&xs, 1.0, rng);
    let g = to_f64(&upstream);
    let mut stats = RunningStats::new(c);
    let (_, cache) = batchnorm_forward(&input, &gamma, &beta, &mut stats, Mode::Train)?;
    let analytic = (b.batchnorm)(&upstream, cache.as_ref())?;

    let (xg, xb, xi) = (to_f64(&gamma), to_f64(&beta), to_f64(&input));
    let (num, _) = numeric_gradient(&mut xi.clone(), |x| {
        (dot(&g, &ref_bn_train(x, xs, &xg, &xb)), None)
    });
    acc.record(
        "batchnorm",
        "input",
        slot_error(analytic.input.data(), &num),
        0,
    );
    let (num, _) = numeric_gradient(&mut xg.clone(), |gg| {
        (dot(&g, &ref_bn_train(&xi, xs, gg, &xb)), None)
    });
    acc.record(
        "batchnorm",
        "gamma",
        slot_error(analytic.gamma.data(), &num),
        0,
    );
    let (num, _) = numeric_gradient(&mut xb.clone(), |bb| {
        (dot(&g, &ref_bn_train(&xi, xs, &xg, bb)), None)
    });
    acc.record(
        "batchnorm",
        "beta",
        slot_error(analytic.beta.data(), &num),
        0,
    );
    Ok(())
}

fn check_relu(rng: &mut Rng, b: &Backends, acc: &mut Accumulator) -> Result<()> {
    let len = rng.random_range(4..=40);
    let mut input = normal_tensor(&[len], 1.0, rng);
    for v in input.data_mut() {
        // keep clear of the kink
        if v.abs() <= 1e-2 {
            *v = if *v < 0.0 { *v - 0.05 } else { *v + 0.05 };
        }
    }
    let upstream = normal_tensor(&[len], 1.0, rng);
    let g = to_f64(&upstream);
    let analytic = (b.relu)(&upstream, &input)?;
    let (num, _) = numeric_gradient(&mut to_f64(&input), |x| (dot(&g, &ref_relu(x)), None));
    acc.record("relu", "input", slot_error(analytic.data(), &num), 0);
    Ok(())
}

fn check_loss(rng: &mut Rng, b: &Backends, acc: &mut Accumulator) -> Result<()> {
    let n = rng.random_range(1..=3);
    let shape = [n, 1, rng.random_range(1..=4), rng.random_range(1..=4)];
    let pred = normal_tensor(&shape, 0.5, rng);
    let noisy = normal_tensor(&shape, 0.5, rng);
    let clean = normal_tensor(&shape, 0.5, rng);
    let (_, analytic) = (b.loss)(&pred, &noisy, &clean)?;
    let target: Vec<f64> = to_f64(&noisy)
        .iter()
        .zip(to_f64(&clean))
        .map(|(y, x)| y - x)
        .collect();
    let (num, _) = numeric_gradient(&mut to_f64(&pred), |p| {
        let sq: f64 = p.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum();
        (sq / (2.0 * n as f64), None)
    });
    acc.record("loss", "predicted", slot_error(analytic.data(), &num), 0);
    Ok(())
}

const NETWORK_SLOTS: [&str; 4] = ["kernel", "bias", "gamma", "beta"];

fn check_network(rng: &mut Rng, acc: &mut Accumulator) -> Result<()> {
    let cfg = NetworkConfig {
        depth: 3,
        filters: 2,
        kernel_size: 3,
        input_channels: 1,
    };
    let mut net = Network::new(cfg, rng.random())?;
    // non-trivial BN and bias parameters
    for layer in net.layers_mut() {
        layer.bias = normal_tensor(layer.bias.shape(), 0.1, rng);
        if let Some(bn) = layer.bn.as_mut() {
            bn.gamma = normal_tensor(bn.gamma.shape(), 1.0, rng).map(|v| v + 1.0);
            bn.beta = normal_tensor(bn.beta.shape(), 0.5, rng);
        }
    }
    let xs = [2, 1, 5, 5];
    let input = normal_tensor(&xs, 1.0, rng);
    let upstream = normal_tensor(&xs, 1.0, rng);
    let g = to_f64(&upstream);
    let mut trained = net.clone();
    trained.forward(&input, Mode::Train)?;
    trained.backward(&upstream)?;

    let reference = RefNet::from(&net);
    let x = to_f64(&input);
    let mut analytic: Vec<(usize, Vec<f32>)> = Vec::new();
    for layer in trained.layers() {
        analytic.push((0, layer.grad_kernel().data().to_vec()));
        analytic.push((1, layer.grad_bias().data().to_vec()));
        if let Some(bn) = &layer.bn {
            analytic.push((2, bn.grad_gamma().data().to_vec()));
            analytic.push((3, bn.grad_beta().data().to_vec()));
        }
    }
    // Slots pool every layer's tensor of one role; a hidden conv bias feeds
    // batch norm and has an exactly zero true gradient on its own.
    let mut pooled: Vec<(Vec<f32>, Vec<f64>, Vec<bool>)> =
        vec![Default::default(); NETWORK_SLOTS.len()];
    for (p, (role, grad)) in analytic.iter().enumerate() {
        let mut params = reference.params[p].clone();
        let (num, usable) = numeric_gradient(&mut params, |v| {
            let mut net = RefNet {
                cfg: reference.cfg,
                params: reference.params.clone(),
            };
            net.params[p] = v.to_vec();
            let (out, signs) = net.forward(&x, xs);
            (dot(&g, &out), Some(signs))
        });
        let slot = &mut pooled[*role];
        slot.0.extend_from_slice(grad);
        slot.1.extend(num);
        slot.2.extend(usable);
    }
    for (name, (a, n, u)) in NETWORK_SLOTS.iter().zip(&pooled) {
        let (err, skipped) = masked_error(a, n, u);
        acc.record("network", name, err, skipped);
    }
    Ok(())
}

/// Runs every check for `seeds` consecutive seeds starting at `seed`.
pub fn run_suite(seed: u64, seeds: u64, backends: &Backends) -> Result<GradCheckReport> {
    let mut acc = Accumulator {
        results: Vec::new(),
    };
    for s in seed..seed + seeds {
        let mut rng = seeded(s);
        check_conv(&mut rng, backends, &mut acc)?;
        check_batchnorm(&mut rng, backends, &mut acc)?;
        check_relu(&mut rng, backends, &mut acc)?;
        check_loss(&mut rng, backends, &mut acc)?;
        check_network(&mut rng, &mut acc)?;
    }
    Ok(GradCheckReport {
        seeds,
        results: acc.results,
    })
}
