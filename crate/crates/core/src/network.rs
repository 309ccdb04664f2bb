//! The residual denoising network: `conv+ReLU`, `(conv+BN+ReLU) x (D-2)`, `conv`.
//!
//! The network maps a noisy batch to an estimate of its noise; denoising
//! subtracts that estimate from the input.

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu, relu_backward,
    BatchNormCache, Mode, RunningStats,
};
use crate::rng::{normal_tensor, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of convolution layers, including first and last.
    pub depth: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub input_channels: usize,
}

impl NetworkConfig {
    /// The reduced 12-layer network.
    pub const REDUCED: NetworkConfig = NetworkConfig {
        depth: 12,
        filters: 64,
        kernel_size: 3,
        input_channels: 1,
    };

    /// The original 17-layer network.
    pub const FULL: NetworkConfig = NetworkConfig {
        depth: 17,
        ..NetworkConfig::REDUCED
    };

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::invalid(format!(
                "depth must be at least 3, got {}",
                self.depth
            )));
        }
        if self.filters == 0 {
            return Err(Error::invalid("filters must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid("input channels must be at least 1"));
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::REDUCED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvRelu,
    ConvBnRelu,
    Conv,
}

#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
    pub(crate) grad_gamma: Tensor,
    pub(crate) grad_beta: Tensor,
}

impl BatchNormParams {
    fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            stats: RunningStats::new(channels),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn grad_gamma(&self) -> &Tensor {
        &self.grad_gamma
    }

    pub fn grad_beta(&self) -> &Tensor {
        &self.grad_beta
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    bn: Option<BatchNormCache>,
    pre_activation: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNormParams>,
    relu: bool,
    pub(crate) grad_kernel: Tensor,
    pub(crate) grad_bias: Tensor,
    cache: Option<LayerCache>,
}

impl Layer {
    fn new(kernel: Tensor, bias: Tensor, bn: bool, relu: bool) -> Self {
        let filters = bias.len();
        Layer {
            grad_kernel: Tensor::zeros(kernel.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            kernel,
            bias,
            bn: bn.then(|| BatchNormParams::new(filters)),
            relu,
            cache: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match (self.bn.is_some(), self.relu) {
            (false, true) => LayerKind::ConvRelu,
            (true, true) => LayerKind::ConvBnRelu,
            (false, false) => LayerKind::Conv,
            (true, false) => unreachable!("batch norm is only used ahead of a ReLU"),
        }
    }

    pub fn grad_kernel(&self) -> &Tensor {
        &self.grad_kernel
    }

    pub fn grad_bias(&self) -> &Tensor {
        &self.grad_bias
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len()
            + self.bias.len()
            + self
                .bn
                .as_ref()
                .map_or(0, |bn| bn.gamma.len() + bn.beta.len())
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = conv2d_forward(input, &self.kernel, &self.bias)?;
        let mut bn_cache = None;
        if let Some(bn) = self.bn.as_mut() {
            let (y, cache) = batchnorm_forward(&x, &bn.gamma, &bn.beta, &mut bn.stats, mode)?;
            x = y;
            bn_cache = cache;
        }
        let mut pre_activation = None;
        if self.relu {
            let y = relu(&x);
            pre_activation = Some(x);
            x = y;
        }
        if mode == Mode::Train {
            self.cache = Some(LayerCache {
                input: input.clone(),
                bn: bn_cache,
                pre_activation,
            });
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("backward called without a train-mode forward"))?;
        let mut grad = match &cache.pre_activation {
            Some(pre) => relu_backward(grad_out, pre)?,
            None => grad_out.clone(),
        };
        if let Some(bn) = self.bn.as_mut() {
            let g = batchnorm_backward(&grad, cache.bn.as_ref())?;
            bn.grad_gamma = g.gamma;
            bn.grad_beta = g.beta;
            grad = g.input;
        }
        let g = conv2d_backward(&grad, &cache.input, &self.kernel)?;
        self.grad_kernel = g.kernel;
        self.grad_bias = g.bias;
        Ok(g.input)
    }
}

/// Which tensor of a layer a parameter slot refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    Gamma,
    Beta,
}

/// A trainable tensor paired with its current gradient.
pub struct ParamSlot<'a> {
    pub layer: usize,
    pub role: ParamRole,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a freshly initialized network. Kernels are drawn from
    /// `N(0, 2 / (k^2 * fan_in))`; biases start at zero, BN at identity.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let NetworkConfig {
            depth,
            filters: f,
            kernel_size: k,
            input_channels: c,
        } = config;
        let mut layers = Vec::with_capacity(depth);
        for idx in 0..depth {
            let (fan_in, fan_out) = match idx {
                0 => (c, f),
                i if i == depth - 1 => (f, c),
                _ => (f, f),
            };
            let std = (2.0 / (k * k * fan_in) as f32).sqrt();
            let kernel = normal_tensor(&[fan_out, fan_in, k, k], std, &mut rng);
            let hidden = idx > 0 && idx < depth - 1;
            let last = idx == depth - 1;
            layers.push(Layer::new(kernel, Tensor::zeros(&[fan_out]), hidden, !last));
        }
        Ok(Network { config, layers })
    }

    /// Reassembles a network from stored layers, checking every shape.
    pub fn from_layers(config: NetworkConfig, layers: Vec<Layer>) -> Result<Self> {
        let template = Network::new(config, 0)?;
        if layers.len() != template.layers.len() {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                template.layers.len(),
                layers.len()
            )));
        }
        for (i, (l, t)) in layers.iter().zip(&template.layers).enumerate() {
            let bn_ok = match (&l.bn, &t.bn) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.gamma.shape() == b.gamma.shape()
                        && a.beta.shape() == b.beta.shape()
                        && a.stats.mean.shape() == b.stats.mean.shape()
                        && a.stats.var.shape() == b.stats.var.shape()
                }
                _ => false,
            };
            if l.kernel.shape() != t.kernel.shape()
                || l.bias.shape() != t.bias.shape()
                || l.relu != t.relu
                || !bn_ok
            {
                return Err(Error::invalid(format!(
                    "layer {i} does not match the configuration"
                )));
            }
        }
        Ok(Network { config, layers })
    }

    /// Builds a layer from raw tensors, for deserialization.
    pub fn layer_from_parts(
        kernel: Tensor,
        bias: Tensor,
        bn: Option<(Tensor, Tensor, RunningStats)>,
        relu: bool,
    ) -> Layer {
        let has_bn = bn.is_some();
        let mut layer = Layer::new(kernel, bias, has_bn, relu);
        if let Some((gamma, beta, stats)) = bn {
            let p = layer.bn.as_mut().expect("constructed with batch norm");
            p.grad_gamma = Tensor::zeros(gamma.shape());
            p.grad_beta = Tensor::zeros(beta.shape());
            p.gamma = gamma;
            p.beta = beta;
            p.stats = stats;
        }
        layer
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Total number of convolution kernel weights.
    pub fn kernel_weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len()).sum()
    }

    /// Residual (noise) estimate for `noisy`. Train mode uses batch statistics
    /// and keeps the activations needed by [`Network::backward`].
    pub fn forward(&mut self, noisy: &Tensor, mode: Mode) -> Result<Tensor> {
        let [_, c, _, _] = noisy.dims4("network input")?;
        if c != self.config.input_channels {
            return Err(Error::invalid(format!(
                "network expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let mut x = noisy.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Inference-mode forward pass that leaves the network untouched.
    pub fn infer(&self, noisy: &Tensor) -> Result<Tensor> {
        let [_, c, _, _] = noisy.dims4("network input")?;
        if c != self.config.input_channels {
            return Err(Error::invalid(format!(
                "network expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let mut x = noisy.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Clean estimate `noisy - residual`, clamped to `[0, 1]`.
    pub fn denoise(&self, noisy: &Tensor) -> Result<Tensor> {
        let residual = self.infer(noisy)?;
        Ok(noisy.sub(&residual)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Backpropagates `grad_residual` through the cached train-mode forward,
    /// overwriting every parameter gradient.
    pub fn backward(&mut self, grad_residual: &Tensor) -> Result<()> {
        if self.layers.iter().any(|l| l.cache.is_none()) {
            return Err(Error::state("backward called without a train-mode forward"));
        }
        let mut grad = grad_residual.clone();
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.cache = None;
        }
    }

    /// Trainable tensors in fixed order: per layer kernel, bias, then gamma and
    /// beta where present.
    pub fn parameters_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut slots = Vec::new();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            slots.push(ParamSlot {
                layer: idx,
                role: ParamRole::Kernel,
                value: &mut layer.kernel,
                grad: &layer.grad_kernel,
            });
            slots.push(ParamSlot {
                layer: idx,
                role: ParamRole::Bias,
                value: &mut layer.bias,
                grad: &layer.grad_bias,
            });
            if let Some(bn) = layer.bn.as_mut() {
                slots.push(ParamSlot {
                    layer: idx,
                    role: ParamRole::Gamma,
                    value: &mut bn.gamma,
                    grad: &bn.grad_gamma,
                });
                slots.push(ParamSlot {
                    layer: idx,
                    role: ParamRole::Beta,
                    value: &mut bn.beta,
                    grad: &bn.grad_beta,
                });
            }
        }
        slots
    }

    /// Parameter shapes in [`Network::parameters_mut`] order.
    pub fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for layer in &self.layers {
            shapes.push(layer.kernel.shape().to_vec());
            shapes.push(layer.bias.shape().to_vec());
            if let Some(bn) = &layer.bn {
                shapes.push(bn.gamma.shape().to_vec());
                shapes.push(bn.beta.shape().to_vec());
            }
        }
        shapes
    }
}

impl Layer {
    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = conv2d_forward(input, &self.kernel, &self.bias)?;
        if let Some(bn) = &self.bn {
            let mut stats = bn.stats.clone();
            x = batchnorm_forward(&x, &bn.gamma, &bn.beta, &mut stats, Mode::Infer)?.0;
        }
        if self.relu {
            x = relu(&x);
        }
        Ok(x)
    }

    pub fn has_relu(&self) -> bool {
        self.relu
    }
}
