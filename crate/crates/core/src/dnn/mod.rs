//! Fully connected network mapping channel features to hybrid precoders.
//!
//! The default stack is an encoder (128, 400, 256 units), a 200-unit noise
//! layer, a decoder (128, 64 units) and an output layer whose activation
//! clamps every unit to `[0, ns]`. Hidden layers use ReLU. Training is plain
//! reverse-mode differentiation with momentum SGD; see [`train`].

mod codec;
mod dataset;
mod train;

pub use codec::{channel_features, OutputCodec};
pub use dataset::{build_dataset, Dataset, EnsembleConfig, Sample, Split};
pub use train::{evaluate_loss, infer_precoders, sample_loss_and_gradient, train, TrainOutcome};

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{invalid, mismatch};
use crate::Result;

/// Hidden widths of the default architecture.
pub const HIDDEN_WIDTHS: [usize; 6] = [128, 400, 256, 200, 128, 64];
/// Position of the noise layer within [`HIDDEN_WIDTHS`].
pub const NOISE_LAYER: usize = 3;
/// Default standard deviation of the noise layer.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `min(max(x, 0), upper)`.
    Clamp {
        upper: f64,
    },
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Clamp { upper } => x.max(0.0).min(upper),
            Activation::Linear => x,
        }
    }

    /// Derivative; 0 at the kinks.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Clamp { upper } => {
                if x > 0.0 && x < upper {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    /// Std of the additive Gaussian applied after the activation in training.
    pub noise_sigma: f64,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            noise_sigma: 0.0,
        }
    }
}

/// The default seven-layer stack for the given input/output sizes.
pub fn default_architecture(output_dim: usize, ns: usize, noise_sigma: f64) -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = HIDDEN_WIDTHS
        .iter()
        .map(|&w| LayerSpec::new(w, Activation::Relu))
        .collect();
    specs[NOISE_LAYER].noise_sigma = noise_sigma;
    specs.push(LayerSpec::new(
        output_dim,
        Activation::Clamp { upper: ns as f64 },
    ));
    specs
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| Activation::Relu.apply(v)).collect()
}

pub fn clamp_activation(x: &[f64], ns: usize) -> Vec<f64> {
    let act = Activation::Clamp { upper: ns as f64 };
    x.iter().map(|&v| act.apply(v)).collect()
}

/// Forward-pass mode. Noise layers draw from the generator only in training.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Infer,
}

/// Adds i.i.d. N(0, sigma^2) to `x` in training mode.
pub fn noise_inject(x: &mut [f64], sigma: f64, mode: &mut Mode<'_>) {
    if let Mode::Train(rng) = mode {
        if sigma > 0.0 {
            for v in x.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n;
            }
        }
    }
}

/// One affine layer; `weights` is `width x fan_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    pub fan_in: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    vel_weights: Vec<f64>,
    vel_biases: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, spec: LayerSpec) -> Self {
        Self {
            spec,
            fan_in,
            weights: vec![0.0; fan_in * spec.width],
            biases: vec![0.0; spec.width],
            vel_weights: vec![0.0; fan_in * spec.width],
            vel_biases: vec![0.0; spec.width],
        }
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.fan_in)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `outputs[0]` is the input; `outputs[l + 1]` is layer `l`'s output.
    pub outputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("input is always cached")
    }
}

/// Parameter gradients, same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        let lhs = self.weights.iter_mut().chain(self.biases.iter_mut());
        let rhs = other.weights.iter().chain(other.biases.iter());
        for (a, b) in lhs.zip(rhs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// `v <- alpha v - epsilon g; p <- p + v`, elementwise.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocities: &mut [f64],
    alpha: f64,
    epsilon: f64,
) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocities.iter_mut()) {
        *v = alpha * *v - epsilon * g;
        *p += *v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights and zero velocities. Clamped output units start
    /// with their bias at the centre of the box.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(input_dim, specs)?;
        for layer in &mut net.layers {
            let limit = libm::sqrt(6.0 / (layer.fan_in + layer.spec.width) as f64);
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..=limit);
            }
            if let Activation::Clamp { upper } = layer.spec.activation {
                layer.biases.iter_mut().for_each(|b| *b = upper / 2.0);
            }
        }
        Ok(net)
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, specs: &[LayerSpec]) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid!("input dimension must be positive"));
        }
        if specs.is_empty() {
            return Err(invalid!("network needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            if spec.width == 0 {
                return Err(invalid!("layer width must be positive"));
            }
            if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
                return Err(invalid!(
                    "noise sigma must be non-negative, got {}",
                    spec.noise_sigma
                ));
            }
            layers.push(Dense::zeros(fan_in, *spec));
            fan_in = spec.width;
        }
        Ok(Self { input_dim, layers })
    }

    /// Rebuilds a network from stored parameters (velocities reset to zero).
    pub fn from_parameters(
        input_dim: usize,
        specs: &[LayerSpec],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut net = Self::zeros(input_dim, specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(mismatch!("parameter arrays for {} layers", weights.len()));
        }
        for ((layer, w), b) in net.layers.iter_mut().zip(weights).zip(biases) {
            if w.len() != layer.weights.len() || b.len() != layer.biases.len() {
                return Err(mismatch!(
                    "layer {}x{} got {} weights, {} biases",
                    layer.spec.width,
                    layer.fan_in,
                    w.len(),
                    b.len()
                ));
            }
            layer.weights = w;
            layer.biases = b;
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.width)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Layer count including the input layer.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, v: &[f64], mut mode: Mode<'_>) -> Result<ForwardPass> {
        if v.len() != self.input_dim {
            return Err(mismatch!(
                "input has {} features, network expects {}",
                v.len(),
                self.input_dim
            ));
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        outputs.push(v.to_vec());
        for layer in &self.layers {
            let z = layer.affine(outputs.last().expect("non-empty"));
            let mut a: Vec<f64> = z.iter().map(|&x| layer.spec.activation.apply(x)).collect();
            noise_inject(&mut a, layer.spec.noise_sigma, &mut mode);
            pre.push(z);
            outputs.push(a);
        }
        Ok(ForwardPass { outputs, pre })
    }

    /// Deterministic inference.
    pub fn infer(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut pass = self.forward(v, Mode::Infer)?;
        Ok(pass.outputs.pop().expect("non-empty"))
    }

    /// Reverse-mode gradients of a scalar loss given `dLoss/dOutput`.
    pub fn backward(&self, pass: &ForwardPass, grad_output: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(pass, grad_output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but accumulates into `acc`.
    pub fn backward_into(
        &self,
        pass: &ForwardPass,
        grad_output: &[f64],
        acc: &mut Gradients,
    ) -> Result<()> {
        if grad_output.len() != self.output_dim() || pass.pre.len() != self.layers.len() {
            return Err(mismatch!(
                "output gradient has {} entries, network output is {}",
                grad_output.len(),
                self.output_dim()
            ));
        }
        let mut grad_a = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &pass.pre[l];
            let input = &pass.outputs[l];
            let delta: Vec<f64> = grad_a
                .iter()
                .zip(z)
                .map(|(g, &x)| g * layer.spec.activation.derivative(x))
                .collect();
            let gw = &mut acc.weights[l];
            let gb = &mut acc.biases[l];
            let mut next = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.fan_in;
                let w = &layer.weights[row..row + layer.fan_in];
                for (i, (&x, &wv)) in input.iter().zip(w).enumerate() {
                    gw[row + i] += d * x;
                    next[i] += wv * d;
                }
            }
            grad_a = next;
        }
        Ok(())
    }

    /// Momentum SGD on every parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, alpha: f64, epsilon: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            sgd_momentum_step(
                &mut layer.weights,
                &grads.weights[l],
                &mut layer.vel_weights,
                alpha,
                epsilon,
            );
            sgd_momentum_step(
                &mut layer.biases,
                &grads.biases[l],
                &mut layer.vel_biases,
                alpha,
                epsilon,
            );
        }
    }

    pub fn velocities_are_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.vel_weights.iter().chain(&l.vel_biases).all(|&v| v == 0.0))
    }
}
