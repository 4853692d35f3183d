//! Parameter containers, layer stacks and optimizers built on [`crate::autodiff`].

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeometry, Var};
use crate::error::{Error, Result};

/// An ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Params {
    tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn new(tensors: Vec<Array2<f64>>) -> Self {
        Params { tensors }
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Differentiable leaves for one forward/backward pass.
    pub fn bind(&self) -> Vec<Var> {
        self.tensors.iter().map(|t| Var::leaf(t.clone())).collect()
    }

    /// Constant views; gradients do not flow into these.
    pub fn freeze(&self) -> Vec<Var> {
        self.tensors.iter().map(|t| Var::constant(t.clone())).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Argument(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: &Var) -> Var {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu { slope } => x.leaky_relu(*slope),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Normalizes each row to zero mean and unit variance across its features.
///
/// This is instance normalization for vector-shaped activations.
pub fn instance_norm(x: &Var) -> Var {
    let n = x.shape().1 as f64;
    let mean = x.sum_rows().scale(1.0 / n);
    let centered = x - &mean;
    let var = centered.square().sum_rows().scale(1.0 / n);
    &centered / &var.add_scalar(1e-5).sqrt()
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

/// Fully connected stack: `input -> hidden... -> output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// Instance-normalize hidden pre-activations.
    #[serde(default)]
    pub normalize: bool,
}

impl MlpSpec {
    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn param_count(&self) -> usize {
        2 * (self.hidden.len() + 1)
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        let dims = self.dims();
        let mut tensors = Vec::new();
        for w in dims.windows(2) {
            tensors.push(uniform_init(rng, (w[0], w[1]), w[0]));
            tensors.push(uniform_init(rng, (1, w[1]), w[0]));
        }
        Params::new(tensors)
    }

    pub fn forward(&self, params: &[Var], x: &Var) -> Var {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let layers = self.hidden.len() + 1;
        let mut h = x.clone();
        for l in 0..layers {
            h = &h.matmul(&params[2 * l]) + &params[2 * l + 1];
            if l + 1 < layers {
                if self.normalize {
                    h = instance_norm(&h);
                }
                h = self.activation.apply(&h);
            }
        }
        h
    }
}

/// Strided convolution stack over NHWC images, global average pooling, then
/// a linear read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Output channels of each convolution.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl ConvSpec {
    /// Six 3x3 convolutions with widths doubling from 32 and every second
    /// layer downsampling.
    pub fn six_layer(height: usize, width: usize, channels: usize, output_dim: usize) -> Self {
        ConvSpec {
            height,
            width,
            channels,
            widths: vec![32, 32, 64, 64, 128, 128],
            strides: vec![1, 2, 1, 2, 1, 2],
            kernel: 3,
            output_dim,
            activation: Activation::LeakyRelu { slope: 0.1 },
        }
    }

    fn geometries(&self) -> Vec<ConvGeometry> {
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        let mut out = Vec::new();
        for (&oc, &s) in self.widths.iter().zip(&self.strides) {
            let g = ConvGeometry {
                height: h,
                width: w,
                channels: c,
                kernel: self.kernel,
                stride: s,
                padding: self.kernel / 2,
            };
            h = g.out_height();
            w = g.out_width();
            c = oc;
            out.push(g);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        2 * self.widths.len() + 2
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        let mut tensors = Vec::new();
        for (g, &oc) in self.geometries().iter().zip(&self.widths) {
            tensors.push(uniform_init(rng, (g.patch_len(), oc), g.patch_len()));
            tensors.push(uniform_init(rng, (1, oc), g.patch_len()));
        }
        let last = *self.widths.last().unwrap_or(&self.channels);
        tensors.push(uniform_init(rng, (last, self.output_dim), last));
        tensors.push(uniform_init(rng, (1, self.output_dim), last));
        Params::new(tensors)
    }

    pub fn forward(&self, params: &[Var], x: &Var) -> Var {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let batch = x.shape().0;
        let mut h = x.clone();
        let geoms = self.geometries();
        let mut spatial = self.height * self.width;
        let mut channels = self.channels;
        for (l, g) in geoms.iter().enumerate() {
            let oc = self.widths[l];
            let cols = h.im2col(*g);
            let y = &cols.matmul(&params[2 * l]) + &params[2 * l + 1];
            let y = self.activation.apply(&y);
            spatial = g.out_height() * g.out_width();
            channels = oc;
            h = y.reshape((batch, spatial * channels));
        }
        // Global average pool: (batch, spatial*channels) -> (batch, channels).
        let pool = Array2::from_shape_fn((spatial * channels, channels), |(i, c)| {
            if i % channels == c {
                1.0 / spatial as f64
            } else {
                0.0
            }
        });
        let pooled = h.matmul(&Var::constant(pool));
        let n = geoms.len();
        &pooled.matmul(&params[2 * n]) + &params[2 * n + 1]
    }
}

/// Network architecture descriptor, serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Mlp(MlpSpec),
    Conv(ConvSpec),
}

impl Architecture {
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        match self {
            Architecture::Mlp(s) => s.init(rng),
            Architecture::Conv(s) => s.init(rng),
        }
    }

    pub fn forward(&self, params: &[Var], x: &Var) -> Var {
        match self {
            Architecture::Mlp(s) => s.forward(params, x),
            Architecture::Conv(s) => s.forward(params, x),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp(s) => s.input_dim,
            Architecture::Conv(s) => s.height * s.width * s.channels,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Mlp(s) => s.output_dim,
            Architecture::Conv(s) => s.output_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum: 0.0 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First-order optimizer with its running state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step using `grads`, matched positionally to `params`.
    pub fn step(&mut self, params: &mut Params, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        if self.first.is_empty() {
            self.first = params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                for ((p, g), m) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.first) {
                    if momentum > 0.0 {
                        m.zip_mut_with(g, |m, &g| *m = momentum * *m + g);
                        p.scaled_add(-lr, m);
                    } else {
                        p.scaled_add(-lr, g);
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

/// Row-wise argmax with ties resolved toward the smallest index.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One-hot encoding of `labels` over `classes` columns.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}
