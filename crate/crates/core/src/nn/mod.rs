//! Multilayer perceptrons trained on a [`Graph`](crate::tensor::Graph).

mod checkpoint;
mod grid;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use grid::{argmax, fill_by_argmax, inference_trick};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{fit, metrics_csv, train_epoch, LossParts, MetricsRow, Objective, Reduction, TrainConfig, METRICS_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Gradients, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("epoch {epoch}, batch {batch}: {term} is not finite ({value})")]
    NonFinite { term: &'static str, epoch: usize, batch: usize, value: f64 },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Output activation applied to the last pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Softmax,
    Sigmoid,
    None,
    /// Softmax over consecutive blocks of this many outputs.
    GroupedSoftmax(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// row-major `fan_in × fan_out`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Fully connected layers with rectifier hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    head: Head,
    layers: Vec<Layer>,
}

/// The parameter leaves of one network on one graph, ordered `w0, b0, w1, b1, ...`.
#[derive(Debug, Clone)]
pub struct Params {
    vars: Vec<Var>,
}

impl Params {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v).into_data()).collect()
    }
}

impl Mlp {
    /// Glorot-uniform weights from `seed`, zero biases.
    pub fn new(dims: &[usize], head: Head, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, head, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect()
        })
    }

    pub fn zeros(dims: &[usize], head: Head) -> Result<Self, NnError> {
        Self::build(dims, head, |fan_in, fan_out| vec![0.0; fan_in * fan_out])
    }

    fn build(dims: &[usize], head: Head, mut init: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Config(format!("layer sizes {dims:?} need at least two positive entries")));
        }
        if let Head::GroupedSoftmax(k) = head {
            if k == 0 || dims[dims.len() - 1] % k != 0 {
                return Err(NnError::Config(format!("output size {} is not a multiple of group {k}", dims[dims.len() - 1])));
            }
        }
        let layers = dims
            .windows(2)
            .map(|d| Layer { fan_in: d[0], fan_out: d[1], w: init(d[0], d[1]), b: vec![0.0; d[1]] })
            .collect();
        Ok(Mlp { dims: dims.to_vec(), head, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Mutable parameter buffers in [`Params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Adds the parameters to `g` as leaves.
    pub fn attach(&self, g: &Graph) -> Params {
        self.attach_with(g, |g, t| g.leaf(t))
    }

    fn attach_with(&self, g: &Graph, node: impl Fn(&Graph, Tensor) -> Var) -> Params {
        let mut vars = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            let w = Tensor::matrix(l.fan_in, l.fan_out, l.w.clone()).expect("layer shape");
            vars.push(node(g, w));
            vars.push(node(g, Tensor::vector(l.b.clone())));
        }
        Params { vars }
    }

    /// Returns `(head(raw), raw)` for a `(batch, input_dim)` input.
    pub fn forward(&self, g: &Graph, params: &Params, x: Var) -> Result<(Var, Var), TensorError> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(TensorError::Shape { op: "mlp_forward", lhs: vec![0, self.input_dim()], rhs: shape });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in params.vars.chunks(2).enumerate() {
            let z = g.add(g.matmul(h, pair[0])?, pair[1])?;
            h = if i == last { z } else { g.relu(z) };
        }
        let raw = h;
        let out = match self.head {
            Head::Softmax => g.softmax(raw)?,
            Head::Sigmoid => g.sigmoid(raw),
            Head::None => raw,
            Head::GroupedSoftmax(k) => {
                let shape = g.shape(raw);
                let blocks = g.reshape(raw, vec![shape[0] * shape[1] / k, k])?;
                g.reshape(g.softmax(blocks)?, shape)?
            }
        };
        Ok((out, raw))
    }

    /// Forward pass without gradients; returns `(head(raw), raw)`.
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let g = Graph::new();
        let params = self.attach_with(&g, |g, t| g.constant(t));
        let x = g.constant(batch.clone());
        let (out, raw) = self.forward(&g, &params, x)?;
        Ok((g.value(out), g.value(raw)))
    }

    /// Argmax class per row of the head output.
    pub fn classify(&self, batch: &Tensor) -> Result<Vec<usize>, TensorError> {
        let (out, _) = self.infer(batch)?;
        let k = out.last_dim();
        Ok((0..out.shape()[0]).map(|r| argmax(&out.data()[r * k..(r + 1) * k])).collect())
    }
}
