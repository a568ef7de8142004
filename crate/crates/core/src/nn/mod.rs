//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A [`NetworkParams`] is an ordered chain of affine layers, each followed by
//! an elementwise activation. [`forward`] caches the per-layer inputs and
//! pre-activations; [`backward`] consumes that cache together with the
//! gradient of a scalar loss with respect to the network output.

mod losses;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use losses::{
    loss_classification_weighted, loss_discrepancy_weighted, loss_inter, loss_intra,
    cross_entropy, DiscrepancyLoss, LossBundle, LossGrad, LossWeights, PairLoss,
};
pub use optim::{sgd_momentum_step, Velocity};

/// Checkpoint format written by [`NetworkParams::to_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

const LEAKY_SLOPE: f64 = 0.01;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => 1.0,
        }
    }

    fn relu_family(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }
}

/// One affine layer `y = act(x Wᵀ + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "weight has {} rows, bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    id: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} emits {} values, layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
        })
    }

    /// Multi-layer perceptron over `dims[0] → … → dims[last]`.
    ///
    /// Hidden layers use `hidden`, the last layer uses `output`. Weights are
    /// He-uniform for the relu family and Xavier-uniform otherwise; biases
    /// start at zero.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output } else { hidden };
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if act.relu_family() {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer::new(weight, Array1::zeros(fan_out), act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access; invalidates every cache produced so far.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.id = fresh_id();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            format_version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        let layers = ck
            .layers
            .iter()
            .map(|r| {
                let weight = Array2::from_shape_vec((r.outputs, r.inputs), r.weight.clone())
                    .map_err(|e| Error::Format(e.to_string()))?;
                Layer::new(weight, Array1::from(r.bias.clone()), r.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }
}

/// Portable network checkpoint: shapes, activation tags and row-major
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format_version: u32,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Activations recorded by [`forward`] for one parameter state.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    params_id: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

pub fn forward(params: &NetworkParams, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "network expects {} inputs, got {}",
            params.input_dim(),
            x.ncols()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut h = x.to_owned();
    for layer in &params.layers {
        let z = h.dot(&layer.weight.t()) + &layer.bias;
        let act = layer.activation;
        let out = z.mapv(|v| act.apply(v));
        inputs.push(h);
        pre.push(z);
        h = out;
    }
    Ok((
        h,
        ForwardCache {
            params_id: params.id,
            inputs,
            pre,
        },
    ))
}

/// Forward pass without keeping a cache.
pub fn infer(params: &NetworkParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward(params, x)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams, n: usize) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            input: Array2::zeros((n, params.input_dim())),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weight.iter().chain(g.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Reverse pass. `upstream` is `∂L/∂output` for the cached forward.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    upstream: ArrayView2<f64>,
) -> Result<Gradients> {
    if cache.params_id != params.id || cache.pre.len() != params.layers.len() {
        return Err(Error::StaleCache);
    }
    let last = &cache.pre[cache.pre.len() - 1];
    if upstream.dim() != last.dim() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient is {:?}, output is {:?}",
            upstream.dim(),
            last.dim()
        )));
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut delta = upstream.to_owned();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let act = layer.activation;
        let mut dz = delta;
        dz.zip_mut_with(&cache.pre[l], |d, &z| *d *= act.derivative(z));
        let weight = dz.t().dot(&cache.inputs[l]);
        let bias = dz.sum_axis(Axis(0));
        delta = dz.dot(&layer.weight);
        grads.push(LayerGrad { weight, bias });
    }
    grads.reverse();
    Ok(Gradients {
        layers: grads,
        input: delta,
    })
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(x: ArrayView2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut r in out.rows_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - max).exp());
        let s = r.sum();
        r /= s;
    }
    out
}
