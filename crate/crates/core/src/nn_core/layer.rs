use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{self, Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over consecutive groups of `width` outputs.
    SoftmaxGroups { width: usize },
}

impl Activation {
    fn apply_taped(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::SoftmaxGroups { width } => tape.softmax_groups(x, width),
        }
    }

    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Sigmoid => x.mapv_inplace(tape::sigmoid),
            Activation::SoftmaxGroups { width } => *x = tape::softmax_groups(x, width),
        }
    }
}

/// Fully connected layer: `activation(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer bias",
                expected: format!("{}", weights.nrows()),
                actual: format!("{}", bias.len()),
            });
        }
        if let Activation::SoftmaxGroups { width } = activation {
            if width == 0 || bias.len() % width != 0 {
                return Err(Error::InvalidParameter(format!(
                    "softmax group width {width} does not divide {} outputs",
                    bias.len()
                )));
            }
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform init in ±1/sqrt(fan_in) for weights and bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
        let bias = Array1::from_shape_fn(out_dim, |_| rng.gen_range(-bound..bound));
        DenseLayer {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

/// Shape of one layer, as stored in model files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    context: "Network layer chain",
                    expected: format!("{}", pair[0].out_dim()),
                    actual: format!("{}", pair[1].in_dim()),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Multilayer perceptron over `dims = [in, h1, ..., out]` with
    /// `hidden` between layers and `output` on the last one.
    pub fn mlp<R: Rng>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Network { layers }
    }

    /// Zero-weight network with the given layer shapes.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| {
                DenseLayer::new(
                    Array2::zeros((s.out_dim, s.in_dim)),
                    Array1::zeros(s.out_dim),
                    s.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
            })
            .collect()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        Ok(self.forward_batch(&x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a `batch × in` matrix, without recording.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "Network::forward input",
                expected: format!("{} features", self.in_dim()),
                actual: format!("{} features", input.ncols()),
            });
        }
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut y = x.dot(&layer.weights.t());
            y += &layer.bias.view().insert_axis(Axis(0));
            layer.activation.apply(&mut y);
            x = y;
        }
        Ok(x)
    }

    /// Record this network's parameters on `tape`. Frozen networks are
    /// recorded as constants so no weight gradients are computed for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        let params = self
            .layers
            .iter()
            .map(|l| {
                let w = l.weights.clone();
                let b = l.bias.clone().insert_axis(Axis(0));
                if trainable {
                    (tape.parameter(w), tape.parameter(b))
                } else {
                    (tape.constant(w), tape.constant(b))
                }
            })
            .collect();
        BoundNetwork {
            params,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            in_dim: self.in_dim(),
        }
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "Network::set_flat_params",
                expected: format!("{} values", self.param_count()),
                actual: format!("{} values", flat.len()),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// A network's parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    params: Vec<(Var, Var)>,
    activations: Vec<Activation>,
    in_dim: usize,
}

impl BoundNetwork {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.shape(x).1;
        if cols != self.in_dim {
            return Err(Error::ShapeMismatch {
                context: "BoundNetwork::forward input",
                expected: format!("{} features", self.in_dim),
                actual: format!("{cols} features"),
            });
        }
        let mut h = x;
        for (&(w, b), act) in self.params.iter().zip(&self.activations) {
            let z = tape.matmul_t(h, w);
            let z = tape.add_row(z, b);
            h = act.apply_taped(tape, z);
        }
        Ok(h)
    }

    pub fn parameter_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.params.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Gradients in the same order as [`Network::flat_params`].
    pub fn flat_gradients(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for v in self.parameter_vars() {
            let g = grads.wrt(v).expect("bound network was not trainable");
            out.extend(g.iter());
        }
        out
    }
}
