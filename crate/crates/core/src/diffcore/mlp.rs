use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Nonlinearity applied after the last layer. Hidden layers always use tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    Identity,
    Sigmoid,
}

/// Fully connected layer, weight stored out×in, bias as a `1×out` row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
        Self {
            weight,
            bias: Tensor::zeros((1, fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros((fan_out, fan_in)),
            bias: Tensor::zeros((1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Anything that owns a fixed, ordered list of trainable tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Multi-layer perceptron: tanh after every hidden layer, configurable final
/// nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub final_activation: FinalActivation,
}

impl MlpParams {
    /// `dims` lists the width of every layer boundary, input first.
    pub fn new<R: Rng>(dims: &[usize], final_activation: FinalActivation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            final_activation,
        }
    }

    pub fn zeros(dims: &[usize], final_activation: FinalActivation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            layers,
            final_activation,
        }
    }

    /// Rebuilds an MLP from raw tensors in [`ParamSet::tensors`] order,
    /// checking that layer dimensions chain.
    pub fn from_tensors(tensors: Vec<Tensor>, final_activation: FinalActivation) -> Result<Self> {
        if tensors.is_empty() || tensors.len() % 2 != 0 {
            return Err(Error::Format(format!(
                "an MLP needs weight/bias pairs, got {} tensors",
                tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            if bias.dim() != (1, weight.nrows()) {
                return Err(Error::Format(format!(
                    "bias shape {:?} does not match weight {:?}",
                    bias.dim(),
                    weight.dim()
                )));
            }
            if let Some(prev) = layers.last() {
                let prev: &Dense = prev;
                if prev.out_dim() != weight.ncols() {
                    return Err(Error::Format(format!(
                        "layer widths do not chain: {} then {}",
                        prev.out_dim(),
                        weight.ncols()
                    )));
                }
            }
            layers.push(Dense { weight, bias });
        }
        Ok(Self {
            layers,
            final_activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Dense::out_dim));
        dims
    }

    /// Registers every weight and bias on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (graph.leaf(l.weight.clone()), graph.leaf(l.bias.clone())))
            .collect();
        MlpVars {
            layers,
            final_activation: self.final_activation,
        }
    }

    /// Zeroes the last layer so a fresh network starts from a constant output.
    pub fn zero_last_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// An [`MlpParams`] bound to a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    final_activation: FinalActivation,
}

impl MlpVars {
    pub fn forward(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = graph.matmul_t(x, w)?;
            let z = graph.add_row(z, b)?;
            x = if i < last {
                graph.tanh(z)
            } else {
                match self.final_activation {
                    FinalActivation::Identity => z,
                    FinalActivation::Sigmoid => graph.sigmoid(z),
                }
            };
        }
        Ok(x)
    }

    /// Leaf variables in [`ParamSet::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Parameter gradients in [`ParamSet::tensors`] order; unreached
    /// parameters get zeros.
    pub fn grads(&self, graph: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, graph.value(v).dim()))
            .collect()
    }
}

/// Forward pass of `params` on a `batch×in` input.
pub fn mlp_forward(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    if input.ncols() != params.in_dim() {
        return Err(Error::Contract(format!(
            "MLP expects input width {}, got {}",
            params.in_dim(),
            input.ncols()
        )));
    }
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let x = graph.leaf(input.clone());
    let y = vars.forward(&mut graph, x)?;
    Ok(graph.value(y).clone())
}
