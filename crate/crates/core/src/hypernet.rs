//! Fully connected stacks: the hypernetwork that emits the primary
//! network's parameter vector, and the plain MLP baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Swish,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Swish => g.swish(x),
        }
    }
}

/// Bound of the uniform Xavier (Glorot) distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_out × fan_in]` weights drawn from `U(-b, b)`, `b = xavier_bound`.
pub fn xavier_uniform(fan_out: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = xavier_bound(fan_in, fan_out);
    let data = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_parts(vec![fan_out, fan_in], data)
}

/// Affine layers with an activation between them; the last layer is
/// affine only.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseStack {
    pub layers: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl DenseStack {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_sizes: &[usize],
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if hidden_sizes.is_empty() {
            return Err(Error::invalid(format!("{prefix}: at least one hidden layer is required")));
        }
        if input_dim == 0 || output_dim == 0 || hidden_sizes.contains(&0) {
            return Err(Error::invalid(format!("{prefix}: layer widths must be >= 1")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = Vec::with_capacity(hidden_sizes.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden_sizes);
        widths.push(output_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(
                    format!("{prefix}.{i}.weight"),
                    xavier_uniform(w[1], w[0], &mut rng),
                    true,
                );
                let bias = store.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[w[1]]), true);
                (weight, bias)
            })
            .collect();
        Ok(DenseStack {
            layers,
            activation,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Var> {
        let shape = g.shape(input);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape("dense stack input", shape, &[self.input_dim]));
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(store, w), g.param(store, b));
            h = g.linear(h, wv, Some(bv))?;
            if i != last {
                h = self.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }

    pub fn layer_shapes(&self, store: &ParamStore) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .map(|&(w, _)| store.value(w).shape().to_vec())
            .collect()
    }
}

/// Maps kernel features `[B × N_r]` (or flattened windows, without a
/// kernel) to one parameter vector `Θ` per sample, `[B × P]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    pub stack: DenseStack,
}

impl HyperNet {
    pub fn init(
        store: &mut ParamStore,
        hidden_sizes: &[usize],
        input_dim: usize,
        num_params: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let stack = DenseStack::init(store, "hypernet", input_dim, hidden_sizes, num_params, activation, seed)?;
        Ok(HyperNet { stack })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        self.stack.forward(g, store, features)
    }

    pub fn output_dim(&self) -> usize {
        self.stack.output_dim
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.stack.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
