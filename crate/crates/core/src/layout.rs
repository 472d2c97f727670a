//! Parameter integration: where each LSTM weight and bias lives inside the
//! flat parameter vector `Θ`, and differentiable extraction of those pieces.
//!
//! Layers are tiled in order, weights then biases:
//!
//! ```text
//! [ W_0 (4u × (k+u)) | b_0 (4u) | W_1 (4u × 2u) | b_1 (4u) | ... ]
//! ```
//!
//! Rows of every weight matrix and entries of every bias are grouped by
//! gate in the order input, forget, cell, output.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlices {
    pub weight_start: usize,
    pub weight_end: usize,
    pub bias_start: usize,
    pub bias_end: usize,
    /// `[4u, d_in + u]`
    pub weight_shape: [usize; 2],
    /// `4u`
    pub bias_len: usize,
    pub input_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParamLayout {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub input_features: usize,
    pub layers: Vec<LayerSlices>,
    pub total_params: usize,
}

impl LstmParamLayout {
    pub fn build(hidden_units: usize, input_features: usize, num_layers: usize) -> Result<Self> {
        if hidden_units == 0 || input_features == 0 || num_layers == 0 {
            return Err(Error::invalid(
                "hidden units, input features and layer count must be >= 1",
            ));
        }
        let u = hidden_units;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let d_in = if l == 0 { input_features } else { u };
            let weight_shape = [4 * u, d_in + u];
            let weight_start = offset;
            let weight_end = weight_start + weight_shape[0] * weight_shape[1];
            let bias_start = weight_end;
            let bias_end = bias_start + 4 * u;
            offset = bias_end;
            layers.push(LayerSlices {
                weight_start,
                weight_end,
                bias_start,
                bias_end,
                weight_shape,
                bias_len: 4 * u,
                input_dim: d_in,
            });
        }
        Ok(LstmParamLayout {
            num_layers,
            hidden_units,
            input_features,
            layers,
            total_params: offset,
        })
    }

    fn layer(&self, layer: usize) -> Result<&LayerSlices> {
        self.layers.get(layer).ok_or_else(|| {
            Error::OutOfRange(format!(
                "layer {layer} of a {}-layer LSTM",
                self.num_layers
            ))
        })
    }

    /// Weight `[4u × d_in+u]` and bias `[4u]` of one layer, sliced out of a
    /// single parameter vector `theta_row: [P]`.
    pub fn extract_layer_params(&self, g: &mut Graph, theta_row: Var, layer: usize) -> Result<(Var, Var)> {
        let s = *self.layer(layer)?;
        let shape = g.shape(theta_row);
        if shape != [self.total_params] {
            return Err(Error::shape("theta row", shape, &[self.total_params]));
        }
        let w = g.slice_view(theta_row, s.weight_start, s.weight_end, &s.weight_shape)?;
        let b = g.slice_view(theta_row, s.bias_start, s.bias_end, &[s.bias_len])?;
        Ok((w, b))
    }

    /// Per-sample version for `theta: [B × P]`, giving weights
    /// `[B × 4u × d_in+u]` and biases `[B × 4u]`.
    pub fn extract_batched(&self, g: &mut Graph, theta: Var, layer: usize) -> Result<(Var, Var)> {
        let s = *self.layer(layer)?;
        let shape = g.shape(theta);
        if shape.len() != 2 || shape[1] != self.total_params {
            return Err(Error::shape("theta", shape, &[self.total_params]));
        }
        let batch = shape[0];
        let w = g.slice_columns(theta, s.weight_start, s.weight_end)?;
        let w = g.reshape(w, &[batch, s.weight_shape[0], s.weight_shape[1]])?;
        let b = g.slice_columns(theta, s.bias_start, s.bias_end)?;
        Ok((w, b))
    }
}
