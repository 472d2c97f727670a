//! The primary network: a functional LSTM whose weights are supplied from
//! outside, followed by a trainable linear output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::hypernet::xavier_uniform;

/// Weights for each LSTM layer as graph values.
#[derive(Clone, Debug)]
pub enum LstmWeights {
    /// One `[4u × d_in+u]` weight and `[4u]` bias per layer, shared by all rows.
    Shared(Vec<(Var, Var)>),
    /// `[B × 4u × d_in+u]` and `[B × 4u]` per layer: every row has its own.
    PerSample(Vec<(Var, Var)>),
}

impl LstmWeights {
    fn layers(&self) -> &[(Var, Var)] {
        match self {
            LstmWeights::Shared(l) | LstmWeights::PerSample(l) => l,
        }
    }
}

/// Final hidden and cell state of the last layer, each `[B × u]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Runs the stacked LSTM over `x_seq: [B × n × k]`.
///
/// Per step, `z = W·[x_t ; h_{t-1}] + b` is split into the input, forget,
/// cell and output quarters; `c_t = f⊙c_{t-1} + i⊙g`, `h_t = o⊙tanh(c_t)`.
/// Both states start at zero and layer `l > 0` reads layer `l-1`'s hidden
/// sequence.
pub fn lstm_forward(g: &mut Graph, x_seq: Var, weights: &LstmWeights, hidden_units: usize) -> Result<LstmState> {
    let shape = g.shape(x_seq).to_vec();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "LSTM input must be [batch × steps × features], got {shape:?}"
        )));
    }
    let (batch, steps, features) = (shape[0], shape[1], shape[2]);
    let u = hidden_units;
    let layers = weights.layers();
    if layers.is_empty() {
        return Err(Error::invalid("LSTM needs at least one layer"));
    }
    let per_sample = matches!(weights, LstmWeights::PerSample(_));

    let flat = g.reshape(x_seq, &[batch, steps * features])?;
    let mut inputs: Vec<Var> = (0..steps)
        .map(|t| g.slice_columns(flat, t * features, (t + 1) * features))
        .collect::<Result<_>>()?;

    let mut state = None;
    for (l, &(w, b)) in layers.iter().enumerate() {
        let d_in = g.shape(inputs[0])[1];
        let expected_w: Vec<usize> = if per_sample {
            vec![batch, 4 * u, d_in + u]
        } else {
            vec![4 * u, d_in + u]
        };
        let expected_b: Vec<usize> = if per_sample { vec![batch, 4 * u] } else { vec![4 * u] };
        if g.shape(w) != expected_w.as_slice() {
            return Err(Error::shape("lstm weight", g.shape(w), &expected_w));
        }
        if g.shape(b) != expected_b.as_slice() {
            return Err(Error::shape("lstm bias", g.shape(b), &expected_b));
        }

        let mut h = g.constant(Tensor::zeros(&[batch, u]));
        let mut c = g.constant(Tensor::zeros(&[batch, u]));
        let mut outputs = Vec::with_capacity(steps);
        for &x_t in &inputs {
            let xh = g.concat_columns(x_t, h)?;
            let z = if per_sample {
                let wz = g.batched_matvec(w, xh)?;
                g.add(wz, b)?
            } else {
                g.linear(xh, w, Some(b))?
            };
            let zi = g.slice_columns(z, 0, u)?;
            let zf = g.slice_columns(z, u, 2 * u)?;
            let zg = g.slice_columns(z, 2 * u, 3 * u)?;
            let zo = g.slice_columns(z, 3 * u, 4 * u)?;
            let i_gate = g.sigmoid(zi)?;
            let f_gate = g.sigmoid(zf)?;
            let g_cand = g.tanh(zg)?;
            let o_gate = g.sigmoid(zo)?;
            let keep = g.mul(f_gate, c)?;
            let write = g.mul(i_gate, g_cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            h = g.mul(o_gate, tc)?;
            outputs.push(h);
        }
        state = Some(LstmState { h, c });
        if l + 1 < layers.len() {
            inputs = outputs;
        }
    }
    Ok(state.expect("at least one layer"))
}

/// `ŷ = W_out·h + b_out`, with `W_out: [h × u]` and `b_out: [h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl OutputHead {
    pub fn init(store: &mut ParamStore, hidden_units: usize, horizon: usize, seed: u64) -> Result<Self> {
        if hidden_units == 0 || horizon == 0 {
            return Err(Error::invalid("output head widths must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = store.add("head.weight", xavier_uniform(horizon, hidden_units, &mut rng), true);
        let bias = store.add("head.bias", Tensor::zeros(&[horizon]), true);
        Ok(OutputHead { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, state: &LstmState) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let u = store.value(self.weight).shape()[1];
        let hs = g.shape(state.h);
        if hs.len() != 2 || hs[1] != u {
            return Err(Error::shape("output head", hs, store.value(self.weight).shape()));
        }
        g.linear(state.h, w, Some(b))
    }
}
