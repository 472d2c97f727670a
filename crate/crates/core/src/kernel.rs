//! Learnable adaptive kernel: a mixture of a polynomial and an RBF kernel
//! evaluated against trainable reference points.
//!
//! For a flattened window `x` and reference point `r_j`:
//!
//! ```text
//! K_p(x, r_j) = (alpha * <x, r_j> + c)^d
//! K_r(x, r_j) = exp(-gamma * |x - r_j|^2)
//! K_o         = lambda * K_p + (1 - lambda) * K_r,   lambda = sigmoid(lambda_logit)
//! ```
//!
//! `alpha`, `c`, `lambda_logit` and the reference points are parameters in
//! the learnable modes; `d` and `gamma` are fixed hyperparameters.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Both kernels, everything trainable.
    Learnable,
    TraditionalPoly,
    TraditionalRbf,
    TraditionalCombined,
    LearnablePolyOnly,
    LearnableRbfOnly,
}

impl KernelMode {
    pub fn is_traditional(self) -> bool {
        matches!(
            self,
            KernelMode::TraditionalPoly | KernelMode::TraditionalRbf | KernelMode::TraditionalCombined
        )
    }

    pub fn uses_poly(self) -> bool {
        !matches!(self, KernelMode::TraditionalRbf | KernelMode::LearnableRbfOnly)
    }

    pub fn uses_rbf(self) -> bool {
        !matches!(self, KernelMode::TraditionalPoly | KernelMode::LearnablePolyOnly)
    }

    fn mixes(self) -> bool {
        self.uses_poly() && self.uses_rbf()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub num_reference_points: usize,
    pub degree: u32,
    pub gamma: f64,
    /// Starting value of the polynomial scale α; its fixed value in
    /// traditional modes.
    pub alpha: f64,
    pub mode: KernelMode,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            num_reference_points: 64,
            degree: 2,
            gamma: 2.0,
            alpha: 1.0,
            mode: KernelMode::Learnable,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_reference_points == 0 {
            return Err(Error::invalid("at least one reference point is required"));
        }
        if self.degree == 0 {
            return Err(Error::invalid("polynomial degree must be >= 1"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "RBF coefficient gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("polynomial scale alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Draws `count × (features·window)` i.i.d. standard normal values.
pub fn init_reference_points(count: usize, features: usize, window: usize, seed: u64) -> Result<Tensor> {
    if count == 0 || features == 0 || window == 0 {
        return Err(Error::invalid(
            "reference point count, feature count and window length must be >= 1",
        ));
    }
    let dim = features * window;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(&[count, dim], data)
}

/// Picks `count` flattened rows of `inputs` (`[M × ...]`), without
/// replacement when `M >= count`.
pub fn reference_points_from_data(inputs: &Tensor, count: usize, seed: u64) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::invalid("at least one reference point is required"));
    }
    let m = inputs.shape()[0];
    let dim = inputs.numel() / m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = if m >= count {
        sample(&mut rng, m, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..m)).collect()
    };
    let mut data = Vec::with_capacity(count * dim);
    for r in rows {
        data.extend_from_slice(&inputs.data()[r * dim..(r + 1) * dim]);
    }
    Tensor::new(&[count, dim], data)
}

/// Handles to the kernel's tensors inside a model's [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub reference_points: ParamId,
    pub alpha: ParamId,
    pub c: ParamId,
    pub lambda_logit: ParamId,
    pub degree: u32,
    pub gamma: f64,
    pub mode: KernelMode,
    input_dim: usize,
}

impl KernelParams {
    /// Registers the kernel tensors. `reference_points` must be
    /// `[N_r × input_dim]`. Tensors a mode does not learn are stored frozen.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        config: &KernelConfig,
        reference_points: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        if reference_points.rank() != 2 || reference_points.shape()[0] != config.num_reference_points {
            return Err(Error::shape(
                "reference points",
                reference_points.shape(),
                &[config.num_reference_points],
            ));
        }
        let input_dim = reference_points.shape()[1];
        let mode = config.mode;
        let learn = !mode.is_traditional();
        let learn_poly = learn && mode.uses_poly();
        let learn_mix = learn && mode.mixes();
        let reference_points = store.add(format!("{prefix}.reference_points"), reference_points, learn);
        let alpha = store.add(format!("{prefix}.alpha"), Tensor::scalar(config.alpha), learn_poly);
        let c = store.add(format!("{prefix}.c"), Tensor::scalar(1.0), learn_poly);
        let lambda_logit = store.add(format!("{prefix}.lambda_logit"), Tensor::scalar(0.0), learn_mix);
        Ok(KernelParams {
            reference_points,
            alpha,
            c,
            lambda_logit,
            degree: config.degree,
            gamma: config.gamma,
            mode,
            input_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_reference_points(&self, store: &ParamStore) -> usize {
        store.value(self.reference_points).shape()[0]
    }

    pub fn lambda(&self, store: &ParamStore) -> f64 {
        let z = store.value(self.lambda_logit).item();
        1.0 / (1.0 + (-z).exp())
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.reference_points, self.alpha, self.c, self.lambda_logit]
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape("kernel input", shape, &[self.input_dim]));
        }
        Ok(())
    }

    /// `(alpha * x r_jᵀ + c)^d` for every row of `x` and every reference point.
    pub fn poly_kernel(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let r = g.param(store, self.reference_points);
        let alpha = g.param(store, self.alpha);
        let c = g.param(store, self.c);
        let inner = g.linear(x, r, None)?;
        let scaled = g.mul(alpha, inner)?;
        let shifted = g.add(scaled, c)?;
        g.pow_int(shifted, self.degree)
    }

    /// `exp(-gamma * |x - r_j|^2)`; values lie in `(0, 1]`.
    pub fn rbf_kernel(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("RBF coefficient gamma must be positive"));
        }
        let r = g.param(store, self.reference_points);
        let d2 = g.sq_dist(x, r)?;
        let e = g.scale(d2, -self.gamma)?;
        g.exp(e)
    }

    /// Kernel features `[B × N_r]` for flattened windows `x: [B × k·n]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        match (self.mode.uses_poly(), self.mode.uses_rbf()) {
            (true, false) => self.poly_kernel(g, store, x),
            (false, true) => self.rbf_kernel(g, store, x),
            _ => {
                let kp = self.poly_kernel(g, store, x)?;
                let kr = self.rbf_kernel(g, store, x)?;
                let logit = g.param(store, self.lambda_logit);
                let lambda = g.sigmoid(logit)?;
                mix_kernels(g, kp, kr, lambda)
            }
        }
    }
}

/// `lambda * kp + (1 - lambda) * kr` with a one-element `lambda`.
pub fn mix_kernels(g: &mut Graph, kp: Var, kr: Var, lambda: Var) -> Result<Var> {
    let neg = g.scale(lambda, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let a = g.mul(lambda, kp)?;
    let b = g.mul(one_minus, kr)?;
    g.add(a, b)
}
