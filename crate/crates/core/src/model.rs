//! Model variants: the full HyperEnergy pipeline, its ablations, and the
//! plain LSTM and MLP baselines.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Reduce, Tensor, Var};
use crate::error::{Error, Result};
use crate::hypernet::{xavier_uniform, Activation, DenseStack, HyperNet};
use crate::kernel::{init_reference_points, reference_points_from_data, KernelConfig, KernelMode, KernelParams};
use crate::layout::LstmParamLayout;
use crate::primary::{lstm_forward, LstmWeights, OutputHead};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    HyperenergyFull,
    HyperenergyNoKernel,
    HyperenergyTraditionalRbf,
    HyperenergyLearnableRbf,
    HyperenergyTraditionalPoly,
    HyperenergyLearnablePoly,
    HyperenergyTraditionalCombined,
    PlainLstm,
    MlpBaseline,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::HyperenergyFull,
        Variant::HyperenergyNoKernel,
        Variant::HyperenergyTraditionalRbf,
        Variant::HyperenergyLearnableRbf,
        Variant::HyperenergyTraditionalPoly,
        Variant::HyperenergyLearnablePoly,
        Variant::HyperenergyTraditionalCombined,
        Variant::PlainLstm,
        Variant::MlpBaseline,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::HyperenergyFull => "hyperenergy_full",
            Variant::HyperenergyNoKernel => "hyperenergy_no_kernel",
            Variant::HyperenergyTraditionalRbf => "hyperenergy_traditional_rbf",
            Variant::HyperenergyLearnableRbf => "hyperenergy_learnable_rbf",
            Variant::HyperenergyTraditionalPoly => "hyperenergy_traditional_poly",
            Variant::HyperenergyLearnablePoly => "hyperenergy_learnable_poly",
            Variant::HyperenergyTraditionalCombined => "hyperenergy_traditional_combined",
            Variant::PlainLstm => "plain_lstm",
            Variant::MlpBaseline => "mlp_baseline",
        }
    }

    /// Kernel mode of the hypernetwork variants that have a kernel.
    pub fn kernel_mode(self) -> Option<KernelMode> {
        match self {
            Variant::HyperenergyFull => Some(KernelMode::Learnable),
            Variant::HyperenergyTraditionalRbf => Some(KernelMode::TraditionalRbf),
            Variant::HyperenergyLearnableRbf => Some(KernelMode::LearnableRbfOnly),
            Variant::HyperenergyTraditionalPoly => Some(KernelMode::TraditionalPoly),
            Variant::HyperenergyLearnablePoly => Some(KernelMode::LearnablePolyOnly),
            Variant::HyperenergyTraditionalCombined => Some(KernelMode::TraditionalCombined),
            Variant::HyperenergyNoKernel | Variant::PlainLstm | Variant::MlpBaseline => None,
        }
    }

    pub fn uses_hypernet(self) -> bool {
        !matches!(self, Variant::PlainLstm | Variant::MlpBaseline)
    }

    /// True when the variant's kernel is built from training windows.
    pub fn needs_training_inputs(self) -> bool {
        self.kernel_mode().is_some_and(KernelMode::is_traditional)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// How hypernetwork outputs become LSTM parameters for a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// Every window gets its own Θ.
    #[default]
    PerSample,
    /// One Θ per batch: the mean of the per-window rows.
    BatchMean,
}

/// Architecture hyperparameters of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Window length `n`.
    pub window: usize,
    /// Forecast horizon `h`.
    pub horizon: usize,
    /// Features per time step `k`.
    pub features: usize,
    pub hidden_units: usize,
    pub lstm_layers: usize,
    pub hypernet_hidden: Vec<usize>,
    pub activation: Activation,
    pub num_reference_points: usize,
    pub degree: u32,
    pub gamma: f64,
    /// Starting polynomial scale α; `1/(k·n)` when unset.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub theta_mode: ThetaMode,
    /// Hidden width of the MLP baseline.
    pub mlp_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let kernel = KernelConfig::default();
        ModelSpec {
            variant: Variant::HyperenergyFull,
            window: 24,
            horizon: 24,
            features: 5,
            hidden_units: 64,
            lstm_layers: 2,
            hypernet_hidden: vec![64, 64],
            activation: Activation::Swish,
            num_reference_points: kernel.num_reference_points,
            degree: kernel.degree,
            gamma: kernel.gamma,
            alpha: None,
            theta_mode: ThetaMode::PerSample,
            mlp_hidden: 64,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("features", self.features),
            ("hidden_units", self.hidden_units),
            ("lstm_layers", self.lstm_layers),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if self.hypernet_hidden.is_empty() || self.hypernet_hidden.contains(&0) {
            return Err(Error::Config(
                "model.hypernet_hidden must list at least one positive width".into(),
            ));
        }
        if let Some(cfg) = self.kernel_config() {
            cfg.validate().map_err(|e| Error::Config(format!("model kernel: {e}")))?;
        }
        Ok(())
    }

    pub fn kernel_config(&self) -> Option<KernelConfig> {
        self.variant.kernel_mode().map(|mode| KernelConfig {
            num_reference_points: self.num_reference_points,
            degree: self.degree,
            gamma: self.gamma,
            alpha: self.alpha.unwrap_or(1.0 / self.flat_dim() as f64),
            mode,
        })
    }

    /// Length of a flattened window, `k·n`.
    pub fn flat_dim(&self) -> usize {
        self.features * self.window
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    HyperEnergy {
        kernel: Option<KernelParams>,
        hypernet: HyperNet,
        layout: LstmParamLayout,
        head: OutputHead,
        theta_mode: ThetaMode,
    },
    PlainLstm {
        layers: Vec<(ParamId, ParamId)>,
        head: OutputHead,
    },
    Mlp {
        stack: DenseStack,
    },
}

impl Architecture {
    /// Predictions `[B × h]` for windows `x: [B × n × k]`.
    pub fn forward(&self, spec: &ModelSpec, store: &ParamStore, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let expected = [shape.first().copied().unwrap_or(0), spec.window, spec.features];
        if shape.len() != 3 || shape[1..] != expected[1..] || shape[0] == 0 {
            return Err(Error::shape("model input", &shape, &expected));
        }
        let batch = shape[0];
        match self {
            Architecture::HyperEnergy {
                kernel,
                hypernet,
                layout,
                head,
                theta_mode,
            } => {
                let flat = g.reshape(x, &[batch, spec.flat_dim()])?;
                let features = match kernel {
                    Some(k) => k.forward(g, store, flat)?,
                    None => flat,
                };
                let theta = hypernet.forward(g, store, features)?;
                let weights = match theta_mode {
                    ThetaMode::PerSample => LstmWeights::PerSample(
                        (0..layout.num_layers)
                            .map(|l| layout.extract_batched(g, theta, l))
                            .collect::<Result<_>>()?,
                    ),
                    ThetaMode::BatchMean => {
                        let row = g.reduce(Reduce::Mean, theta, Some(0))?;
                        LstmWeights::Shared(
                            (0..layout.num_layers)
                                .map(|l| layout.extract_layer_params(g, row, l))
                                .collect::<Result<_>>()?,
                        )
                    }
                };
                let state = lstm_forward(g, x, &weights, spec.hidden_units)?;
                head.forward(g, store, &state)
            }
            Architecture::PlainLstm { layers, head } => {
                let weights = LstmWeights::Shared(
                    layers
                        .iter()
                        .map(|&(w, b)| (g.param(store, w), g.param(store, b)))
                        .collect(),
                );
                let state = lstm_forward(g, x, &weights, spec.hidden_units)?;
                head.forward(g, store, &state)
            }
            Architecture::Mlp { stack } => {
                let flat = g.reshape(x, &[batch, spec.flat_dim()])?;
                stack.forward(g, store, flat)
            }
        }
    }
}

/// A model: its spec, the architecture handles, and the tensors they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperEnergyModel {
    pub spec: ModelSpec,
    pub arch: Architecture,
    pub store: ParamStore,
}

impl HyperEnergyModel {
    /// Builds and initializes the variant named by `spec.variant`.
    ///
    /// Traditional-kernel variants draw their frozen reference points from
    /// `train_inputs` (`[M × n × k]`), which is then required.
    pub fn build(spec: &ModelSpec, seed: u64, train_inputs: Option<&Tensor>) -> Result<Self> {
        spec.validate()?;
        let refs = match spec.variant.kernel_mode() {
            Some(mode) if mode.is_traditional() => {
                let inputs = train_inputs.ok_or_else(|| {
                    Error::invalid(format!(
                        "{} draws its reference points from training windows, none given",
                        spec.variant
                    ))
                })?;
                let expected = [inputs.shape()[0], spec.window, spec.features];
                if inputs.shape() != expected {
                    return Err(Error::shape("training inputs", inputs.shape(), &expected));
                }
                Some(reference_points_from_data(
                    inputs,
                    spec.num_reference_points,
                    derive_seed(seed, "kernel.reference_points"),
                )?)
            }
            Some(_) => Some(init_reference_points(
                spec.num_reference_points,
                spec.features,
                spec.window,
                derive_seed(seed, "kernel.reference_points"),
            )?),
            None => None,
        };
        Self::assemble(spec, seed, refs)
    }

    /// Same structure as [`build`](Self::build) with placeholder values,
    /// for loading stored parameters into.
    pub(crate) fn skeleton(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let refs = spec
            .variant
            .kernel_mode()
            .map(|_| Tensor::zeros(&[spec.num_reference_points, spec.flat_dim()]));
        Self::assemble(spec, 0, refs)
    }

    fn assemble(spec: &ModelSpec, seed: u64, refs: Option<Tensor>) -> Result<Self> {
        let mut store = ParamStore::new();
        let arch = match spec.variant {
            Variant::PlainLstm => {
                let layout = LstmParamLayout::build(spec.hidden_units, spec.features, spec.lstm_layers)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "lstm"));
                let layers = layout
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(l, s)| {
                        let w = xavier_uniform(s.weight_shape[0], s.weight_shape[1], &mut rng);
                        (
                            store.add(format!("lstm.{l}.weight"), w, true),
                            store.add(format!("lstm.{l}.bias"), Tensor::zeros(&[s.bias_len]), true),
                        )
                    })
                    .collect();
                let head = OutputHead::init(&mut store, spec.hidden_units, spec.horizon, derive_seed(seed, "head"))?;
                Architecture::PlainLstm { layers, head }
            }
            Variant::MlpBaseline => {
                let stack = DenseStack::init(
                    &mut store,
                    "mlp",
                    spec.flat_dim(),
                    &[spec.mlp_hidden, spec.mlp_hidden],
                    spec.horizon,
                    spec.activation,
                    derive_seed(seed, "mlp"),
                )?;
                Architecture::Mlp { stack }
            }
            _ => {
                let kernel = match (spec.kernel_config(), refs) {
                    (Some(cfg), Some(refs)) => Some(KernelParams::register(&mut store, "kernel", &cfg, refs)?),
                    _ => None,
                };
                let layout = LstmParamLayout::build(spec.hidden_units, spec.features, spec.lstm_layers)?;
                let input_dim = if kernel.is_some() {
                    spec.num_reference_points
                } else {
                    spec.flat_dim()
                };
                let hypernet = HyperNet::init(
                    &mut store,
                    &spec.hypernet_hidden,
                    input_dim,
                    layout.total_params,
                    spec.activation,
                    derive_seed(seed, "hypernet"),
                )?;
                if hypernet.output_dim() != layout.total_params {
                    return Err(Error::invalid("hypernetwork width differs from the LSTM parameter count"));
                }
                let head = OutputHead::init(&mut store, spec.hidden_units, spec.horizon, derive_seed(seed, "head"))?;
                Architecture::HyperEnergy {
                    kernel,
                    hypernet,
                    layout,
                    head,
                    theta_mode: spec.theta_mode,
                }
            }
        };
        Ok(HyperEnergyModel {
            spec: spec.clone(),
            arch,
            store,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.arch.forward(&self.spec, &self.store, g, x)
    }

    /// Predictions `[M × h]` for `inputs: [M × n × k]`, `batch_size` rows at a time.
    pub fn predict(&self, inputs: &Tensor, batch_size: usize) -> Result<Tensor> {
        let shape = inputs.shape();
        if shape.len() != 3 {
            return Err(Error::shape("model input", shape, &[0, self.spec.window, self.spec.features]));
        }
        let (m, row) = (shape[0], shape[1] * shape[2]);
        let batch_size = batch_size.max(1);
        let mut out = Vec::with_capacity(m * self.spec.horizon);
        for start in (0..m).step_by(batch_size) {
            let end = (start + batch_size).min(m);
            let chunk = Tensor::new(
                &[end - start, shape[1], shape[2]],
                inputs.data()[start * row..end * row].to_vec(),
            )?;
            let mut g = Graph::new();
            let x = g.constant(chunk);
            let y = self.forward(&mut g, x)?;
            out.extend_from_slice(g.value(y).data());
        }
        Tensor::new(&[m, self.spec.horizon], out)
    }

    pub fn layout(&self) -> Option<&LstmParamLayout> {
        match &self.arch {
            Architecture::HyperEnergy { layout, .. } => Some(layout),
            _ => None,
        }
    }

    pub fn kernel(&self) -> Option<&KernelParams> {
        match &self.arch {
            Architecture::HyperEnergy { kernel, .. } => kernel.as_ref(),
            _ => None,
        }
    }

    /// Names of the tensors the optimizer updates.
    pub fn trainable_names(&self) -> Vec<&str> {
        self.store.trainable().map(|(_, p)| p.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Coords};

    fn toy(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            window: 6,
            horizon: 2,
            features: 3,
            hidden_units: 2,
            lstm_layers: 2,
            hypernet_hidden: vec![8, 8],
            activation: Activation::Swish,
            num_reference_points: 4,
            degree: 2,
            gamma: 0.1,
            alpha: Some(1.0),
            theta_mode: ThetaMode::PerSample,
            mlp_hidden: 8,
        }
    }

    #[test]
    fn alpha_defaults_to_inverse_window_length() {
        let train = windows(6, &toy(Variant::HyperenergyFull), 0.0);
        for (v, trainable) in [
            (Variant::HyperenergyFull, true),
            (Variant::HyperenergyTraditionalPoly, false),
        ] {
            let spec = ModelSpec { alpha: None, ..toy(v) };
            let model = HyperEnergyModel::build(&spec, 1, Some(&train)).unwrap();
            let p = model.store.get(model.store.find("kernel.alpha").unwrap());
            assert_eq!(p.value.item(), 1.0 / 18.0);
            assert_eq!(p.requires_grad, trainable);
        }
    }

    fn windows(m: usize, spec: &ModelSpec, phase: f64) -> Tensor {
        let n = m * spec.window * spec.features;
        let data = (0..n).map(|i| 0.5 + 0.4 * (i as f64 * 0.37 + phase).sin()).collect();
        Tensor::new(&[m, spec.window, spec.features], data).unwrap()
    }

    fn build(variant: Variant) -> HyperEnergyModel {
        let spec = toy(variant);
        let train = windows(10, &spec, 0.0);
        HyperEnergyModel::build(&spec, 7, Some(&train)).unwrap()
    }

    #[test]
    fn tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.tag()));
        }
        assert!("hyperenergy_bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn every_variant_gives_finite_predictions() {
        for v in Variant::ALL {
            let model = build(v);
            let x = windows(3, &model.spec, 1.0);
            let y = model.predict(&x, 2).unwrap();
            assert_eq!(y.shape(), &[3, 2], "{v}");
            assert!(y.all_finite(), "{v}");
        }
    }

    #[test]
    fn identical_windows_give_identical_rows() {
        let model = build(Variant::HyperenergyFull);
        let one = windows(1, &model.spec, 0.3);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let x = Tensor::new(&[2, 6, 3], data).unwrap();
        let y = model.predict(&x, 2).unwrap();
        assert_eq!(y.data()[..2], y.data()[2..]);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let a = build(Variant::HyperenergyFull);
        let b = build(Variant::HyperenergyFull);
        let x = windows(4, &a.spec, 2.0);
        assert_eq!(a.predict(&x, 4).unwrap(), b.predict(&x, 4).unwrap());
    }

    #[test]
    fn hypernetwork_variants_hold_no_lstm_shaped_leaves() {
        // u = 2 would make the toy's 8×4 hypernet layer coincide with a gate shape
        for v in Variant::ALL.into_iter().filter(|v| v.uses_hypernet()) {
            let spec = ModelSpec { hidden_units: 3, ..toy(v) };
            let model = HyperEnergyModel::build(&spec, 7, Some(&windows(10, &spec, 0.0))).unwrap();
            let layout = model.layout().unwrap();
            for (_, p) in model.store.trainable() {
                for s in &layout.layers {
                    assert_ne!(p.value.shape(), s.weight_shape.as_slice(), "{v}: {}", p.name);
                    assert_ne!(p.value.shape(), &[s.bias_len], "{v}: {}", p.name);
                }
                let n = &p.name;
                assert!(
                    n.starts_with("kernel.") || n.starts_with("hypernet.") || n.starts_with("head."),
                    "{v}: {n}"
                );
            }
        }
    }

    #[test]
    fn plain_lstm_owns_gate_shaped_weights() {
        let model = build(Variant::PlainLstm);
        let shapes: Vec<Vec<usize>> = model.store.trainable().map(|(_, p)| p.value.shape().to_vec()).collect();
        assert!(shapes.contains(&vec![8, 5]));
        assert!(shapes.contains(&vec![8, 4]));
        assert!(shapes.contains(&vec![8]));
    }

    #[test]
    fn no_kernel_feeds_flattened_window() {
        let model = build(Variant::HyperenergyNoKernel);
        assert!(model.kernel().is_none());
        let Architecture::HyperEnergy { hypernet, .. } = &model.arch else {
            panic!("expected a hypernetwork model");
        };
        assert_eq!(hypernet.stack.input_dim, 18);
        let full = build(Variant::HyperenergyFull);
        let Architecture::HyperEnergy { hypernet, .. } = &full.arch else {
            panic!("expected a hypernetwork model");
        };
        assert_eq!(hypernet.stack.input_dim, 4);
    }

    #[test]
    fn traditional_combined_is_frozen_at_half() {
        let model = build(Variant::HyperenergyTraditionalCombined);
        let k = model.kernel().unwrap();
        assert_eq!(k.lambda(&model.store), 0.5);
        for id in k.params() {
            assert!(!model.store.get(id).requires_grad);
        }
        let spec = toy(Variant::HyperenergyTraditionalCombined);
        assert!(HyperEnergyModel::build(&spec, 0, None).is_err());
    }

    #[test]
    fn mlp_has_three_layers() {
        let model = build(Variant::MlpBaseline);
        let Architecture::Mlp { stack } = &model.arch else {
            panic!("expected an MLP");
        };
        assert_eq!(
            stack.layer_shapes(&model.store),
            vec![vec![8, 18], vec![8, 8], vec![2, 8]]
        );
    }

    #[test]
    fn batch_mean_matches_per_sample_for_single_row() {
        let mut spec = toy(Variant::HyperenergyFull);
        let a = HyperEnergyModel::build(&spec, 3, None).unwrap();
        spec.theta_mode = ThetaMode::BatchMean;
        let b = HyperEnergyModel::build(&spec, 3, None).unwrap();
        let x = windows(1, &spec, 0.9);
        let (ya, yb) = (a.predict(&x, 1).unwrap(), b.predict(&x, 1).unwrap());
        for (p, q) in ya.data().iter().zip(yb.data()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_window_shape_rejected() {
        let model = build(Variant::HyperenergyFull);
        assert!(model.predict(&Tensor::zeros(&[2, 5, 3]), 2).is_err());
    }

    #[test]
    fn full_pipeline_gradients_match_finite_differences() {
        let mut model = build(Variant::HyperenergyFull);
        let x = windows(3, &model.spec, 0.4);
        let target = Tensor::new(&[3, 2], vec![0.2, 0.5, 0.9, 0.1, 0.4, 0.7]).unwrap();
        let (spec, arch) = (&model.spec, &model.arch);
        let rep = finite_diff_check(
            &mut model.store,
            1e-5,
            Coords::Sample { per_param: 6, seed: 1 },
            None,
            |s, g| {
                let xv = g.constant(x.clone());
                let y = arch.forward(spec, s, g, xv)?;
                let t = g.constant(target.clone());
                let d = g.sub(y, t)?;
                let sq = g.mul(d, d)?;
                g.mean(sq)
            },
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{:?}", rep.worst());
    }
}
