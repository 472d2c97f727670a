//! Run configuration: one TOML file describes the data source, the model,
//! training, the grid and the ablation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    default_features, ingest_csv, synth_generate, ColumnMap, Feature, GapPolicy, Profile, SplitRatios, TimeSeries,
    WindowConfig,
};
use crate::error::{Error, Result};
use crate::eval::AblationConfig;
use crate::hypernet::Activation;
use crate::model::{ModelSpec, ThetaMode, Variant};
use crate::train::{GridSpace, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream: initialization, shuffling, synthesis.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Parallel grid/ablation trials.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridSpace,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_jobs() -> usize {
    1
}

/// Exactly one of `path` and `synth` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSource>,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub gaps: GapPolicy,
    #[serde(default = "default_features")]
    pub features: Vec<Feature>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_window")]
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub train_stride: Option<usize>,
    #[serde(default)]
    pub split: SplitRatios,
}

fn default_window() -> usize {
    24
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub profile: Profile,
    pub days: usize,
    /// Falls back to the top-level seed.
    pub seed: Option<u64>,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.05
}

/// [`ModelSpec`] minus the shapes, which come from the data section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden_units: usize,
    pub lstm_layers: usize,
    pub hypernet_hidden: Vec<usize>,
    pub activation: Activation,
    pub num_reference_points: usize,
    pub degree: u32,
    pub gamma: f64,
    /// Starting polynomial scale; `1/(k·n)` when unset.
    pub alpha: Option<f64>,
    pub theta_mode: ThetaMode,
    pub mlp_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ModelSpec::default();
        ModelConfig {
            variant: s.variant,
            hidden_units: s.hidden_units,
            lstm_layers: s.lstm_layers,
            hypernet_hidden: s.hypernet_hidden,
            activation: s.activation,
            num_reference_points: s.num_reference_points,
            degree: s.degree,
            gamma: s.gamma,
            alpha: s.alpha,
            theta_mode: s.theta_mode,
            mlp_hidden: s.mlp_hidden,
        }
    }
}

impl RunConfig {
    /// Parses and validates; a relative data path is taken relative to the
    /// config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.data.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        match (&self.data.path, &self.data.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("data.path and data.synth are mutually exclusive".into())),
            (None, None) => return Err(Error::Config("data needs either `path` or a [data.synth] table".into())),
            _ => {}
        }
        if let Some(s) = &self.data.synth {
            if s.days < 4 {
                return Err(Error::Config(format!("data.synth.days must be >= 4, got {}", s.days)));
            }
            if !(s.noise >= 0.0) || !s.noise.is_finite() {
                return Err(Error::Config(format!("data.synth.noise must be finite and >= 0, got {}", s.noise)));
            }
        }
        if let GapPolicy::ForwardFill { max_hours: 0 } = self.data.gaps {
            return Err(Error::Config("data.gaps.max_hours must be >= 1".into()));
        }
        self.window_config().validate()?;
        self.model_spec().validate()?;
        self.train.validate()?;
        self.grid.validate()?;
        if let Some(a) = &self.ablation {
            a.validate()?;
        }
        Ok(())
    }

    pub fn window_config(&self) -> WindowConfig {
        let d = &self.data;
        WindowConfig {
            features: d.features.clone(),
            window: d.window,
            horizon: d.horizon,
            stride: d.stride,
            train_stride: d.train_stride,
            split: d.split,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            variant: m.variant,
            window: self.data.window,
            horizon: self.data.horizon,
            features: self.data.features.len(),
            hidden_units: m.hidden_units,
            lstm_layers: m.lstm_layers,
            hypernet_hidden: m.hypernet_hidden.clone(),
            activation: m.activation,
            num_reference_points: m.num_reference_points,
            degree: m.degree,
            gamma: m.gamma,
            alpha: m.alpha,
            theta_mode: m.theta_mode,
            mlp_hidden: m.mlp_hidden,
        }
    }

    pub fn load_series(&self) -> Result<TimeSeries> {
        match (&self.data.path, &self.data.synth) {
            (Some(path), _) => ingest_csv(path, &self.data.columns, self.data.gaps),
            (None, Some(s)) => synth_generate(s.profile, s.days, s.seed.unwrap_or(self.seed), s.noise),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }

    /// Hash of the canonical JSON form.
    /// `jobs` and `output_dir` are left out: neither changes any result.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.jobs = 1;
        canonical.output_dir = PathBuf::new();
        hash_json(&canonical)
    }
}

/// First 16 hex digits of the SHA-256 of `value` serialized as JSON.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    let digest = format!("{:x}", Sha256::digest(json.as_bytes()));
    digest[..16].to_string()
}
