//! JSON model checkpoints. Floats are written in shortest round-trip form,
//! so a save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::data::{DatasetScaler, Feature};
use crate::error::{Error, Result};
use crate::kernel::KernelMode;
use crate::layout::LstmParamLayout;
use crate::model::{HyperEnergyModel, ModelSpec};
use crate::train::TrainState;

pub const FORMAT: &str = "hyperenergy-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub requires_grad: bool,
    pub value: Tensor,
}

/// Values of every tensor in `store`, in registration order.
pub fn snapshot(store: &ParamStore) -> Vec<StoredParam> {
    store
        .iter()
        .map(|(_, p)| StoredParam {
            name: p.name.clone(),
            requires_grad: p.requires_grad,
            value: p.value.clone(),
        })
        .collect()
}

/// Writes `params` back into a store with the same structure.
pub fn restore(store: &mut ParamStore, params: &[StoredParam]) -> Result<()> {
    if store.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, stored) in ids.into_iter().zip(params) {
        let p = store.get(id);
        if p.name != stored.name || p.value.shape() != stored.value.shape() || p.requires_grad != stored.requires_grad {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match stored `{}` {:?}",
                p.name,
                p.value.shape(),
                stored.name,
                stored.value.shape()
            )));
        }
        store.set_value(id, stored.value.data())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelInfo {
    pub mode: KernelMode,
    pub degree: u32,
    pub gamma: f64,
    pub num_reference_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub spec: ModelSpec,
    pub layout: Option<LstmParamLayout>,
    pub kernel: Option<KernelInfo>,
    pub features: Vec<Feature>,
    pub scaler: Option<DatasetScaler>,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn from_model(
        model: &HyperEnergyModel,
        scaler: Option<&DatasetScaler>,
        features: &[Feature],
        config_hash: &str,
    ) -> Self {
        let kernel = model.spec.kernel_config().map(|k| KernelInfo {
            mode: k.mode,
            degree: k.degree,
            gamma: k.gamma,
            num_reference_points: k.num_reference_points,
        });
        Checkpoint {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            tool_version: TOOL_VERSION.into(),
            config_hash: config_hash.into(),
            spec: model.spec.clone(),
            layout: model.layout().cloned(),
            kernel,
            features: features.to_vec(),
            scaler: scaler.cloned(),
            params: snapshot(&model.store),
        }
    }

    pub fn to_model(&self) -> Result<HyperEnergyModel> {
        let mut model = HyperEnergyModel::skeleton(&self.spec)?;
        if model.layout() != self.layout.as_ref() {
            return Err(Error::Checkpoint("stored layout does not match the model spec".into()));
        }
        restore(&mut model.store, &self.params)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not a readable checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub const STATE_FORMAT: &str = "hyperenergy-train-state";

/// An unfinished training run, saved after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeFile {
    pub format: String,
    pub tool_version: String,
    pub config_hash: String,
    pub state: TrainState,
}

impl ResumeFile {
    pub fn new(state: TrainState, config_hash: &str) -> Self {
        ResumeFile {
            format: STATE_FORMAT.into(),
            tool_version: TOOL_VERSION.into(),
            config_hash: config_hash.into(),
            state,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    /// Fails unless the file was written for `config_hash`.
    pub fn load(path: &Path, config_hash: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let file: ResumeFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{} is not a training state: {e}", path.display())))?;
        if file.format != STATE_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", file.format)));
        }
        if file.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} belongs to config {}, not {config_hash}",
                path.display(),
                file.config_hash
            )));
        }
        Ok(file)
    }
}

/// Writes through a sibling temporary file so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_features, MinMaxScaler};
    use crate::model::Variant;

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            window: 4,
            horizon: 3,
            features: 2,
            hidden_units: 3,
            lstm_layers: 2,
            hypernet_hidden: vec![5],
            num_reference_points: 3,
            mlp_hidden: 4,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let train = Tensor::new(&[5, 4, 2], (0..40).map(|i| (i as f64 * 0.77).sin() / 3.0).collect()).unwrap();
        let scaler = DatasetScaler {
            features: MinMaxScaler { min: vec![0.1, -3.0], max: vec![1.0 / 3.0, 7.25] },
            target: MinMaxScaler { min: vec![0.0], max: vec![std::f64::consts::PI] },
        };
        for v in Variant::ALL {
            let model = HyperEnergyModel::build(&spec(v), 11, Some(&train)).unwrap();
            let ck = Checkpoint::from_model(&model, Some(&scaler), &default_features(), "abc");
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back, ck, "{v}");
            let restored = back.to_model().unwrap();
            assert_eq!(restored.store, model.store, "{v}");
            assert_eq!(restored.predict(&train, 5).unwrap(), model.predict(&train, 5).unwrap());
        }
    }

    #[test]
    fn rejects_foreign_and_mismatched() {
        assert!(Checkpoint::from_json("{}").is_err());
        let model = HyperEnergyModel::build(&spec(Variant::HyperenergyFull), 1, None).unwrap();
        let mut ck = Checkpoint::from_model(&model, None, &[], "");
        ck.format_version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        let mut ck = Checkpoint::from_model(&model, None, &[], "");
        ck.params.pop();
        assert!(ck.to_model().is_err());
    }
}
