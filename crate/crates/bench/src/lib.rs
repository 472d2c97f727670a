//! Fixtures shared by the criterion benchmarks in `benches/`.

use hyperenergy::autodiff::Tensor;
use hyperenergy::data::{prepare, synth_generate, Profile, WindowConfig, WindowedDataset};
use hyperenergy::{HyperEnergyModel, ModelSpec, Variant};

/// First `batch` training windows of a 60-day residence series.
pub fn batch(batch: usize) -> WindowedDataset {
    let series = synth_generate(Profile::Residence, 60, 1, 0.05).expect("synthetic series");
    let data = prepare(&series, &WindowConfig::default()).expect("windows");
    let idx: Vec<usize> = (0..batch).collect();
    data.train.select(&idx).expect("enough windows")
}

pub fn model(variant: Variant, hidden_units: usize, inputs: &Tensor) -> HyperEnergyModel {
    let spec = ModelSpec {
        variant,
        hidden_units,
        ..ModelSpec::default()
    };
    HyperEnergyModel::build(&spec, 7, Some(inputs)).expect("model")
}
