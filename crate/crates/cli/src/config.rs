//! JSON run configuration.
//!
//! ```json
//! {
//!   "model": { "hidden": [32], "weight_bits": 2, "quantizer": "balanced-mean" },
//!   "train": { "epochs": 20, "schedule": { "kind": "constant", "lr": 0.1 } }
//! }
//! ```
//!
//! Every field is optional; unknown fields are rejected.

use std::path::Path;

use balquant_core::fixed::Activation;
use balquant_core::model::ModelSpec;
use balquant_core::quant::{Bitwidth, WeightQuantizer};
use balquant_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty for a single linear layer.
    pub hidden: Vec<usize>,
    pub input_bits: Bitwidth,
    pub weight_bits: Bitwidth,
    pub act_bits: Bitwidth,
    pub quantizer: WeightQuantizer,
    /// Activation of the hidden layers.
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            input_bits: Bitwidth::new(8).expect("valid"),
            weight_bits: Bitwidth::new(2).expect("valid"),
            act_bits: Bitwidth::new(2).expect("valid"),
            quantizer: WeightQuantizer::BalancedMean,
            activation: Activation::Sigmoid,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, inputs: usize, classes: usize) -> Result<ModelSpec> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        let mut spec = ModelSpec::uniform(&sizes, self.input_bits, self.weight_bits, self.act_bits, self.quantizer)?;
        let n = spec.layers.len();
        for l in &mut spec.layers[..n - 1] {
            l.activation = self.activation;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Usage(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
