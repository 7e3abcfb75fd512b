//! Self-describing JSON checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "wsed-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    pub num_params: usize,
    /// Class names in output order; may be empty.
    #[serde(default)]
    pub class_names: Vec<String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, class_names: Vec<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: params.spec().clone(),
            seed: params.seed(),
            num_params: params.num_params(),
            class_names,
            params: params.values().to_vec(),
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.params.len() != self.num_params {
            return Err(Error::Data(format!(
                "checkpoint declares {} parameters but stores {}",
                self.num_params,
                self.params.len()
            )));
        }
        ModelParams::from_values(self.spec, self.seed, self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "not a checkpoint (format {:?})",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn round_trip_is_lossless() {
        let spec = ModelSpec {
            input_dim: 3,
            dense_widths: vec![4, 2],
            activation: Activation::Glu,
            recurrent_width: 3,
            bidirectional: false,
            classes: 2,
            recurrent_dropout: 0.1,
            output_dropout: 0.0,
        };
        let p = ModelParams::init(spec, 77).unwrap();
        let ck = Checkpoint::from_params(&p, vec!["a".into(), "b".into()]);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.clone().into_params().unwrap(), p);
        assert_eq!(back.class_names, vec!["a", "b"]);
    }

    #[test]
    fn version_is_checked() {
        let spec = ModelSpec {
            input_dim: 1,
            dense_widths: vec![],
            activation: Activation::Relu,
            recurrent_width: 1,
            bidirectional: false,
            classes: 1,
            recurrent_dropout: 0.0,
            output_dropout: 0.0,
        };
        let p = ModelParams::init(spec, 1).unwrap();
        let mut ck = Checkpoint::from_params(&p, vec![]);
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
