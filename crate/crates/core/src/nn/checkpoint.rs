use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Mlp, MlpSpec};
use crate::nn::optim::OptimizerKind;
use crate::scalar::Scalar;

const FORMAT: &str = "platoon-mlp/1";

/// Serialized network: architecture, flat parameters and the seed that
/// produced the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: MlpSpec,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_mlp<T: Scalar>(mlp: &Mlp<T>, seed: u64) -> Self {
        Self {
            format: FORMAT.to_string(),
            spec: mlp.spec().clone(),
            seed,
            params: mlp.to_flat().into_iter().map(Scalar::as_f64).collect(),
        }
    }

    /// Rebuilds the network with a fresh optimizer of the given kind.
    pub fn to_mlp<T: Scalar>(&self, optimizer: OptimizerKind) -> Result<Mlp<T>> {
        if self.format != FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", self.format)));
        }
        let flat: Vec<T> = self.params.iter().map(|&v| T::lit(v)).collect();
        Mlp::from_flat(self.spec.clone(), optimizer, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
