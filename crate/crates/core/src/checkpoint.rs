//! JSON checkpoints: network spec, format version, and every parameter array
//! as row-major decimal literals that parse back to the identical `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Standardizer;
use crate::matrix::Matrix;
use crate::model::{Dense, Network, NetworkSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    spec: NetworkSpec,
    frozen_features: bool,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardizer: Option<Standardizer>,
}

/// A trained network together with the input transform it was trained behind.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let doc = CheckpointDoc {
            format_version: FORMAT_VERSION,
            spec: *self.network.spec(),
            frozen_features: self.network.frozen_features(),
            layers: self
                .network
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
            standardizer: self.standardizer.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint format version {} unsupported (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|r| {
                Ok(Dense {
                    weight: Matrix::from_vec(r.rows, r.cols, r.weight)?,
                    bias: r.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network::from_layers(doc.spec, layers, doc.frozen_features)?;
        if !network.is_finite() {
            return Err(Error::Parse("checkpoint holds non-finite parameters".into()));
        }
        if let Some(s) = &doc.standardizer {
            if s.mean.len() != doc.spec.input_dim || s.std.len() != doc.spec.input_dim {
                return Err(Error::Shape(
                    "standardizer width differs from network input".into(),
                ));
            }
        }
        Ok(Checkpoint {
            network,
            standardizer: doc.standardizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
