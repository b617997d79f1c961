//! Versioned weight files for trained heads.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::provenance::hash_json;
use crate::scalar::Scalar;

pub const HEAD_FORMAT: &str = "challenger-head";
pub const HEAD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadFile<T> {
    pub format: String,
    pub version: u32,
    /// `proxy`, `participation` or `baseline`.
    pub kind: String,
    pub scalar: String,
    pub seed: u64,
    pub config_hash: String,
    /// Kind-specific metadata (task, class names, modality, ...).
    pub meta: Value,
    pub mlp: Mlp<T>,
}

fn scalar_name<T: 'static>() -> String {
    std::any::type_name::<T>().to_string()
}

impl<T: Scalar + Serialize + DeserializeOwned> HeadFile<T> {
    pub fn new(kind: &str, seed: u64, config_hash: &str, meta: Value, mlp: Mlp<T>) -> Self {
        HeadFile {
            format: HEAD_FORMAT.into(),
            version: HEAD_VERSION,
            kind: kind.into(),
            scalar: scalar_name::<T>(),
            seed,
            config_hash: config_hash.into(),
            meta,
            mlp,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a head of the given kind, refusing a different input width.
    pub fn load(path: &Path, kind: &str, expected_input_dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: HeadFile<T> = serde_json::from_str(&text)?;
        if head.format != HEAD_FORMAT || head.version != HEAD_VERSION {
            return Err(Error::Consistency(format!(
                "{} is not a {HEAD_FORMAT} v{HEAD_VERSION} file",
                path.display()
            )));
        }
        if head.kind != kind {
            return Err(Error::Consistency(format!(
                "{} holds a {} head, expected {kind}",
                path.display(),
                head.kind
            )));
        }
        if head.scalar != scalar_name::<T>() {
            return Err(Error::Consistency(format!(
                "{} stores {} weights",
                path.display(),
                head.scalar
            )));
        }
        if let Some(dim) = expected_input_dim {
            if head.mlp.input_dim != dim {
                return Err(Error::Consistency(format!(
                    "{} expects input width {}, got {dim}",
                    path.display(),
                    head.mlp.input_dim
                )));
            }
        }
        let m = &head.mlp;
        if m.w1.len() != m.input_dim * m.hidden_dim
            || m.b1.len() != m.hidden_dim
            || m.w2.len() != m.hidden_dim * m.output_dim
            || m.b2.len() != m.output_dim
        {
            return Err(Error::Consistency(format!(
                "{} has inconsistent weight shapes",
                path.display()
            )));
        }
        Ok(head)
    }
}

/// Short content hash identifying a set of trained weights.
pub fn weights_version<T: Scalar + Serialize>(mlp: &Mlp<T>) -> Result<String> {
    Ok(hash_json(mlp)?[..16].to_string())
}
