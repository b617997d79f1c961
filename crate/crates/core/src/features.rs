use serde::{Deserialize, Serialize};

use crate::encoding::visual_width;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::EmbeddingStore;

/// Which part of a raw video embedding is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Frame features only.
    Visual,
    /// Frame features followed by the caption embedding.
    #[default]
    VisualText,
}

/// Read-only view of a raw embedding store restricted to one modality.
#[derive(Clone, Copy, Debug)]
pub struct FeatureSource<'a> {
    pub store: &'a EmbeddingStore,
    pub modality: Modality,
}

impl<'a> FeatureSource<'a> {
    pub fn new(store: &'a EmbeddingStore, modality: Modality) -> Self {
        FeatureSource { store, modality }
    }

    pub fn slice(&self, id: &str) -> Result<&'a [f32]> {
        let full = self.store.require(id)?;
        match self.modality {
            Modality::VisualText => Ok(full),
            Modality::Visual => {
                let entry = self.store.entry(id).expect("present");
                let width = visual_width(&entry.provenance)
                    .ok_or_else(|| Error::Consistency(format!("store entry {id:?} lacks frame provenance")))?;
                full.get(..width)
                    .ok_or_else(|| Error::Consistency(format!("store entry {id:?} is shorter than its visual part")))
            }
        }
    }

    pub fn features<T: Scalar>(&self, id: &str) -> Result<Vec<T>> {
        Ok(self.slice(id)?.iter().map(|&v| T::of_f32(v)).collect())
    }

    /// Feature width shared by `ids`; mixed widths are a consistency error.
    pub fn dim(&self, ids: &[String]) -> Result<usize> {
        let mut dim = None;
        for id in ids {
            let d = self.slice(id)?.len();
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Consistency(format!(
                        "feature width {d} of {id:?} differs from {prev}"
                    )))
                }
                _ => {}
            }
        }
        dim.ok_or_else(|| Error::Config("no items to read features for".into()))
    }
}
