//! Proxy classification tasks (video to challenge, video to user) whose
//! hidden activations become the learned video embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{FeatureSource, Modality};
use crate::head_io::{weights_version, HeadFile};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nn::{Mlp, OutputKind, Target};
use crate::scalar::Scalar;
use crate::train::{argmax, fit, Example, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyTask {
    Challenge,
    User,
}

impl ProxyTask {
    pub fn name(self) -> &'static str {
        match self {
            ProxyTask::Challenge => "challenge",
            ProxyTask::User => "user",
        }
    }
}

/// Class names and the class of every labelled video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyLabels {
    pub classes: Vec<String>,
    pub assignments: BTreeMap<String, usize>,
}

impl ProxyLabels {
    /// Challenge-tagged videos labelled with their challenge.
    pub fn challenges(corpus: &Corpus) -> Self {
        let classes = corpus.challenge_labels().to_vec();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let assignments = corpus
            .videos()
            .iter()
            .filter_map(|v| {
                v.challenge_tag
                    .as_ref()
                    .map(|t| (v.video_id.clone(), index[t.as_str()]))
            })
            .collect();
        ProxyLabels { classes, assignments }
    }

    /// Untagged videos labelled with their owner. Challenge-tagged videos are
    /// left out so they never shape a user representation.
    pub fn users(corpus: &Corpus) -> Self {
        let owners: BTreeSet<&str> = corpus
            .videos()
            .iter()
            .filter(|v| v.challenge_tag.is_none())
            .map(|v| v.user_id.as_str())
            .collect();
        let classes: Vec<String> = owners.iter().map(|s| s.to_string()).collect();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let assignments = corpus
            .videos()
            .iter()
            .filter(|v| v.challenge_tag.is_none())
            .map(|v| (v.video_id.clone(), index[v.user_id.as_str()]))
            .collect();
        ProxyLabels { classes, assignments }
    }

    pub fn ids(&self) -> Vec<String> {
        self.assignments.keys().cloned().collect()
    }

    pub fn class_of(&self, id: &str) -> Result<usize> {
        self.assignments
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyHead<T> {
    pub task: ProxyTask,
    pub modality: Modality,
    pub classes: Vec<String>,
    pub mlp: Mlp<T>,
    pub seed: u64,
    pub config_hash: String,
}

impl<T: Scalar + Serialize + DeserializeOwned> ProxyHead<T> {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.output_dim
    }

    /// Content hash of the trained weights.
    pub fn version(&self) -> Result<String> {
        weights_version(&self.mlp)
    }

    pub fn predict_class(&self, x: &[T]) -> usize {
        argmax(&self.mlp.predict(x))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({ "task": self.task, "modality": self.modality, "classes": self.classes });
        HeadFile::new("proxy", self.seed, &self.config_hash, meta, self.mlp.clone()).save(path)
    }

    pub fn load(path: &Path, expected_input_dim: Option<usize>) -> Result<Self> {
        let file = HeadFile::<T>::load(path, "proxy", expected_input_dim)?;
        let task = serde_json::from_value(file.meta["task"].clone())?;
        let modality = serde_json::from_value(file.meta["modality"].clone())?;
        let classes: Vec<String> = serde_json::from_value(file.meta["classes"].clone())?;
        if classes.len() != file.mlp.output_dim {
            return Err(Error::Consistency(format!(
                "{} lists {} classes for {} outputs",
                path.display(),
                classes.len(),
                file.mlp.output_dim
            )));
        }
        Ok(ProxyHead {
            task,
            modality,
            classes,
            mlp: file.mlp,
            seed: file.seed,
            config_hash: file.config_hash,
        })
    }
}

/// Trains a proxy head on `train_ids`.
pub fn train_proxy<T: Scalar>(
    features: &FeatureSource,
    labels: &ProxyLabels,
    train_ids: &[String],
    task: ProxyTask,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<(ProxyHead<T>, TrainLog)> {
    let present: BTreeSet<usize> = train_ids.iter().map(|id| labels.class_of(id)).collect::<Result<_>>()?;
    if present.len() < 2 {
        return Err(Error::Config(format!(
            "the {} proxy task needs at least 2 classes, found {}",
            task.name(),
            present.len()
        )));
    }
    let input_dim = features.dim(train_ids)?;
    let examples: Vec<Example<T>> = train_ids
        .iter()
        .map(|id| {
            Ok(Example::new(
                features.features(id)?,
                Target::Class(labels.class_of(id)?),
            ))
        })
        .collect::<Result<_>>()?;
    let (mlp, log) = fit(input_dim, labels.classes.len(), OutputKind::Softmax, &examples, cfg)?;
    Ok((
        ProxyHead {
            task,
            modality: features.modality,
            classes: labels.classes.clone(),
            mlp,
            seed: cfg.seed,
            config_hash: config_hash.to_string(),
        },
        log,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedVideoEmbedding<T> {
    pub video_id: String,
    pub task: ProxyTask,
    pub head_version: String,
    pub vector: Vec<T>,
}

/// Hidden-layer activations (dropout off) of `ids`.
pub fn extract_learned_embeddings<T: Scalar + Serialize + DeserializeOwned>(
    head: &ProxyHead<T>,
    features: &FeatureSource,
    ids: &[String],
) -> Result<Vec<LearnedVideoEmbedding<T>>> {
    let version = head.version()?;
    ids.iter()
        .map(|id| {
            let x = features.features::<T>(id)?;
            if x.len() != head.input_dim() {
                return Err(Error::Consistency(format!(
                    "features of {id:?} have width {}, head expects {}",
                    x.len(),
                    head.input_dim()
                )));
            }
            Ok(LearnedVideoEmbedding {
                video_id: id.clone(),
                task: head.task,
                head_version: version.clone(),
                vector: head.mlp.hidden(&x),
            })
        })
        .collect()
}

/// Confusion matrix of the head's arg-max predictions on `test_ids`.
pub fn proxy_confusion<T: Scalar + Serialize + DeserializeOwned>(
    head: &ProxyHead<T>,
    features: &FeatureSource,
    labels: &ProxyLabels,
    test_ids: &[String],
) -> Result<ConfusionMatrix> {
    if test_ids.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let mut truth = Vec::with_capacity(test_ids.len());
    let mut predicted = Vec::with_capacity(test_ids.len());
    for id in test_ids {
        truth.push(labels.class_of(id)?);
        predicted.push(head.predict_class(&features.features::<T>(id)?));
    }
    ConfusionMatrix::from_indices(head.classes.clone(), &truth, &predicted)
}

/// Macro precision, recall and F1 of the head on held-out videos.
pub fn evaluate_proxy<T: Scalar + Serialize + DeserializeOwned>(
    head: &ProxyHead<T>,
    features: &FeatureSource,
    labels: &ProxyLabels,
    test_ids: &[String],
) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(&proxy_confusion(
        head, features, labels, test_ids,
    )?))
}

/// Share of `test_ids` the head classifies correctly.
pub fn proxy_accuracy<T: Scalar + Serialize + DeserializeOwned>(
    head: &ProxyHead<T>,
    features: &FeatureSource,
    labels: &ProxyLabels,
    test_ids: &[String],
) -> Result<f64> {
    let cm = proxy_confusion(head, features, labels, test_ids)?;
    let hits: u64 = (0..cm.len()).map(|i| cm.counts[i][i]).sum();
    Ok(hits as f64 / cm.total() as f64)
}
