//! User-challenge participation prediction and the user-only baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Corpus;
use crate::corpus::FoldPlan;
use crate::error::{Error, Result};
use crate::features::FeatureSource;
use crate::head_io::HeadFile;
use crate::metrics::{cross_validate, ConfusionMatrix, MetricsReport};
use crate::nn::{Mlp, OutputKind, Target};
use crate::representations::{concat_with_padding, select_user_videos, Recency, RepresentationSet};
use crate::scalar::Scalar;
use crate::train::{fit, Example, TrainConfig, TrainLog};

/// Class names of the pairwise evaluation, negative first.
pub const PAIR_CLASSES: [&str; 2] = ["no", "yes"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipationPair {
    pub user_id: String,
    pub challenge_tag: String,
    pub label: bool,
}

impl ParticipationPair {
    /// Key used in fold plans.
    pub fn key(&self) -> String {
        pair_key(&self.user_id, &self.challenge_tag)
    }
}

pub fn pair_key(user_id: &str, challenge_tag: &str) -> String {
    format!("{user_id}\t{challenge_tag}")
}

/// Every user paired with every challenge in `challenge_set`; the label is
/// whether the user posted a video with that tag.
pub fn build_pairs(corpus: &Corpus, challenge_set: &[String]) -> Result<Vec<ParticipationPair>> {
    let known: BTreeSet<&str> = corpus.challenge_labels().iter().map(String::as_str).collect();
    if let Some(tag) = challenge_set.iter().find(|t| !known.contains(t.as_str())) {
        return Err(Error::Data(format!("challenge {tag:?} is not in the corpus")));
    }
    let joined: BTreeSet<(&str, &str)> = corpus
        .videos()
        .iter()
        .filter_map(|v| v.challenge_tag.as_deref().map(|t| (v.user_id.as_str(), t)))
        .collect();
    let mut pairs = Vec::with_capacity(corpus.users().len() * challenge_set.len());
    for user in corpus.users() {
        for tag in challenge_set {
            pairs.push(ParticipationPair {
                user_id: user.clone(),
                challenge_tag: tag.clone(),
                label: joined.contains(&(user.as_str(), tag.as_str())),
            });
        }
    }
    Ok(pairs)
}

/// Settings of the participation head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticipationConfig {
    pub train: TrainConfig,
    /// Probabilities at or above this are positive.
    pub threshold: f64,
}

impl Default for ParticipationConfig {
    fn default() -> Self {
        ParticipationConfig {
            train: TrainConfig::default(),
            threshold: 0.5,
        }
    }
}

impl ParticipationConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipationModel<T> {
    pub mlp: Mlp<T>,
    pub challenge_dim: usize,
    pub user_dim: usize,
    pub threshold: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl<T: Scalar + Serialize + DeserializeOwned> ParticipationModel<T> {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    pub fn probability(&self, x: &[T]) -> f64 {
        self.mlp.predict(x)[0].to_f64_lossy()
    }

    pub fn decide(&self, probability: f64) -> bool {
        probability >= self.threshold
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "challenge_dim": self.challenge_dim,
            "user_dim": self.user_dim,
            "threshold": self.threshold,
        });
        HeadFile::new("participation", self.seed, &self.config_hash, meta, self.mlp.clone()).save(path)
    }

    pub fn load(path: &Path, expected_input_dim: Option<usize>) -> Result<Self> {
        let file = HeadFile::<T>::load(path, "participation", expected_input_dim)?;
        let field = |name: &str| {
            file.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Consistency(format!("{} lacks {name}", path.display())))
        };
        let challenge_dim: usize = serde_json::from_value(field("challenge_dim")?)?;
        let user_dim: usize = serde_json::from_value(field("user_dim")?)?;
        let threshold: f64 = serde_json::from_value(field("threshold")?)?;
        if challenge_dim + user_dim != file.mlp.input_dim {
            return Err(Error::Consistency(format!(
                "{} has inconsistent input widths",
                path.display()
            )));
        }
        Ok(ParticipationModel {
            mlp: file.mlp,
            challenge_dim,
            user_dim,
            threshold,
            seed: file.seed,
            config_hash: file.config_hash,
        })
    }
}

/// `x^c` followed by `x^u`.
pub fn pair_input<T: Scalar>(reprs: &RepresentationSet, user_id: &str, challenge_tag: &str) -> Result<Vec<T>> {
    let c = reprs
        .challenge(challenge_tag)
        .ok_or_else(|| Error::Lookup(format!("no representation for challenge {challenge_tag:?}")))?;
    let u = reprs
        .user(user_id)
        .ok_or_else(|| Error::Lookup(format!("no representation for user {user_id:?}")))?;
    Ok(c.vector.iter().chain(&u.vector).map(|&v| T::of_f32(v)).collect())
}

fn representation_dims(reprs: &RepresentationSet) -> Result<(usize, usize)> {
    let width = |mut it: Box<dyn Iterator<Item = usize> + '_>, what: &str| -> Result<usize> {
        let first = it
            .next()
            .ok_or_else(|| Error::Data(format!("no {what} representations")))?;
        if it.any(|w| w != first) {
            return Err(Error::Consistency(format!("{what} representations differ in width")));
        }
        Ok(first)
    };
    Ok((
        width(Box::new(reprs.challenges.iter().map(|c| c.vector.len())), "challenge")?,
        width(Box::new(reprs.users.iter().map(|u| u.vector.len())), "user")?,
    ))
}

/// Trains the participation head on `train_pairs`. Refuses to train when any
/// user representation shares a video with a challenge representation.
pub fn train_participation<T: Scalar>(
    train_pairs: &[&ParticipationPair],
    reprs: &RepresentationSet,
    cfg: &ParticipationConfig,
    config_hash: &str,
) -> Result<(ParticipationModel<T>, TrainLog)> {
    cfg.validate()?;
    reprs.audit().into_result()?;
    let (challenge_dim, user_dim) = representation_dims(reprs)?;
    let examples: Vec<Example<T>> = train_pairs
        .iter()
        .map(|p| {
            Ok(Example::new(
                pair_input(reprs, &p.user_id, &p.challenge_tag)?,
                Target::Labels(vec![Some(p.label)]),
            ))
        })
        .collect::<Result<_>>()?;
    let (mlp, log) = fit(challenge_dim + user_dim, 1, OutputKind::Sigmoid, &examples, &cfg.train)?;
    Ok((
        ParticipationModel {
            mlp,
            challenge_dim,
            user_dim,
            threshold: cfg.threshold,
            seed: cfg.train.seed,
            config_hash: config_hash.to_string(),
        },
        log,
    ))
}

/// Participation probability and decision for one pair.
pub fn predict<T: Scalar + Serialize + DeserializeOwned>(
    model: &ParticipationModel<T>,
    user_id: &str,
    challenge_tag: &str,
    reprs: &RepresentationSet,
) -> Result<(f64, bool)> {
    let x = pair_input::<T>(reprs, user_id, challenge_tag)?;
    if x.len() != model.input_dim() {
        return Err(Error::Consistency(format!(
            "pair input has width {}, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let p = model.probability(&x);
    Ok((p, model.decide(p)))
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub challenge_tag: String,
    pub probability: f64,
    pub label: u8,
    pub fold: usize,
    pub truth: u8,
}

pub fn pair_confusion(predictions: &[Prediction]) -> Result<ConfusionMatrix> {
    let truth: Vec<usize> = predictions.iter().map(|p| p.truth as usize).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label as usize).collect();
    ConfusionMatrix::from_indices(PAIR_CLASSES.iter().map(|s| s.to_string()).collect(), &truth, &predicted)
}

/// Outcome of a cross-validated run.
#[derive(Clone, Debug)]
pub struct CvRun<M> {
    pub report: MetricsReport,
    /// Sorted by fold, then user, then challenge.
    pub predictions: Vec<Prediction>,
    pub models: Vec<M>,
    pub logs: Vec<TrainLog>,
}

fn pairs_by_key(pairs: &[ParticipationPair]) -> Result<BTreeMap<String, &ParticipationPair>> {
    let mut map = BTreeMap::new();
    for p in pairs {
        if map.insert(p.key(), p).is_some() {
            return Err(Error::Data(format!(
                "pair ({}, {}) appears twice",
                p.user_id, p.challenge_tag
            )));
        }
    }
    Ok(map)
}

fn lookup<'a>(map: &BTreeMap<String, &'a ParticipationPair>, keys: &[String]) -> Result<Vec<&'a ParticipationPair>> {
    keys.iter()
        .map(|k| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Lookup(format!("fold plan names unknown pair {k:?}")))
        })
        .collect()
}

fn prediction(p: &ParticipationPair, probability: f64, decided: bool, fold: usize) -> Prediction {
    Prediction {
        user_id: p.user_id.clone(),
        challenge_tag: p.challenge_tag.clone(),
        probability,
        label: decided as u8,
        fold,
        truth: p.label as u8,
    }
}

/// Cross-validates the participation head over `plan`, whose items are
/// [`ParticipationPair::key`]s.
pub fn cross_validate_participation<T: Scalar + Serialize + DeserializeOwned>(
    pairs: &[ParticipationPair],
    reprs: &RepresentationSet,
    cfg: &ParticipationConfig,
    plan: &FoldPlan,
    config_hash: &str,
) -> Result<CvRun<ParticipationModel<T>>> {
    let by_key = pairs_by_key(pairs)?;
    let mut predictions = Vec::new();
    let mut models = Vec::new();
    let mut logs = Vec::new();
    let report = cross_validate(
        |fold, train, test| {
            let train = lookup(&by_key, train)?;
            let test = lookup(&by_key, test)?;
            let fold_cfg = ParticipationConfig {
                train: TrainConfig {
                    seed: cfg.train.seed.wrapping_add(fold as u64),
                    ..cfg.train.clone()
                },
                ..cfg.clone()
            };
            let (model, log) = train_participation::<T>(&train, reprs, &fold_cfg, config_hash)?;
            let fold_predictions: Vec<Prediction> = test
                .iter()
                .map(|p| {
                    let (prob, decided) = predict(&model, &p.user_id, &p.challenge_tag, reprs)?;
                    Ok(prediction(p, prob, decided, fold))
                })
                .collect::<Result<_>>()?;
            let report = MetricsReport::from_confusion(&pair_confusion(&fold_predictions)?);
            predictions.extend(fold_predictions);
            models.push(model);
            logs.push(log);
            Ok(report)
        },
        plan,
    )?;
    Ok(CvRun {
        report,
        predictions,
        models,
        logs,
    })
}

/// Which raw features a baseline sees.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineKind {
    pub backbone_id: String,
    pub caption_encoder_id: Option<String>,
}

impl BaselineKind {
    pub fn name(&self) -> String {
        match &self.caption_encoder_id {
            None => self.backbone_id.clone(),
            Some(t) => format!("{} + {}", self.backbone_id, t),
        }
    }
}

/// Raw-feature user inputs for a baseline: the same video selection as the
/// user representation, with raw features in place of learned embeddings.
pub fn baseline_user_features(
    corpus: &Corpus,
    source: &FeatureSource,
    m_u: usize,
    recency: &Recency,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let exclusion = corpus.challenge_video_ids();
    let mut out = BTreeMap::new();
    for user in corpus.users() {
        let videos = corpus.videos_of_user(user);
        if videos.iter().all(|v| exclusion.contains(&v.video_id)) {
            continue;
        }
        let (kept, _) = select_user_videos(user, &videos, m_u, &exclusion, recency)?;
        let blocks: Vec<&[f32]> = kept.iter().map(|id| source.slice(id)).collect::<Result<_>>()?;
        let (vector, _) = concat_with_padding(&kept, &blocks, m_u)?;
        out.insert(user.clone(), vector);
    }
    Ok(out)
}

/// A user-only multi-label head: one sigmoid output per challenge.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel<T> {
    pub kind: BaselineKind,
    pub challenges: Vec<String>,
    pub mlp: Mlp<T>,
    pub threshold: f64,
}

impl<T: Scalar> BaselineModel<T> {
    pub fn predict(
        &self,
        features: &BTreeMap<String, Vec<f32>>,
        user_id: &str,
        challenge_tag: &str,
    ) -> Result<(f64, bool)> {
        let c = self
            .challenges
            .iter()
            .position(|t| t == challenge_tag)
            .ok_or_else(|| Error::Lookup(format!("baseline has no output for challenge {challenge_tag:?}")))?;
        let x = user_vector::<T>(features, user_id)?;
        let p = self.mlp.predict(&x)[c].to_f64_lossy();
        Ok((p, p >= self.threshold))
    }
}

fn user_vector<T: Scalar>(features: &BTreeMap<String, Vec<f32>>, user_id: &str) -> Result<Vec<T>> {
    let v = features
        .get(user_id)
        .ok_or_else(|| Error::Lookup(format!("no baseline features for user {user_id:?}")))?;
    Ok(v.iter().map(|&x| T::of_f32(x)).collect())
}

/// Trains a baseline on the labels of `train_pairs`; outputs for pairs not
/// in the training set are masked out of the loss.
pub fn train_baseline<T: Scalar>(
    kind: &BaselineKind,
    train_pairs: &[&ParticipationPair],
    features: &BTreeMap<String, Vec<f32>>,
    challenges: &[String],
    cfg: &ParticipationConfig,
) -> Result<(BaselineModel<T>, TrainLog)> {
    cfg.validate()?;
    let index: BTreeMap<&str, usize> = challenges.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut labels: BTreeMap<&str, Vec<Option<bool>>> = BTreeMap::new();
    for p in train_pairs {
        let c = *index
            .get(p.challenge_tag.as_str())
            .ok_or_else(|| Error::Lookup(format!("challenge {:?} is not a baseline output", p.challenge_tag)))?;
        labels
            .entry(p.user_id.as_str())
            .or_insert_with(|| vec![None; challenges.len()])[c] = Some(p.label);
    }
    let examples: Vec<Example<T>> = labels
        .into_iter()
        .map(|(user, l)| Ok(Example::new(user_vector(features, user)?, Target::Labels(l))))
        .collect::<Result<_>>()?;
    let input_dim = examples
        .first()
        .map(|e| e.input.len())
        .ok_or_else(|| Error::Config("no training pairs".into()))?;
    let (mlp, log) = fit(input_dim, challenges.len(), OutputKind::Sigmoid, &examples, &cfg.train)?;
    Ok((
        BaselineModel {
            kind: kind.clone(),
            challenges: challenges.to_vec(),
            mlp,
            threshold: cfg.threshold,
        },
        log,
    ))
}

/// Cross-validates a baseline over the same fold plan as the main model.
pub fn run_baseline<T: Scalar>(
    kind: &BaselineKind,
    pairs: &[ParticipationPair],
    features: &BTreeMap<String, Vec<f32>>,
    challenges: &[String],
    cfg: &ParticipationConfig,
    plan: &FoldPlan,
) -> Result<CvRun<BaselineModel<T>>> {
    let by_key = pairs_by_key(pairs)?;
    let mut predictions = Vec::new();
    let mut models = Vec::new();
    let mut logs = Vec::new();
    let report = cross_validate(
        |fold, train, test| {
            let train = lookup(&by_key, train)?;
            let test = lookup(&by_key, test)?;
            let fold_cfg = ParticipationConfig {
                train: TrainConfig {
                    seed: cfg.train.seed.wrapping_add(fold as u64),
                    ..cfg.train.clone()
                },
                ..cfg.clone()
            };
            let (model, log) = train_baseline::<T>(kind, &train, features, challenges, &fold_cfg)?;
            let fold_predictions: Vec<Prediction> = test
                .iter()
                .map(|p| {
                    let (prob, decided) = model.predict(features, &p.user_id, &p.challenge_tag)?;
                    Ok(prediction(p, prob, decided, fold))
                })
                .collect::<Result<_>>()?;
            let report = MetricsReport::from_confusion(&pair_confusion(&fold_predictions)?);
            predictions.extend(fold_predictions);
            models.push(model);
            logs.push(log);
            Ok(report)
        },
        plan,
    )?;
    Ok(CvRun {
        report,
        predictions,
        models,
        logs,
    })
}
