//! Fixed-arity challenge and user representations built from learned video
//! embeddings.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Corpus, VideoRecord};
use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, Provenance};

/// Stand-in id for a mean-padding block.
pub const PAD_ID: &str = "<pad>";

pub fn challenge_key(tag: &str) -> String {
    format!("challenge:{tag}")
}

pub fn user_key(user_id: &str) -> String {
    format!("user:{user_id}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRepresentation {
    pub challenge_tag: String,
    pub vector: Vec<f32>,
    pub contributing_ids: Vec<String>,
    pub n_c: usize,
    pub padding_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRepresentation {
    pub user_id: String,
    pub vector: Vec<f32>,
    pub contributing_ids: Vec<String>,
    pub m_u: usize,
    pub padding_count: usize,
    pub excluded_ids: BTreeSet<String>,
}

/// How a user's videos are ordered from newest to oldest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recency {
    /// Later manifest lines are newer.
    #[default]
    ManifestOrder,
    /// Larger values of this extra manifest field are newer; ties and
    /// missing values fall back to manifest order.
    Field(String),
}

impl Recency {
    fn newest_first<'a>(&self, mut videos: Vec<&'a VideoRecord>) -> Vec<&'a VideoRecord> {
        videos.sort_by_key(|v| std::cmp::Reverse(v.ordinal));
        if let Recency::Field(name) = self {
            videos.sort_by(|a, b| compare_json(b.extra.get(name), a.extra.get(name)));
        }
        videos
    }
}

fn compare_json(a: Option<&Value>, b: Option<&Value>) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    match (a, b) {
        (Some(Value::Number(x)), Some(Value::Number(y))) => x
            .as_f64()
            .unwrap_or(f64::NAN)
            .total_cmp(&y.as_f64().unwrap_or(f64::NAN)),
        (Some(Value::String(x)), Some(Value::String(y))) => x.cmp(y),
        (Some(_), None) => Greater,
        (None, Some(_)) => Less,
        _ => Equal,
    }
}

/// Concatenates `blocks`, then appends their mean until there are `arity`
/// blocks. Returns the vector and the id list with [`PAD_ID`] for padding.
pub fn concat_with_padding(ids: &[String], blocks: &[&[f32]], arity: usize) -> Result<(Vec<f32>, Vec<String>)> {
    assert_eq!(ids.len(), blocks.len());
    let dim = blocks[0].len();
    if let Some((id, b)) = ids.iter().zip(blocks).find(|(_, b)| b.len() != dim) {
        return Err(Error::Consistency(format!(
            "embedding of {id:?} has width {}, expected {dim}",
            b.len()
        )));
    }
    let mut vector = Vec::with_capacity(arity * dim);
    for b in blocks {
        vector.extend_from_slice(b);
    }
    let mut contributing = ids.to_vec();
    if ids.len() < arity {
        let mut mean = vec![0f64; dim];
        for b in blocks {
            for (m, &v) in mean.iter_mut().zip(b.iter()) {
                *m += v as f64;
            }
        }
        let mean: Vec<f32> = mean.iter().map(|m| (m / blocks.len() as f64) as f32).collect();
        for _ in ids.len()..arity {
            vector.extend_from_slice(&mean);
            contributing.push(PAD_ID.to_string());
        }
    }
    Ok((vector, contributing))
}

fn concat_from_store(store: &EmbeddingStore, ids: &[String], arity: usize) -> Result<(Vec<f32>, Vec<String>)> {
    let blocks: Vec<&[f32]> = ids.iter().map(|id| store.require(id)).collect::<Result<_>>()?;
    concat_with_padding(ids, &blocks, arity)
}

fn reject_pad_ids(ids: &[String]) -> Result<()> {
    if ids.iter().any(|id| id == PAD_ID) {
        return Err(Error::Data(format!("video id {PAD_ID:?} is reserved")));
    }
    Ok(())
}

/// Picks `n_c` of the challenge's videos (all of them when there are fewer)
/// and concatenates their embeddings in video id order.
pub fn build_challenge_representation(
    tag: &str,
    video_ids: &[String],
    store: &EmbeddingStore,
    n_c: usize,
    seed: u64,
) -> Result<ChallengeRepresentation> {
    if n_c == 0 {
        return Err(Error::Config("n_c must be at least 1".into()));
    }
    if video_ids.is_empty() {
        return Err(Error::Data(format!("challenge {tag:?} has no videos")));
    }
    reject_pad_ids(video_ids)?;
    let mut pool: Vec<String> = video_ids.to_vec();
    pool.sort();
    pool.dedup();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(n_c);
    pool.sort();
    let (vector, contributing_ids) = concat_from_store(store, &pool, n_c)?;
    Ok(ChallengeRepresentation {
        challenge_tag: tag.to_string(),
        vector,
        padding_count: n_c - pool.len(),
        contributing_ids,
        n_c,
    })
}

/// The user's `m_u` newest videos outside `exclusion`, newest first, and
/// the excluded ones.
pub fn select_user_videos(
    user_id: &str,
    videos: &[&VideoRecord],
    m_u: usize,
    exclusion: &BTreeSet<String>,
    recency: &Recency,
) -> Result<(Vec<String>, BTreeSet<String>)> {
    if m_u == 0 {
        return Err(Error::Config("m_u must be at least 1".into()));
    }
    let mut excluded = BTreeSet::new();
    let mut kept = Vec::new();
    for v in recency.newest_first(videos.to_vec()) {
        if exclusion.contains(&v.video_id) {
            excluded.insert(v.video_id.clone());
        } else {
            kept.push(v.video_id.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "user {user_id:?} has no videos outside the exclusion set"
        )));
    }
    reject_pad_ids(&kept)?;
    kept.truncate(m_u);
    Ok((kept, excluded))
}

/// Concatenates the embeddings of the user's `m_u` newest videos outside
/// `exclusion`, newest first.
pub fn build_user_representation(
    user_id: &str,
    videos: &[&VideoRecord],
    store: &EmbeddingStore,
    m_u: usize,
    exclusion: &BTreeSet<String>,
    recency: &Recency,
) -> Result<UserRepresentation> {
    let (kept, excluded_ids) = select_user_videos(user_id, videos, m_u, exclusion, recency)?;
    let (vector, contributing_ids) = concat_from_store(store, &kept, m_u)?;
    Ok(UserRepresentation {
        user_id: user_id.to_string(),
        vector,
        padding_count: m_u - kept.len(),
        contributing_ids,
        m_u,
        excluded_ids,
    })
}

/// A user and challenge whose representations share videos.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub user_id: String,
    pub challenge_tag: String,
    pub shared_ids: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub overlaps: Vec<Overlap>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.overlaps.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_clean() {
            return Ok(());
        }
        Err(Error::Leakage(
            self.overlaps
                .iter()
                .map(|o| format!("{} / {}: {}", o.user_id, o.challenge_tag, o.shared_ids.join(",")))
                .collect(),
        ))
    }
}

/// Every (user, challenge) pair whose contributing videos intersect.
pub fn audit_no_leakage(users: &[UserRepresentation], challenges: &[ChallengeRepresentation]) -> LeakageReport {
    let challenge_sets: Vec<(&str, BTreeSet<&str>)> = challenges
        .iter()
        .map(|c| {
            let ids = c
                .contributing_ids
                .iter()
                .map(String::as_str)
                .filter(|&id| id != PAD_ID)
                .collect();
            (c.challenge_tag.as_str(), ids)
        })
        .collect();
    let mut overlaps = Vec::new();
    for u in users {
        let user_ids: BTreeSet<&str> = u
            .contributing_ids
            .iter()
            .map(String::as_str)
            .filter(|&id| id != PAD_ID)
            .collect();
        for (tag, ids) in &challenge_sets {
            let shared: Vec<String> = user_ids.intersection(ids).map(|s| s.to_string()).collect();
            if !shared.is_empty() {
                overlaps.push(Overlap {
                    user_id: u.user_id.clone(),
                    challenge_tag: tag.to_string(),
                    shared_ids: shared,
                });
            }
        }
    }
    LeakageReport { overlaps }
}

/// Representations for every challenge and every user of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    pub challenges: Vec<ChallengeRepresentation>,
    pub users: Vec<UserRepresentation>,
    /// Users whose every video is challenge-tagged.
    pub users_without_history: Vec<String>,
}

impl RepresentationSet {
    pub fn challenge(&self, tag: &str) -> Option<&ChallengeRepresentation> {
        self.challenges.iter().find(|c| c.challenge_tag == tag)
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRepresentation> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    pub fn audit(&self) -> LeakageReport {
        audit_no_leakage(&self.users, &self.challenges)
    }

    /// Appends every representation to `store` under its `challenge:` or
    /// `user:` key.
    pub fn write(&self, store: &mut EmbeddingStore, head_versions: &BTreeMap<&str, String>, seed: u64) -> Result<()> {
        for c in &self.challenges {
            let prov = provenance(json!({
                "head_version": head_versions.get("challenge"),
                "arity": c.n_c,
                "seed": seed,
                "padding_count": c.padding_count,
                "contributing_ids": c.contributing_ids,
            }));
            store.append(&challenge_key(&c.challenge_tag), &c.vector, prov)?;
        }
        for u in &self.users {
            let prov = provenance(json!({
                "head_version": head_versions.get("user"),
                "arity": u.m_u,
                "seed": seed,
                "padding_count": u.padding_count,
                "contributing_ids": u.contributing_ids,
                "excluded_ids": u.excluded_ids,
            }));
            store.append(&user_key(&u.user_id), &u.vector, prov)?;
        }
        Ok(())
    }

    /// Reads back a set written by [`RepresentationSet::write`].
    pub fn read(store: &EmbeddingStore, corpus: &Corpus) -> Result<Self> {
        let ids_of = |prov: &Provenance, field: &str| -> Result<Vec<String>> {
            Ok(serde_json::from_value(
                prov.get(field).cloned().unwrap_or(Value::Array(vec![])),
            )?)
        };
        let count_of = |prov: &Provenance, field: &str| prov.get(field).and_then(Value::as_u64).unwrap_or(0) as usize;
        let mut challenges = Vec::new();
        for tag in corpus.challenge_labels() {
            let key = challenge_key(tag);
            let Some(entry) = store.entry(&key) else { continue };
            challenges.push(ChallengeRepresentation {
                challenge_tag: tag.clone(),
                vector: store.require(&key)?.to_vec(),
                contributing_ids: ids_of(&entry.provenance, "contributing_ids")?,
                n_c: count_of(&entry.provenance, "arity"),
                padding_count: count_of(&entry.provenance, "padding_count"),
            });
        }
        let mut users = Vec::new();
        let mut users_without_history = Vec::new();
        for user in corpus.users() {
            let key = user_key(user);
            let Some(entry) = store.entry(&key) else {
                users_without_history.push(user.clone());
                continue;
            };
            users.push(UserRepresentation {
                user_id: user.clone(),
                vector: store.require(&key)?.to_vec(),
                contributing_ids: ids_of(&entry.provenance, "contributing_ids")?,
                m_u: count_of(&entry.provenance, "arity"),
                padding_count: count_of(&entry.provenance, "padding_count"),
                excluded_ids: ids_of(&entry.provenance, "excluded_ids")?.into_iter().collect(),
            });
        }
        Ok(RepresentationSet {
            challenges,
            users,
            users_without_history,
        })
    }
}

fn provenance(v: Value) -> Provenance {
    match v {
        Value::Object(map) => map,
        _ => unreachable!(),
    }
}

/// Settings for [`build_representations`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    pub n_c: usize,
    pub m_u: usize,
    pub recency: Recency,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            n_c: 16,
            m_u: 8,
            recency: Recency::ManifestOrder,
        }
    }
}

/// Builds representations for every challenge and user of `corpus`, with
/// all challenge-tagged videos excluded from user representations.
pub fn build_representations(
    corpus: &Corpus,
    challenge_store: &EmbeddingStore,
    user_store: &EmbeddingStore,
    cfg: &RepresentationConfig,
    seed: u64,
) -> Result<RepresentationSet> {
    let challenges = corpus
        .challenge_labels()
        .iter()
        .map(|tag| {
            let ids: Vec<String> = corpus.videos_with_tag(tag).map(|v| v.video_id.clone()).collect();
            build_challenge_representation(tag, &ids, challenge_store, cfg.n_c, seed)
        })
        .collect::<Result<_>>()?;
    let exclusion = corpus.challenge_video_ids();
    let mut users = Vec::new();
    let mut users_without_history = Vec::new();
    for user in corpus.users() {
        let videos = corpus.videos_of_user(user);
        if videos.iter().all(|v| exclusion.contains(&v.video_id)) {
            users_without_history.push(user.clone());
            continue;
        }
        users.push(build_user_representation(
            user,
            &videos,
            user_store,
            cfg.m_u,
            &exclusion,
            &cfg.recency,
        )?);
    }
    Ok(RepresentationSet {
        challenges,
        users,
        users_without_history,
    })
}
