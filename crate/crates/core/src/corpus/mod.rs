//! Video corpus data model and line-delimited manifest ingestion.
//!
//! A manifest is a UTF-8 file with one JSON object per line. An optional
//! first line with `"kind": "header"` declares the ordered challenge label
//! set; otherwise the label set is the sorted set of tags that occur. Every
//! other line is a [`VideoRecord`]. Fields this crate does not know about are
//! kept and written back unchanged.

mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use split::{make_folds, make_stratified_folds, split_train_test, FoldPlan};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, SyntheticCorpus};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One video of the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub schema_version: u32,
    pub video_id: String,
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge_tag: Option<String>,
    #[serde(default)]
    pub caption: String,
    /// Directory of numbered frames, relative to the manifest's directory
    /// unless absolute.
    pub frame_source: String,
    pub frame_count: usize,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
    /// Position in the manifest, used as the recency proxy.
    #[serde(skip)]
    pub ordinal: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
    kind: String,
    challenge_labels: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Immutable, validated set of videos.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    challenge_labels: Vec<String>,
    /// Sorted by `video_id`.
    videos: Vec<VideoRecord>,
    users: Vec<String>,
    root: PathBuf,
    header_extra: Option<BTreeMap<String, Value>>,
}

impl Corpus {
    /// Builds and validates a corpus. `root` is the directory relative frame
    /// sources resolve against.
    pub fn new(challenge_labels: Vec<String>, mut videos: Vec<VideoRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let labels: BTreeSet<&str> = challenge_labels.iter().map(String::as_str).collect();
        if labels.len() != challenge_labels.len() {
            return Err(Error::Config("challenge labels must be distinct".into()));
        }

        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let mut dups: Vec<String> = videos
            .windows(2)
            .filter(|w| w[0].video_id == w[1].video_id)
            .map(|w| w[0].video_id.clone())
            .collect();
        dups.dedup();
        if !dups.is_empty() {
            return Err(Error::Integrity {
                message: "duplicate video_id".into(),
                ids: dups,
            });
        }

        let unknown: Vec<String> = videos
            .iter()
            .filter(|v| matches!(&v.challenge_tag, Some(t) if !labels.contains(t.as_str())))
            .map(|v| v.video_id.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Integrity {
                message: "challenge_tag not in the challenge label set".into(),
                ids: unknown,
            });
        }

        let empty: Vec<String> = videos
            .iter()
            .filter(|v| v.frame_count == 0)
            .map(|v| v.video_id.clone())
            .collect();
        if !empty.is_empty() {
            return Err(Error::Integrity {
                message: "frame_count must be at least 1".into(),
                ids: empty,
            });
        }

        let users: BTreeSet<String> = videos.iter().map(|v| v.user_id.clone()).collect();
        Ok(Corpus {
            challenge_labels,
            videos,
            users: users.into_iter().collect(),
            root: root.into(),
            header_extra: None,
        })
    }

    pub fn challenge_labels(&self) -> &[String] {
        &self.challenge_labels
    }

    /// Videos in `video_id` order.
    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoRecord> {
        self.videos
            .binary_search_by(|v| v.video_id.as_str().cmp(video_id))
            .ok()
            .map(|i| &self.videos[i])
    }

    pub fn frame_dir(&self, video: &VideoRecord) -> PathBuf {
        let p = Path::new(&video.frame_source);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn videos_with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a VideoRecord> + 'a {
        self.videos
            .iter()
            .filter(move |v| v.challenge_tag.as_deref() == Some(tag))
    }

    /// A user's videos, oldest first (manifest order).
    pub fn videos_of_user(&self, user_id: &str) -> Vec<&VideoRecord> {
        let mut out: Vec<&VideoRecord> = self.videos.iter().filter(|v| v.user_id == user_id).collect();
        out.sort_by_key(|v| v.ordinal);
        out
    }

    /// Ids of every challenge-tagged video; these never feed a user representation.
    pub fn challenge_video_ids(&self) -> BTreeSet<String> {
        self.videos
            .iter()
            .filter(|v| v.challenge_tag.is_some())
            .map(|v| v.video_id.clone())
            .collect()
    }

    /// Per challenge label, the number of tagged videos.
    pub fn counts_per_challenge(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.challenge_labels.iter().map(|l| (l.clone(), 0)).collect();
        for v in &self.videos {
            if let Some(t) = &v.challenge_tag {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        counts
    }

    pub fn counts_per_user(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for v in &self.videos {
            *counts.entry(v.user_id.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Checks that every frame source exists and holds exactly `frame_count`
    /// numbered frames.
    pub fn verify_frame_sources(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut miscounted = Vec::new();
        for v in &self.videos {
            let dir = self.frame_dir(v);
            match count_frames(&dir) {
                Ok(n) if n == v.frame_count => {}
                Ok(_) => miscounted.push(v.video_id.clone()),
                Err(_) => missing.push(v.video_id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Integrity {
                message: "missing frame_source".into(),
                ids: missing,
            });
        }
        if !miscounted.is_empty() {
            return Err(Error::Integrity {
                message: "frame_count does not match the frames on disk".into(),
                ids: miscounted,
            });
        }
        Ok(())
    }

    /// Writes the manifest in manifest order, header first.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            kind: "header".into(),
            challenge_labels: self.challenge_labels.clone(),
            extra: self.header_extra.clone().unwrap_or_default(),
        };
        let mut lines = vec![serde_json::to_string(&header)?];
        let mut ordered: Vec<&VideoRecord> = self.videos.iter().collect();
        ordered.sort_by_key(|v| v.ordinal);
        for v in ordered {
            lines.push(serde_json::to_string(v)?);
        }
        for line in lines {
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Number of frame images named `NNNNNN.<ext>` in `dir`.
pub fn count_frames(dir: &Path) -> std::io::Result<usize> {
    Ok(frame_paths(dir)?.len())
}

/// Frame image paths of a frame directory in temporal order.
pub fn frame_paths(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"));
        if is_image && !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = stem.parse::<u64>() {
                paths.push((n, path));
            }
        }
    }
    paths.sort();
    Ok(paths.into_iter().map(|(_, p)| p).collect())
}

/// Zero-padded frame file name for frame `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Loads and validates a manifest, including its frame sources.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut header: Option<ManifestHeader> = None;
    let mut videos = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err("missing schema_version".into()))?;
        if version != u64::from(MANIFEST_SCHEMA_VERSION) {
            return Err(parse_err(format!("unsupported schema_version {version}")));
        }
        if value.get("kind").and_then(Value::as_str) == Some("header") {
            if header.is_some() || !videos.is_empty() {
                return Err(parse_err("header must be the first record".into()));
            }
            header = Some(serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?);
            continue;
        }
        let mut record: VideoRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        record.ordinal = videos.len();
        videos.push(record);
    }

    let (labels, header_extra) = match header {
        Some(h) => {
            let extra = (!h.extra.is_empty()).then_some(h.extra);
            (h.challenge_labels, extra)
        }
        None => {
            let tags: BTreeSet<String> = videos.iter().filter_map(|v| v.challenge_tag.clone()).collect();
            (tags.into_iter().collect(), None)
        }
    };
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut corpus = Corpus::new(labels, videos, root)?;
    corpus.header_extra = header_extra;
    corpus.verify_frame_sources()?;
    Ok(corpus)
}
