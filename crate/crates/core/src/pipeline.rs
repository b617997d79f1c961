//! The staged pipeline. Each stage reads its predecessor's outputs from the
//! run directory, checks their provenance and writes its own outputs plus a
//! `stage.json` record:
//!
//! | stage                 | directory        |
//! |-----------------------|------------------|
//! | `encode`              | `embeddings/`    |
//! | `train-proxy`         | `proxy/`         |
//! | `build-reprs`         | `reprs/`         |
//! | `train-participation` | `participation/` |
//! | `evaluate`            | `evaluation/`    |
//! | `report`              | `report/`        |
//!
//! A stage record holds the config hash, the hashes of its inputs and the
//! hash of every file it wrote, with paths relative to the run directory.
//! Seeds are derived from the top-level seed with [`derive_seed`] under the
//! stage names listed in the README.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use walkdir::WalkDir;

use crate::config::RunConfig;
use crate::corpus::{
    generate_synthetic_corpus, load_manifest, make_stratified_folds, split_train_test, Corpus, FoldPlan,
};
use crate::encoding::{caption_backend, encode_corpus, visual_backend};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, Modality};
use crate::metrics::{cross_validate, render_report, MetricsReport, ReportSection, TableLayout};
use crate::participation::{
    baseline_user_features, build_pairs, pair_confusion, predict, run_baseline, train_participation, BaselineKind,
    ParticipationConfig, ParticipationModel, ParticipationPair, Prediction,
};
use crate::provenance::{derive_seed, hash_file};
use crate::proxy::{
    evaluate_proxy, extract_learned_embeddings, proxy_accuracy, train_proxy, ProxyHead, ProxyLabels, ProxyTask,
};
use crate::representations::{build_representations, RepresentationSet};
use crate::store::{EmbeddingStore, Provenance};
use crate::train::TrainConfig;

pub const STAGE_FILE: &str = "stage.json";
pub const MODEL_NAME: &str = "deepChallenger";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Encode,
    TrainProxy,
    BuildReprs,
    TrainParticipation,
    Evaluate,
    Report,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Encode => "encode",
            Stage::TrainProxy => "train-proxy",
            Stage::BuildReprs => "build-reprs",
            Stage::TrainParticipation => "train-participation",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            Stage::Encode => "embeddings",
            Stage::TrainProxy => "proxy",
            Stage::BuildReprs => "reprs",
            Stage::TrainParticipation => "participation",
            Stage::Evaluate => "evaluation",
            Stage::Report => "report",
        }
    }

    fn previous(self) -> Option<Stage> {
        match self {
            Stage::Encode => None,
            Stage::TrainProxy => Some(Stage::Encode),
            Stage::BuildReprs => Some(Stage::TrainProxy),
            Stage::TrainParticipation => Some(Stage::BuildReprs),
            Stage::Evaluate => Some(Stage::TrainParticipation),
            Stage::Report => Some(Stage::Evaluate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Which baselines `evaluate` runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum BaselineSelection {
    #[default]
    None,
    All,
    /// Baseline names, compared with whitespace removed.
    Named(Vec<String>),
}

impl std::str::FromStr for BaselineSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(BaselineSelection::None),
            "all" => Ok(BaselineSelection::All),
            list => Ok(BaselineSelection::Named(
                list.split(',').map(|n| n.trim().to_string()).collect(),
            )),
        }
    }
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<S: DeserializeOwned>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_jsonl<S: Serialize>(path: &Path, items: &[S]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<S: DeserializeOwned>(path: &Path) -> Result<Vec<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn files_under(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(dir, e.into()))?;
        if entry.file_type().is_file() && entry.file_name() != STAGE_FILE {
            out.push(entry.path().strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn rel_key(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn model_name(backbone: &str, modality: Modality, caption: &str) -> String {
    BaselineKind {
        backbone_id: backbone.to_string(),
        caption_encoder_id: (modality == Modality::VisualText).then(|| caption.to_string()),
    }
    .name()
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSection {
    pub title: Option<String>,
    pub rows: Vec<TableRow>,
}

impl TableSection {
    fn render_input(&self) -> ReportSection {
        ReportSection {
            title: self.title.clone(),
            rows: self.rows.iter().map(|r| (r.name.clone(), r.report.triple())).collect(),
        }
    }
}

/// Held-out result of an embedding head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub task: ProxyTask,
    pub backbone: String,
    pub modality: Modality,
    pub train_videos: usize,
    pub test_videos: usize,
    pub accuracy: Option<f64>,
    pub report: Option<MetricsReport>,
    pub head_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyResults {
    pub sections: Vec<TableSection>,
    pub holdout: Vec<Holdout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub videos: usize,
    pub users: usize,
    pub challenges: usize,
    pub per_challenge: BTreeMap<String, usize>,
    pub per_user: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub backbone: String,
    pub encoded: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditFile {
    pub clean: bool,
    pub overlaps: Vec<crate::representations::Overlap>,
    pub users_without_history: Vec<String>,
    pub challenges: usize,
    pub users: usize,
}

pub fn ingest(manifest: &Path) -> Result<IngestSummary> {
    let corpus = load_manifest(manifest)?;
    corpus.verify_frame_sources()?;
    Ok(IngestSummary {
        videos: corpus.videos().len(),
        users: corpus.users().len(),
        challenges: corpus.challenge_labels().len(),
        per_challenge: corpus.counts_per_challenge(),
        per_user: corpus.counts_per_user(),
    })
}

/// A run directory bound to one configuration.
pub struct Run {
    cfg: RunConfig,
    out: PathBuf,
    hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        let out = cfg.out_dir().to_path_buf();
        Ok(Run { cfg, out, hash })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir())
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.cfg.seed, stage)
    }

    /// Empties a stage directory before the stage rewrites it.
    fn reset(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn record(&self, stage: Stage, inputs: BTreeMap<String, String>) -> Result<StageRecord> {
        let mut files = Vec::new();
        files_under(&self.out, &self.stage_dir(stage), &mut files)?;
        let outputs = files
            .iter()
            .map(|rel| Ok((rel_key(rel), hash_file(&self.out.join(rel))?)))
            .collect::<Result<_>>()?;
        let record = StageRecord {
            stage: stage.command().to_string(),
            config_hash: self.hash.clone(),
            inputs,
            outputs,
        };
        write_json(&self.stage_dir(stage).join(STAGE_FILE), &record)?;
        Ok(record)
    }

    fn stage_inputs(&self, previous: Stage, prev_record: &StageRecord) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        let key = format!("{}/{STAGE_FILE}", previous.dir());
        inputs.insert(key, hash_file(&self.stage_dir(previous).join(STAGE_FILE))?);
        if let Some(m) = prev_record.inputs.get("manifest") {
            inputs.insert("manifest".into(), m.clone());
        }
        Ok(inputs)
    }

    /// Checks that `stage` ran with this configuration, that its outputs are
    /// unchanged and that the same holds for every stage before it.
    pub fn require(&self, stage: Stage) -> Result<StageRecord> {
        let fail = |message: String| Error::Provenance {
            message,
            required: stage.command().to_string(),
        };
        let path = self.stage_dir(stage).join(STAGE_FILE);
        if !path.exists() {
            return Err(fail(format!(
                "no {} outputs in {}",
                stage.command(),
                self.out.display()
            )));
        }
        let record: StageRecord = read_json(&path)?;
        if record.config_hash != self.hash {
            return Err(fail(format!(
                "{} outputs were produced with a different configuration",
                stage.command()
            )));
        }
        for (rel, expected) in &record.outputs {
            let file = self.out.join(rel);
            if !file.exists() || &hash_file(&file)? != expected {
                return Err(fail(format!("{rel} changed after {} ran", stage.command())));
            }
        }
        if let Some(previous) = stage.previous() {
            let prev = self.require(previous)?;
            let key = format!("{}/{STAGE_FILE}", previous.dir());
            let current = hash_file(&self.stage_dir(previous).join(STAGE_FILE))?;
            if record.inputs.get(&key) != Some(&current) || record.inputs.get("manifest") != prev.inputs.get("manifest")
            {
                return Err(fail(format!(
                    "{} outputs were built from other {} outputs",
                    stage.command(),
                    previous.command()
                )));
            }
        }
        Ok(record)
    }

    /// Loads the manifest and checks it is the one the encode stage saw.
    fn corpus(&self, encode: &StageRecord) -> Result<Corpus> {
        let path = self.cfg.manifest_path();
        let hash = hash_file(&path)?;
        if encode.inputs.get("manifest") != Some(&hash) {
            return Err(Error::Provenance {
                message: format!("{} changed after encode ran", path.display()),
                required: Stage::Encode.command().into(),
            });
        }
        load_manifest(&path)
    }

    fn raw_store(&self, backbone: &str) -> Result<EmbeddingStore> {
        EmbeddingStore::open_existing(&self.stage_dir(Stage::Encode).join(backbone))
    }

    /// Writes the synthetic corpus described by the `[synthetic]` section.
    pub fn synth(&self) -> Result<PathBuf> {
        let manifest = self.cfg.manifest_path();
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let generated = generate_synthetic_corpus(&self.cfg.synthetic, &dir)?;
        if generated.manifest_path != manifest {
            fs::rename(&generated.manifest_path, &manifest).map_err(|e| Error::io(&manifest, e))?;
        }
        Ok(manifest)
    }

    pub fn encode(&self) -> Result<Vec<EncodeReport>> {
        self.cfg.check_backends()?;
        let manifest = self.cfg.manifest_path();
        let corpus = load_manifest(&manifest)?;
        corpus.verify_frame_sources()?;
        let caption = caption_backend(&self.cfg.encoder.caption_encoder)?;
        let encode_cfg = self.cfg.encoder.encode_config();
        let mut reports = Vec::new();
        let mut failed = Vec::new();
        for backbone in self.cfg.encoder.backbones() {
            let visual = visual_backend(&backbone)?;
            let mut store = EmbeddingStore::open(&self.stage_dir(Stage::Encode).join(&backbone))?;
            let summary = encode_corpus(&corpus, visual.as_ref(), caption.as_ref(), &encode_cfg, &mut store)?;
            failed.extend(summary.failed.iter().map(|(id, e)| format!("{id} ({backbone}): {e}")));
            reports.push(EncodeReport {
                backbone,
                encoded: summary.encoded,
                skipped: summary.skipped,
            });
        }
        if !failed.is_empty() {
            return Err(Error::Integrity {
                message: "videos failed to encode".into(),
                ids: failed,
            });
        }
        let mut inputs = BTreeMap::new();
        inputs.insert("manifest".to_string(), hash_file(&manifest)?);
        self.record(Stage::Encode, inputs)?;
        Ok(reports)
    }

    fn proxy_train_config(&self, task: ProxyTask, stage: &str) -> TrainConfig {
        let base = match task {
            ProxyTask::Challenge => &self.cfg.proxy_challenge.train,
            ProxyTask::User => &self.cfg.proxy_user.train,
        };
        TrainConfig {
            seed: self.seed(stage),
            ..base.clone()
        }
    }

    pub fn train_proxy(&self) -> Result<ProxyResults> {
        let encode = self.require(Stage::Encode)?;
        let corpus = self.corpus(&encode)?;
        let inputs = self.stage_inputs(Stage::Encode, &encode)?;
        let dir = self.reset(Stage::TrainProxy)?;
        let enc = &self.cfg.encoder;
        let stores: BTreeMap<String, EmbeddingStore> = enc
            .backbones()
            .into_iter()
            .map(|b| Ok((b.clone(), self.raw_store(&b)?)))
            .collect::<Result<_>>()?;

        let mut sections = Vec::new();
        let mut holdout = Vec::new();
        for task in [ProxyTask::Challenge, ProxyTask::User] {
            let name = task.name();
            let labels = match task {
                ProxyTask::Challenge => ProxyLabels::challenges(&corpus),
                ProxyTask::User => ProxyLabels::users(&corpus),
            };
            let ids = labels.ids();
            let strata: Vec<(String, String)> = ids
                .iter()
                .map(|id| (id.clone(), format!("{:08}", labels.assignments[id])))
                .collect();
            let plan = make_stratified_folds(&strata, self.cfg.folds, self.seed(&format!("proxy/{name}/folds")))?;

            let mut rows = Vec::new();
            for backbone in enc.backbones() {
                for modality in [Modality::Visual, Modality::VisualText] {
                    let source = FeatureSource::new(&stores[&backbone], modality);
                    let tag = format!("proxy/{name}/{backbone}/{modality:?}");
                    let report = cross_validate(
                        |fold, train, test| {
                            let tc = self.proxy_train_config(task, &format!("{tag}/fold{fold}"));
                            let (head, _) = train_proxy::<f32>(&source, &labels, train, task, &tc, &self.hash)?;
                            evaluate_proxy(&head, &source, &labels, test)
                        },
                        &plan,
                    )?;
                    rows.push(TableRow {
                        name: model_name(&backbone, modality, &enc.caption_encoder),
                        report,
                    });
                }
            }
            let title = match task {
                ProxyTask::Challenge => "Challenge Representation Learning",
                ProxyTask::User => "User Representation Learning",
            };
            sections.push(TableSection {
                title: Some(title.into()),
                rows,
            });

            // the head whose hidden layer feeds the representations
            let (backbone, modality) = match task {
                ProxyTask::Challenge => (&enc.challenge_backbone, self.cfg.proxy_challenge.modality),
                ProxyTask::User => (&enc.user_backbone, self.cfg.proxy_user.modality),
            };
            let source = FeatureSource::new(&stores[backbone], modality);
            let (train_ids, test_ids) =
                split_train_test(&ids, self.cfg.train_fraction, self.seed(&format!("proxy/{name}/split")))?;
            let tc = self.proxy_train_config(task, &format!("proxy/{name}/head"));
            let (head, log) = train_proxy::<f32>(&source, &labels, &train_ids, task, &tc, &self.hash)?;
            head.save(&dir.join(format!("{name}.head.json")))?;
            log.write_jsonl(&dir.join(format!("{name}.trainlog.jsonl")))?;
            let (accuracy, report) = if test_ids.is_empty() {
                (None, None)
            } else {
                (
                    Some(proxy_accuracy(&head, &source, &labels, &test_ids)?),
                    Some(evaluate_proxy(&head, &source, &labels, &test_ids)?),
                )
            };
            let head_version = head.version()?;
            holdout.push(Holdout {
                task,
                backbone: backbone.clone(),
                modality,
                train_videos: train_ids.len(),
                test_videos: test_ids.len(),
                accuracy,
                report,
                head_version: head_version.clone(),
            });

            let embed_ids: Vec<String> = match task {
                ProxyTask::Challenge => corpus.challenge_video_ids().into_iter().collect(),
                ProxyTask::User => ids.clone(),
            };
            let mut learned = EmbeddingStore::create_fresh(&dir.join("learned").join(name))?;
            let mut prov = Provenance::new();
            prov.insert("task".into(), json!(name));
            prov.insert("head_version".into(), json!(head_version));
            for e in extract_learned_embeddings(&head, &source, &embed_ids)? {
                learned.append(&e.video_id, &e.vector, prov.clone())?;
            }
        }
        let results = ProxyResults { sections, holdout };
        write_json(&dir.join("table1.json"), &results)?;
        self.record(Stage::TrainProxy, inputs)?;
        Ok(results)
    }

    pub fn build_reprs(&self) -> Result<AuditFile> {
        let proxy = self.require(Stage::TrainProxy)?;
        let encode = self.require(Stage::Encode)?;
        let corpus = self.corpus(&encode)?;
        let inputs = self.stage_inputs(Stage::TrainProxy, &proxy)?;
        let proxy_dir = self.stage_dir(Stage::TrainProxy);
        let challenge_store = EmbeddingStore::open_existing(&proxy_dir.join("learned").join("challenge"))?;
        let user_store = EmbeddingStore::open_existing(&proxy_dir.join("learned").join("user"))?;
        let results: ProxyResults = read_json(&proxy_dir.join("table1.json"))?;

        let dir = self.reset(Stage::BuildReprs)?;
        let seed = self.seed("representations");
        let set = build_representations(&corpus, &challenge_store, &user_store, &self.cfg.representations, seed)?;
        let versions: BTreeMap<&str, String> = results
            .holdout
            .iter()
            .map(|h| (h.task.name(), h.head_version.clone()))
            .collect();
        let mut store = EmbeddingStore::create_fresh(&dir.join("store"))?;
        set.write(&mut store, &versions, seed)?;
        let report = set.audit();
        let audit = AuditFile {
            clean: report.is_clean(),
            overlaps: report.overlaps.clone(),
            users_without_history: set.users_without_history.clone(),
            challenges: set.challenges.len(),
            users: set.users.len(),
        };
        write_json(&dir.join("audit.json"), &audit)?;
        report.into_result()?;
        self.record(Stage::BuildReprs, inputs)?;
        Ok(audit)
    }

    fn representations(&self, corpus: &Corpus) -> Result<RepresentationSet> {
        let store = EmbeddingStore::open_existing(&self.stage_dir(Stage::BuildReprs).join("store"))?;
        RepresentationSet::read(&store, corpus)
    }

    fn participation_config(&self, stage: &str) -> ParticipationConfig {
        let base = &self.cfg.participation;
        ParticipationConfig {
            train: TrainConfig {
                seed: self.seed(stage),
                ..base.train.clone()
            },
            ..base.clone()
        }
    }

    /// Trains one participation head per fold.
    pub fn train_participation(&self) -> Result<Vec<(usize, usize)>> {
        let reprs_record = self.require(Stage::BuildReprs)?;
        let encode = self.require(Stage::Encode)?;
        let corpus = self.corpus(&encode)?;
        let inputs = self.stage_inputs(Stage::BuildReprs, &reprs_record)?;
        let reprs = self.representations(&corpus)?;
        let dir = self.reset(Stage::TrainParticipation)?;

        let pairs: Vec<ParticipationPair> = build_pairs(&corpus, corpus.challenge_labels())?
            .into_iter()
            .filter(|p| reprs.user(&p.user_id).is_some())
            .collect();
        write_jsonl(&dir.join("pairs.jsonl"), &pairs)?;
        let strata: Vec<(String, String)> = pairs.iter().map(|p| (p.key(), p.label.to_string())).collect();
        let plan = make_stratified_folds(&strata, self.cfg.folds, self.seed("participation/folds"))?;
        write_json(&dir.join("folds.json"), &plan)?;

        let by_key: BTreeMap<String, &ParticipationPair> = pairs.iter().map(|p| (p.key(), p)).collect();
        let mut sizes = Vec::new();
        for fold in 0..plan.k {
            let train: Vec<&ParticipationPair> = plan.complement(fold).iter().map(|k| by_key[k]).collect();
            let cfg = self.participation_config(&format!("participation/fold{fold}"));
            let (model, log) =
                train_participation::<f32>(&train, &reprs, &cfg, &self.hash).map_err(|e| Error::Fold {
                    fold,
                    source: Box::new(e),
                })?;
            model.save(&dir.join(format!("fold{fold}.head.json")))?;
            log.write_jsonl(&dir.join(format!("fold{fold}.trainlog.jsonl")))?;
            sizes.push((train.len(), plan.fold(fold).len()));
        }
        self.record(Stage::TrainParticipation, inputs)?;
        Ok(sizes)
    }

    fn baseline_kinds(&self, selection: &BaselineSelection) -> Result<Vec<BaselineKind>> {
        let enc = &self.cfg.encoder;
        let all: Vec<BaselineKind> = enc
            .backbones()
            .into_iter()
            .flat_map(|b| {
                [None, Some(enc.caption_encoder.clone())].map(|caption_encoder_id| BaselineKind {
                    backbone_id: b.clone(),
                    caption_encoder_id,
                })
            })
            .collect();
        match selection {
            BaselineSelection::None => Ok(Vec::new()),
            BaselineSelection::All => Ok(all),
            BaselineSelection::Named(names) => names
                .iter()
                .map(|n| {
                    all.iter()
                        .find(|k| squash(&k.name()) == squash(n))
                        .cloned()
                        .ok_or_else(|| {
                            let known: Vec<String> = all.iter().map(BaselineKind::name).collect();
                            Error::Config(format!("unknown baseline {n:?}; known: {}", known.join(", ")))
                        })
                })
                .collect(),
        }
    }

    /// Predicts every held-out pair with its fold's head and runs the
    /// selected baselines over the same folds.
    pub fn evaluate(&self, baselines: &BaselineSelection) -> Result<TableSection> {
        let kinds = self.baseline_kinds(baselines)?;
        let part = self.require(Stage::TrainParticipation)?;
        let encode = self.require(Stage::Encode)?;
        let corpus = self.corpus(&encode)?;
        let inputs = self.stage_inputs(Stage::TrainParticipation, &part)?;
        let reprs = self.representations(&corpus)?;
        let part_dir = self.stage_dir(Stage::TrainParticipation);
        let pairs: Vec<ParticipationPair> = read_jsonl(&part_dir.join("pairs.jsonl"))?;
        let plan: FoldPlan = read_json(&part_dir.join("folds.json"))?;
        let by_key: BTreeMap<String, &ParticipationPair> = pairs.iter().map(|p| (p.key(), p)).collect();
        let dir = self.reset(Stage::Evaluate)?;

        let mut rows = Vec::new();
        for kind in &kinds {
            let store = self.raw_store(&kind.backbone_id)?;
            let modality = if kind.caption_encoder_id.is_some() {
                Modality::VisualText
            } else {
                Modality::Visual
            };
            let source = FeatureSource::new(&store, modality);
            let features = baseline_user_features(
                &corpus,
                &source,
                self.cfg.representations.m_u,
                &self.cfg.representations.recency,
            )?;
            let name = kind.name();
            let cfg = self.participation_config(&format!("baseline/{}", squash(&name)));
            let run = run_baseline::<f32>(kind, &pairs, &features, corpus.challenge_labels(), &cfg, &plan)?;
            let mut predictions = run.predictions;
            predictions
                .sort_by(|a, b| (a.fold, &a.user_id, &a.challenge_tag).cmp(&(b.fold, &b.user_id, &b.challenge_tag)));
            fs::create_dir_all(dir.join("baselines")).map_err(|e| Error::io(&dir, e))?;
            write_jsonl(
                &dir.join("baselines")
                    .join(format!("{}.predictions.jsonl", squash(&name))),
                &predictions,
            )?;
            rows.push(TableRow {
                name,
                report: run.report,
            });
        }

        let mut predictions: Vec<Prediction> = Vec::new();
        let report = cross_validate(
            |fold, _train, test| {
                let path = part_dir.join(format!("fold{fold}.head.json"));
                let model = ParticipationModel::<f32>::load(&path, None)?;
                let mut fold_predictions = Vec::with_capacity(test.len());
                for key in test {
                    let p = by_key.get(key).ok_or_else(|| Error::Lookup(key.clone()))?;
                    let (probability, decided) = predict(&model, &p.user_id, &p.challenge_tag, &reprs)?;
                    fold_predictions.push(Prediction {
                        user_id: p.user_id.clone(),
                        challenge_tag: p.challenge_tag.clone(),
                        probability,
                        label: decided as u8,
                        fold,
                        truth: p.label as u8,
                    });
                }
                let report = MetricsReport::from_confusion(&pair_confusion(&fold_predictions)?);
                predictions.extend(fold_predictions);
                Ok(report)
            },
            &plan,
        )?;
        predictions.sort_by(|a, b| (a.fold, &a.user_id, &a.challenge_tag).cmp(&(b.fold, &b.user_id, &b.challenge_tag)));
        write_jsonl(&dir.join("predictions.jsonl"), &predictions)?;
        rows.push(TableRow {
            name: MODEL_NAME.into(),
            report,
        });

        let section = TableSection { title: None, rows };
        write_json(&dir.join("table2.json"), &section)?;
        self.record(Stage::Evaluate, inputs)?;
        Ok(section)
    }

    /// Renders both tables from the proxy and evaluation outputs.
    pub fn report(&self) -> Result<(String, String)> {
        let eval = self.require(Stage::Evaluate)?;
        let inputs = self.stage_inputs(Stage::Evaluate, &eval)?;
        let proxy: ProxyResults = read_json(&self.stage_dir(Stage::TrainProxy).join("table1.json"))?;
        let main: TableSection = read_json(&self.stage_dir(Stage::Evaluate).join("table2.json"))?;
        let table1 = render_report(
            &proxy
                .sections
                .iter()
                .map(TableSection::render_input)
                .collect::<Vec<_>>(),
            TableLayout::ProxyTable,
        )?;
        let table2 = render_report(&[main.render_input()], TableLayout::ParticipationTable)?;

        let dir = self.reset(Stage::Report)?;
        fs::write(dir.join("table1.txt"), &table1).map_err(|e| Error::io(&dir, e))?;
        fs::write(dir.join("table2.txt"), &table2).map_err(|e| Error::io(&dir, e))?;
        let report: Value = json!({
            "config_hash": self.hash,
            "table1": proxy,
            "table2": main,
        });
        write_json(&dir.join("report.json"), &report)?;
        self.record(Stage::Report, inputs)?;
        Ok((table1, table2))
    }

    /// Every stage from `encode` to `report`.
    pub fn run_all(&self, baselines: &BaselineSelection) -> Result<(String, String)> {
        self.encode()?;
        self.train_proxy()?;
        self.build_reprs()?;
        self.train_participation()?;
        self.evaluate(baselines)?;
        self.report()
    }
}

/// Loads a proxy head written by `train-proxy`.
pub fn load_proxy_head(run: &Run, task: ProxyTask) -> Result<ProxyHead<f32>> {
    ProxyHead::load(
        &run.path(Stage::TrainProxy.dir())
            .join(format!("{}.head.json", task.name())),
        None,
    )
}
