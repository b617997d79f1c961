//! Run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticConfig;
use crate::encoding::{
    caption_backend, visual_backend, EncodeConfig, PreprocessConfig, Truncation, TOY_CAPTION, TOY_VISUAL_A,
    TOY_VISUAL_B,
};
use crate::error::{Error, Result};
use crate::features::Modality;
use crate::participation::ParticipationConfig;
use crate::provenance::hash_json;
use crate::representations::RepresentationConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Defaults to `<out_dir>/corpus/manifest.jsonl`, where `synth` writes.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            manifest: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Visual backbone for the challenge task.
    pub challenge_backbone: String,
    /// Visual backbone for the user task.
    pub user_backbone: String,
    pub caption_encoder: String,
    pub frames: usize,
    pub preprocess: PreprocessConfig,
    pub truncation: Truncation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let e = EncodeConfig::default();
        EncoderConfig {
            challenge_backbone: TOY_VISUAL_A.into(),
            user_backbone: TOY_VISUAL_B.into(),
            caption_encoder: TOY_CAPTION.into(),
            frames: e.frames,
            preprocess: e.preprocess,
            truncation: e.truncation,
        }
    }
}

impl EncoderConfig {
    pub fn encode_config(&self) -> EncodeConfig {
        EncodeConfig {
            frames: self.frames,
            preprocess: self.preprocess.clone(),
            truncation: self.truncation,
        }
    }

    /// Distinct visual backbones, challenge backbone first.
    pub fn backbones(&self) -> Vec<String> {
        let mut out = vec![self.challenge_backbone.clone()];
        if self.user_backbone != self.challenge_backbone {
            out.push(self.user_backbone.clone());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    /// Features of the head whose embeddings feed the representations.
    pub modality: Modality,
    pub train: TrainConfig,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            modality: Modality::VisualText,
            train: TrainConfig::default(),
        }
    }
}

/// Everything a run depends on. Seeds inside the training sections are
/// replaced by values derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub folds: usize,
    /// Share of labelled videos used to train the embedding heads.
    pub train_fraction: f64,
    pub paths: PathsConfig,
    pub encoder: EncoderConfig,
    pub proxy_challenge: ProxyConfig,
    pub proxy_user: ProxyConfig,
    pub representations: RepresentationConfig,
    pub participation: ParticipationConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            folds: 3,
            train_fraction: 0.8,
            paths: PathsConfig::default(),
            encoder: EncoderConfig::default(),
            proxy_challenge: ProxyConfig::default(),
            proxy_user: ProxyConfig::default(),
            representations: RepresentationConfig::default(),
            participation: ParticipationConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} is outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.representations.n_c == 0 || self.representations.m_u == 0 {
            return Err(Error::Config("n_c and m_u must be positive".into()));
        }
        if self.encoder.frames == 0 {
            return Err(Error::Config("encoder.frames must be positive".into()));
        }
        self.encoder.preprocess.validate()?;
        self.proxy_challenge.train.validate()?;
        self.proxy_user.train.validate()?;
        self.participation.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    /// Resolves every backend id, so unknown or unavailable backends fail
    /// before any work starts.
    pub fn check_backends(&self) -> Result<()> {
        for id in self.encoder.backbones() {
            visual_backend(&id)?;
        }
        caption_backend(&self.encoder.caption_encoder)?;
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out_dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("corpus").join("manifest.jsonl"))
    }

    /// Hash of everything except file locations.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        value.as_object_mut().expect("struct").remove("paths");
        hash_json(&value)
    }
}
