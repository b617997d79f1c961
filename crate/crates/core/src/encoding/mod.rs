//! Raw multimodal video embeddings: sampled frames through a visual backbone,
//! the caption through a sequence encoder, concatenated visual first.

mod backend;
mod frames;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, Provenance};

pub use backend::{
    caption_backend, visual_backend, CaptionBackend, ToyCaptionBackend, ToyVisualBackend, Truncation, VisualBackend,
    TOY_CAPTION, TOY_VISUAL_A, TOY_VISUAL_B,
};
pub use frames::{
    load_frame, preprocess_frame, sample_frames, sample_indices, FrameSequence, NormalizedFrame, PreprocessConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub struct VisualEmbedding {
    pub video_id: String,
    pub backbone_id: String,
    pub frame_dim: usize,
    /// `F * frame_dim` values, frame blocks in temporal order.
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionEmbedding {
    pub video_id: String,
    pub encoder_id: String,
    pub token_count: usize,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawVideoEmbedding {
    pub video_id: String,
    pub backbone_id: String,
    pub encoder_id: String,
    pub frames: usize,
    pub frame_dim: usize,
    pub caption_dim: usize,
    pub vector: Vec<f32>,
}

pub fn encode_visual(seq: &FrameSequence, backend: &dyn VisualBackend) -> Result<VisualEmbedding> {
    let d_f = backend.frame_dim();
    let mut vector = Vec::with_capacity(seq.frames.len() * d_f);
    for (i, frame) in seq.frames.iter().enumerate() {
        let block = backend.encode_frame(frame).map_err(|message| Error::Encoding {
            video_id: seq.source_video_id.clone(),
            frame_index: i,
            message,
        })?;
        if block.len() != d_f {
            return Err(Error::Encoding {
                video_id: seq.source_video_id.clone(),
                frame_index: i,
                message: format!("backend returned {} values, declared {d_f}", block.len()),
            });
        }
        vector.extend(block);
    }
    Ok(VisualEmbedding {
        video_id: seq.source_video_id.clone(),
        backbone_id: backend.id().to_string(),
        frame_dim: d_f,
        vector,
    })
}

pub fn encode_caption(
    video_id: &str,
    caption: &str,
    backend: &dyn CaptionBackend,
    truncation: Truncation,
) -> CaptionEmbedding {
    let tokens = truncation.apply(backend.tokenize(caption), backend.max_tokens());
    CaptionEmbedding {
        video_id: video_id.to_string(),
        encoder_id: backend.id().to_string(),
        token_count: tokens.len(),
        vector: backend.summarize(&tokens),
    }
}

pub fn assemble_video_embedding(visual: VisualEmbedding, caption: CaptionEmbedding) -> Result<RawVideoEmbedding> {
    if visual.video_id != caption.video_id {
        return Err(Error::Consistency(format!(
            "visual embedding of {} paired with caption embedding of {}",
            visual.video_id, caption.video_id
        )));
    }
    let frames = if visual.frame_dim == 0 {
        0
    } else {
        visual.vector.len() / visual.frame_dim
    };
    let caption_dim = caption.vector.len();
    let mut vector = visual.vector;
    vector.extend(caption.vector);
    Ok(RawVideoEmbedding {
        video_id: visual.video_id,
        backbone_id: visual.backbone_id,
        encoder_id: caption.encoder_id,
        frames,
        frame_dim: visual.frame_dim,
        caption_dim,
        vector,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    /// Frames sampled per video (`F`).
    pub frames: usize,
    pub preprocess: PreprocessConfig,
    pub truncation: Truncation,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            frames: 50,
            preprocess: PreprocessConfig::default(),
            truncation: Truncation::default(),
        }
    }
}

/// Provenance recorded for every raw embedding; a store entry is reused only
/// when it matches exactly.
pub fn raw_provenance(cfg: &EncodeConfig, visual: &dyn VisualBackend, caption: &dyn CaptionBackend) -> Provenance {
    let mut p = Provenance::new();
    p.insert("backbone_id".into(), Value::from(visual.id()));
    p.insert("encoder_id".into(), Value::from(caption.id()));
    p.insert("frames".into(), Value::from(cfg.frames));
    p.insert("frame_dim".into(), Value::from(visual.frame_dim()));
    p.insert("caption_dim".into(), Value::from(caption.dim()));
    p.insert("image_size".into(), Value::from(cfg.preprocess.image_size));
    p.insert("mean".into(), serde_json::to_value(cfg.preprocess.mean).expect("array"));
    p.insert("std".into(), serde_json::to_value(cfg.preprocess.std).expect("array"));
    p.insert("truncation".into(), serde_json::to_value(cfg.truncation).expect("enum"));
    p
}

/// Width of the visual prefix of a stored raw embedding.
pub fn visual_width(provenance: &Provenance) -> Option<usize> {
    let frames = provenance.get("frames")?.as_u64()?;
    let d_f = provenance.get("frame_dim")?.as_u64()?;
    Some((frames * d_f) as usize)
}

pub fn encode_video(
    corpus: &Corpus,
    video_id: &str,
    visual: &dyn VisualBackend,
    caption: &dyn CaptionBackend,
    cfg: &EncodeConfig,
) -> Result<RawVideoEmbedding> {
    let video = corpus
        .video(video_id)
        .ok_or_else(|| Error::Lookup(video_id.to_string()))?;
    let seq = sample_frames(corpus, video, cfg.frames, &cfg.preprocess)?;
    let vis = encode_visual(&seq, visual)?;
    let cap = encode_caption(video_id, &video.caption, caption, cfg.truncation);
    assemble_video_embedding(vis, cap)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodeSummary {
    pub encoded: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

/// Encodes every video missing from `store` (or stored under other
/// provenance). Videos are encoded in parallel and appended in `video_id`
/// order; failures are collected and do not stop the batch.
pub fn encode_corpus(
    corpus: &Corpus,
    visual: &dyn VisualBackend,
    caption: &dyn CaptionBackend,
    cfg: &EncodeConfig,
    store: &mut EmbeddingStore,
) -> Result<EncodeSummary> {
    cfg.preprocess.validate()?;
    let provenance = raw_provenance(cfg, visual, caption);
    let pending: Vec<&str> = corpus
        .videos()
        .iter()
        .map(|v| v.video_id.as_str())
        .filter(|id| store.entry(id).is_none_or(|e| e.provenance != provenance))
        .collect();
    let mut summary = EncodeSummary {
        skipped: corpus.videos().len() - pending.len(),
        ..Default::default()
    };
    let results: Vec<(&str, Result<RawVideoEmbedding>)> = pending
        .par_iter()
        .map(|id| (*id, encode_video(corpus, id, visual, caption, cfg)))
        .collect();
    for (id, res) in results {
        match res {
            Ok(emb) => {
                store.append(id, &emb.vector, provenance.clone())?;
                summary.encoded += 1;
            }
            Err(e) => summary.failed.push((id.to_string(), e.to_string())),
        }
    }
    Ok(summary)
}
