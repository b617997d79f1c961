//! Frame and caption encoder backends.
//!
//! The pretrained backbones (VGG16-class, ResNet-50-class, BERT-class) need
//! external weights and are not compiled into this crate; their ids resolve
//! to [`Error::BackendUnavailable`]. The toy backends are deterministic and
//! need nothing beyond a seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::frames::NormalizedFrame;
use crate::error::{Error, Result};

pub trait VisualBackend: Send + Sync {
    fn id(&self) -> &str;
    /// Per-frame embedding width `d_f`.
    fn frame_dim(&self) -> usize;
    fn is_deterministic(&self) -> bool;
    fn encode_frame(&self, frame: &NormalizedFrame) -> std::result::Result<Vec<f32>, String>;
}

pub trait CaptionBackend: Send + Sync {
    fn id(&self) -> &str;
    /// Sequence embedding width `d_t`.
    fn dim(&self) -> usize;
    fn is_deterministic(&self) -> bool;
    fn max_tokens(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<String>;
    /// Sequence-level summary of an already truncated token list; the empty
    /// list yields the backend's null-sequence vector.
    fn summarize(&self, tokens: &[String]) -> Vec<f32>;
}

/// Which end of an over-long caption survives truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    KeepHead,
    /// Hashtags usually close a caption, so the tail is kept by default.
    #[default]
    KeepTail,
}

impl Truncation {
    pub fn apply(self, mut tokens: Vec<String>, max: usize) -> Vec<String> {
        if tokens.len() <= max {
            return tokens;
        }
        match self {
            Truncation::KeepHead => {
                tokens.truncate(max);
                tokens
            }
            Truncation::KeepTail => tokens.split_off(tokens.len() - max),
        }
    }
}

fn gaussian_matrix(seed: u64, rows: usize, cols: usize, scale: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| {
            let z: f32 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

/// Fixed random projection of an average-pooled frame.
#[derive(Clone, Debug)]
pub struct ToyVisualBackend {
    id: String,
    pool: u32,
    frame_dim: usize,
    projection: Vec<f32>,
}

impl ToyVisualBackend {
    pub fn new(id: impl Into<String>, seed: u64, pool: u32, frame_dim: usize) -> Self {
        assert!(pool > 0 && frame_dim > 0);
        let inputs = (pool * pool * 3) as usize;
        ToyVisualBackend {
            id: id.into(),
            pool,
            frame_dim,
            projection: gaussian_matrix(seed, frame_dim, inputs, 1.0 / (inputs as f32).sqrt()),
        }
    }

    fn pooled(&self, frame: &NormalizedFrame) -> Vec<f32> {
        let p = self.pool;
        let mut sums = vec![0f32; (p * p * 3) as usize];
        let mut counts = vec![0u32; (p * p) as usize];
        for y in 0..frame.height {
            let cy = y * p / frame.height;
            for x in 0..frame.width {
                let cx = x * p / frame.width;
                let cell = (cy * p + cx) as usize;
                counts[cell] += 1;
                let px = frame.pixel(x, y);
                for ch in 0..3 {
                    sums[cell * 3 + ch] += px[ch];
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            if n > 0 {
                for ch in 0..3 {
                    sums[cell * 3 + ch] /= n as f32;
                }
            }
        }
        sums
    }
}

impl VisualBackend for ToyVisualBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn encode_frame(&self, frame: &NormalizedFrame) -> std::result::Result<Vec<f32>, String> {
        if frame.width == 0 || frame.height == 0 {
            return Err("empty frame".into());
        }
        let pooled = self.pooled(frame);
        Ok(self
            .projection
            .chunks_exact(pooled.len())
            .map(|row| row.iter().zip(&pooled).map(|(w, x)| w * x).sum())
            .collect())
    }
}

/// Bag of hashed tokens: every token maps to a seeded Gaussian vector and a
/// caption is the mean over its tokens, so word order is ignored.
#[derive(Clone, Debug)]
pub struct ToyCaptionBackend {
    id: String,
    seed: u64,
    dim: usize,
    max_tokens: usize,
}

impl ToyCaptionBackend {
    pub fn new(id: impl Into<String>, seed: u64, dim: usize, max_tokens: usize) -> Self {
        assert!(dim > 0 && max_tokens > 0);
        ToyCaptionBackend {
            id: id.into(),
            seed,
            dim,
            max_tokens,
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f32> {
        gaussian_matrix(fnv1a(token.as_bytes()) ^ self.seed, 1, self.dim, 1.0)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl CaptionBackend for ToyCaptionBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }

    fn summarize(&self, tokens: &[String]) -> Vec<f32> {
        let mut acc = vec![0f32; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let n = tokens.len() as f32;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

pub const TOY_VISUAL_A: &str = "toy-a";
pub const TOY_VISUAL_B: &str = "toy-b";
pub const TOY_CAPTION: &str = "toy-text";

/// Resolves a visual backend id.
pub fn visual_backend(id: &str) -> Result<Box<dyn VisualBackend>> {
    match id {
        TOY_VISUAL_A => Ok(Box::new(ToyVisualBackend::new(TOY_VISUAL_A, 0xA11CE, 8, 8))),
        TOY_VISUAL_B => Ok(Box::new(ToyVisualBackend::new(TOY_VISUAL_B, 0xB0B, 4, 8))),
        "vgg16" | "resnet50" => Err(Error::BackendUnavailable(id.to_string())),
        other => Err(Error::Config(format!("unknown visual backend {other:?}"))),
    }
}

/// Resolves a caption backend id.
pub fn caption_backend(id: &str) -> Result<Box<dyn CaptionBackend>> {
    match id {
        TOY_CAPTION => Ok(Box::new(ToyCaptionBackend::new(TOY_CAPTION, 0x7E47, 32, 64))),
        "bert-base" => Err(Error::BackendUnavailable(id.to_string())),
        other => Err(Error::Config(format!("unknown caption backend {other:?}"))),
    }
}
