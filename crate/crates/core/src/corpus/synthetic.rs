//! Planted-signal corpus generator.
//!
//! Every challenge `c` owns a block-pattern template and the caption token
//! `#<tag>`. Every user `u` has motif index `u`; the motif blends an identity
//! template unique to the user with a taste template shared by all users whose
//! index has the same residue mod `C`. Pixels are `s * template + (1 - s) *
//! noise`, and each planted caption token appears with probability `s`.
//!
//! Ground truth: user `u` participates in challenge `c` iff `u mod C == c`,
//! with each pair independently flipped with probability `flip_rate`. A
//! participant shows up in the corpus as the owner of tagged videos of that
//! challenge, so labels derived from corpus evidence match the planted truth.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frame_file_name, Corpus, VideoRecord, MANIFEST_SCHEMA_VERSION};
use crate::error::{Error, Result};

const GRID: u32 = 4;
const FILLER: &[&str] = &[
    "dance", "fun", "lol", "vibes", "fyp", "music", "friends", "home", "today", "mood", "trend", "weekend",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub challenges: usize,
    pub users: usize,
    pub videos_per_user: usize,
    pub videos_per_challenge: usize,
    pub frames_per_video: usize,
    pub frame_size: u32,
    pub signal_strength: f64,
    /// Weight of the shared taste template inside a user motif.
    pub taste_weight: f64,
    pub flip_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            challenges: 3,
            users: 6,
            videos_per_user: 8,
            videos_per_challenge: 5,
            frames_per_video: 8,
            frame_size: 16,
            signal_strength: 1.0,
            taste_weight: 0.5,
            flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("challenges", self.challenges),
            ("users", self.users),
            ("videos_per_user", self.videos_per_user),
            ("videos_per_challenge", self.videos_per_challenge),
            ("frames_per_video", self.frames_per_video),
            ("frame_size", self.frame_size as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.challenges < 2 {
            return Err(Error::Config("at least 2 challenges are required".into()));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("taste_weight", self.taste_weight),
            ("flip_rate", self.flip_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn challenge_label(c: usize) -> String {
        format!("challenge{c:02}")
    }

    pub fn user_id(u: usize) -> String {
        format!("user{u:03}")
    }
}

/// A generated corpus together with its planted ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub manifest_path: PathBuf,
    /// `(user_id, challenge_tag)` pairs with participation evidence.
    pub participation: BTreeSet<(String, String)>,
}

type Template = Vec<[f64; 3]>;

fn random_template(rng: &mut ChaCha8Rng) -> Template {
    (0..GRID * GRID)
        .map(|_| [0, 1, 2].map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }))
        .collect()
}

fn blend(a: &Template, wa: f64, b: &Template, wb: f64) -> Template {
    a.iter()
        .zip(b)
        .map(|(x, y)| [0, 1, 2].map(|ch| wa * x[ch] + wb * y[ch]))
        .collect()
}

struct VideoPlan {
    record: VideoRecord,
    template: Template,
    index: usize,
}

/// Writes a synthetic corpus (manifest plus PNG frames) under `out_dir`.
pub fn generate_synthetic_corpus(config: &SyntheticConfig, out_dir: &Path) -> Result<SyntheticCorpus> {
    config.validate()?;
    let c_count = config.challenges;
    let s = config.signal_strength;

    let mut template_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let challenge_templates: Vec<Template> = (0..c_count).map(|_| random_template(&mut template_rng)).collect();
    let taste_templates: Vec<Template> = (0..c_count).map(|_| random_template(&mut template_rng)).collect();
    let identity_templates: Vec<Template> = (0..config.users).map(|_| random_template(&mut template_rng)).collect();

    // planted affinity with independent flips
    let mut pair_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut participants: Vec<Vec<usize>> = vec![Vec::new(); c_count];
    for u in 0..config.users {
        for (c, members) in participants.iter_mut().enumerate() {
            let planted = u % c_count == c;
            let flipped = config.flip_rate > 0.0 && pair_rng.gen_bool(config.flip_rate);
            if planted != flipped {
                members.push(u);
            }
        }
    }
    for (c, members) in participants.iter_mut().enumerate() {
        if members.is_empty() {
            // every challenge needs an owner for its videos
            members.push((0..config.users).find(|u| u % c_count == c).unwrap_or(c % config.users));
        }
    }

    let labels: Vec<String> = (0..c_count).map(SyntheticConfig::challenge_label).collect();
    let mut caption_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut caption = |planted: &[String]| -> String {
        let n_fill = caption_rng.gen_range(2..=4);
        let mut words: Vec<String> = (0..n_fill)
            .map(|_| FILLER.choose(&mut caption_rng).unwrap().to_string())
            .collect();
        for token in planted {
            if s > 0.0 && caption_rng.gen_bool(s) {
                words.push(token.clone());
            }
        }
        words.join(" ")
    };

    let mut plans = Vec::new();
    let push = |plans: &mut Vec<VideoPlan>, user: usize, tag: Option<String>, caption: String, template: Template| {
        let index = plans.len();
        let video_id = format!("v{:06}", index + 1);
        plans.push(VideoPlan {
            record: VideoRecord {
                schema_version: MANIFEST_SCHEMA_VERSION,
                frame_source: format!("frames/{video_id}"),
                video_id,
                user_id: SyntheticConfig::user_id(user),
                challenge_tag: tag,
                caption,
                frame_count: config.frames_per_video,
                extra: Default::default(),
                ordinal: index,
            },
            template,
            index,
        });
    };

    let tw = config.taste_weight;
    for u in 0..config.users {
        let g = u % c_count;
        let template = blend(&identity_templates[u], 1.0 - tw, &taste_templates[g], tw);
        for _ in 0..config.videos_per_user {
            let text = caption(&[format!("#style{g}"), format!("me{u:03}")]);
            push(&mut plans, u, None, text, template.clone());
        }
    }
    let mut participation = BTreeSet::new();
    for c in 0..c_count {
        for j in 0..config.videos_per_challenge {
            let owner = participants[c][j % participants[c].len()];
            participation.insert((SyntheticConfig::user_id(owner), labels[c].clone()));
            let text = caption(&[format!("#{}", labels[c])]);
            push(
                &mut plans,
                owner,
                Some(labels[c].clone()),
                text,
                challenge_templates[c].clone(),
            );
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    plans
        .par_iter()
        .map(|plan| write_frames(config, out_dir, plan))
        .collect::<Result<Vec<()>>>()?;

    let corpus = Corpus::new(labels, plans.into_iter().map(|p| p.record).collect(), out_dir)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    corpus.write_manifest(&manifest_path)?;
    Ok(SyntheticCorpus {
        corpus,
        manifest_path,
        participation,
    })
}

fn write_frames(config: &SyntheticConfig, out_dir: &Path, plan: &VideoPlan) -> Result<()> {
    let dir = out_dir.join(&plan.record.frame_source);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(plan.index as u64));
    let size = config.frame_size;
    let s = config.signal_strength;
    for f in 0..config.frames_per_video {
        let img = RgbImage::from_fn(size, size, |x, y| {
            let block = (y * GRID / size) * GRID + x * GRID / size;
            let t = &plan.template[block as usize];
            Rgb([0, 1, 2].map(|ch| {
                let v = s * t[ch] + (1.0 - s) * rng.gen::<f64>();
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            }))
        });
        let path = dir.join(frame_file_name(f));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}
