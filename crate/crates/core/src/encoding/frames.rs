use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::corpus::{frame_paths, Corpus, VideoRecord};
use crate::error::{Error, Result};

/// Resize target and per-channel normalization applied to every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub image_size: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // ImageNet statistics, as used by the usual pretrained CNNs
        PreprocessConfig {
            image_size: 224,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// A resized, normalized RGB frame in row-major HWC order.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl NormalizedFrame {
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub source_video_id: String,
    pub frames: Vec<NormalizedFrame>,
    pub sampling_indices: Vec<usize>,
}

/// Indices of the `f` frames kept from a video with `frame_count` frames.
///
/// Uniform `floor(i * frame_count / f)` when there are enough frames,
/// otherwise every frame followed by the last one repeated.
pub fn sample_indices(frame_count: usize, f: usize) -> Result<Vec<usize>> {
    if frame_count == 0 {
        return Err(Error::Data("cannot sample frames from a video with no frames".into()));
    }
    if f == 0 {
        return Err(Error::Config("frame sample count must be positive".into()));
    }
    Ok(if frame_count >= f {
        (0..f).map(|i| i * frame_count / f).collect()
    } else {
        (0..f).map(|i| i.min(frame_count - 1)).collect()
    })
}

/// Promotes to RGB, resizes bilinearly to `image_size` squared and normalizes.
pub fn preprocess_frame(image: &DynamicImage, cfg: &PreprocessConfig) -> NormalizedFrame {
    let rgb = image.to_rgb8();
    let size = cfg.image_size;
    let rgb = if rgb.width() == size && rgb.height() == size {
        rgb
    } else {
        image::imageops::resize(&rgb, size, size, FilterType::Triangle)
    };
    let data = rgb
        .pixels()
        .flat_map(|p| [0, 1, 2].map(|ch| (f32::from(p[ch]) / 255.0 - cfg.mean[ch]) / cfg.std[ch]))
        .collect();
    NormalizedFrame {
        width: size,
        height: size,
        data,
    }
}

pub fn load_frame(path: &Path, cfg: &PreprocessConfig) -> Result<NormalizedFrame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(preprocess_frame(&img, cfg))
}

/// Samples `f` frames of `video` and preprocesses them.
pub fn sample_frames(corpus: &Corpus, video: &VideoRecord, f: usize, cfg: &PreprocessConfig) -> Result<FrameSequence> {
    let indices = sample_indices(video.frame_count, f)?;
    let dir = corpus.frame_dir(video);
    let paths = frame_paths(&dir).map_err(|e| Error::io(&dir, e))?;
    if paths.len() != video.frame_count {
        return Err(Error::Data(format!(
            "video {} declares {} frames but {} are on disk",
            video.video_id,
            video.frame_count,
            paths.len()
        )));
    }
    let mut cache: Vec<Option<NormalizedFrame>> = vec![None; paths.len()];
    let mut frames = Vec::with_capacity(f);
    for &i in &indices {
        if cache[i].is_none() {
            cache[i] = Some(load_frame(&paths[i], cfg)?);
        }
        frames.push(cache[i].clone().expect("loaded above"));
    }
    Ok(FrameSequence {
        source_video_id: video.video_id.clone(),
        frames,
        sampling_indices: indices,
    })
}
