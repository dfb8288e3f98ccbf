//! Flat `key = value` configuration files shared by the command-line tools.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::aggregation::EmbeddingConfig;
use crate::detect::HeadConfig;
use crate::error::{Error, Result};
use crate::extract::ExtractorConfig;
use crate::flow::BlockMatchConfig;
use crate::pipeline::PipelineConfig;
use crate::synth::{ObjectSpec, SynthConfig};

/// Every recognised key with its default. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub key_interval: usize,
    pub enable_fa: bool,
    pub enable_ma: bool,
    pub enable_scale_map: bool,

    /// Pixel stride of the finest feature level.
    pub first_stride: usize,
    /// Channels per feature level; each level halves the previous one.
    pub channels: Vec<usize>,

    pub block_radius: usize,
    pub search_radius: usize,
    pub texture_threshold: f32,

    pub classes: usize,
    pub anchors_per_cell: usize,
    pub score_threshold: f32,
    pub nms_iou: f32,
    pub top_k: usize,
    pub map_iou: f32,

    pub objects: usize,
    pub object_size: usize,
    /// Horizontal speed in pixels per frame; objects alternate direction.
    pub speed: i64,
    pub noise: f32,

    /// Directory of `frame_NNNN.ppm` files to process instead of a
    /// generated clip.
    pub input: Option<PathBuf>,

    pub repeats: usize,
    pub warmup: usize,
    pub sweep_k: Vec<usize>,
    pub parallel: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 40,
            height: 128,
            width: 128,
            key_interval: 10,
            enable_fa: true,
            enable_ma: true,
            enable_scale_map: true,
            first_stride: 4,
            channels: vec![32, 64, 64, 64, 64],
            block_radius: 2,
            search_radius: 4,
            texture_threshold: 1e-3,
            classes: 3,
            anchors_per_cell: 4,
            score_threshold: 0.6,
            nms_iou: 0.45,
            top_k: 100,
            map_iou: 0.5,
            objects: 2,
            object_size: 32,
            speed: 2,
            noise: 0.02,
            input: None,
            repeats: 10,
            warmup: 1,
            sweep_k: vec![1, 2, 4, 5, 6, 8, 10, 20],
            parallel: false,
        }
    }
}

/// 1-based line of byte `offset` in `text`.
fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|b| **b == b'\n')
        .count()
        + 1
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let settings: Settings = toml::from_str(text).map_err(|e| Error::Config {
            message: e.message().to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
        })?;
        if let Some(line) = text.lines().position(|l| l.trim_start().starts_with('[')) {
            return Err(Error::Config {
                message: "sections are not supported; use flat key = value lines".into(),
                line: Some(line + 1),
            });
        }
        Ok(settings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig::halving(self.seed, (self.height, self.width), self.first_stride, &self.channels)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            key_interval: self.key_interval,
            enable_fa: self.enable_fa,
            enable_ma: self.enable_ma,
            enable_scale_map: self.enable_scale_map,
            extractor: self.extractor(),
            embed: EmbeddingConfig { seed: self.seed },
            block_match: BlockMatchConfig {
                block_radius: self.block_radius,
                search_radius: self.search_radius,
                texture_threshold: self.texture_threshold,
            },
            head: HeadConfig {
                seed: self.seed,
                classes: self.classes,
                anchors_per_cell: self.anchors_per_cell,
                score_threshold: self.score_threshold,
                nms_iou: self.nms_iou,
                top_k: self.top_k,
                ..HeadConfig::default()
            },
        }
    }

    /// Objects in horizontal lanes, alternating left-to-right and
    /// right-to-left, starting at the edge they move away from.
    pub fn scene(&self) -> SynthConfig {
        let lanes = self.objects.max(1);
        let lane = self.height / lanes;
        let size = self.object_size;
        let objects = (0..self.objects)
            .map(|j| {
                let y = (j * lane + lane.saturating_sub(size) / 2) as i64;
                let rightward = j % 2 == 0;
                let margin = self.first_stride as i64;
                let x = if rightward {
                    margin
                } else {
                    self.width as i64 - size as i64 - margin
                };
                let vx = if rightward { self.speed } else { -self.speed };
                ObjectSpec {
                    class_id: (j % self.classes.max(1)) as u32,
                    texture_seed: self.seed.wrapping_mul(31).wrapping_add(j as u64 + 1),
                    size: (size, size),
                    start: (x, y),
                    velocity: (vx, 0),
                }
            })
            .collect();
        SynthConfig {
            height: self.height,
            width: self.width,
            frames: self.frames,
            background: 0.5,
            noise_amplitude: self.noise,
            objects,
        }
    }
}
