//! Online per-frame driver.
//!
//! Frame 0 is extracted and becomes the memory. Every `key_interval`-th frame
//! after it is a key frame: its features are extracted and, with memory
//! aggregation on, fused with the warped memory before becoming the new
//! memory. All other frames warp the memory with flow estimated against the
//! last key image and never run the extractor.

mod sampling;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use sampling::{sample_clip_frames, select_training_triplet, triplet_from_offset, TrainingTriplet};

use crate::aggregation::{Aggregator, EmbeddingConfig};
use crate::detect::{Detection, Detector, HeadConfig};
use crate::error::{Error, Result};
use crate::extract::{ExtractorConfig, FeatureExtractor, ToyExtractor};
use crate::flow::{build_flow_pyramid, BlockMatchConfig, BlockMatcher, FlowEstimator, FlowPyramid, FlowRequest};
use crate::tensor::{FeaturePyramid, Image, Shape};
use crate::trace::{EventLog, Kernel};
use crate::warp::{warp_pyramid, ValidMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub key_interval: usize,
    /// Feature approximation on non-key frames. Off means every frame is
    /// extracted.
    pub enable_fa: bool,
    /// Memory aggregation at key frames; only effective with `enable_fa`.
    pub enable_ma: bool,
    pub enable_scale_map: bool,
    pub extractor: ExtractorConfig,
    pub embed: EmbeddingConfig,
    pub block_match: BlockMatchConfig,
    pub head: HeadConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            key_interval: 10,
            enable_fa: true,
            enable_ma: true,
            enable_scale_map: true,
            extractor: ExtractorConfig::default(),
            embed: EmbeddingConfig::default(),
            block_match: BlockMatchConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.key_interval == 0 {
            return Err(Error::config("key interval must be at least 1"));
        }
        self.block_match.validate()?;
        self.head.validate()
    }

    /// Plain per-frame detection with no propagation.
    pub fn baseline(mut self) -> Self {
        self.enable_fa = false;
        self.enable_ma = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameRole {
    Initial,
    Key,
    NonKey,
}

impl FrameRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameRole::Initial => "initial",
            FrameRole::Key => "key",
            FrameRole::NonKey => "non-key",
        }
    }
}

/// Wall-clock time spent in each sub-network for one frame; `None` when the
/// stage did not run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub feat: Option<Duration>,
    pub flow: Option<Duration>,
    pub warp: Option<Duration>,
    /// Total over both embedded pyramids.
    pub embed: Option<Duration>,
    pub agg: Option<Duration>,
    pub det: Option<Duration>,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        [self.feat, self.flow, self.warp, self.embed, self.agg, self.det]
            .iter()
            .flatten()
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub index: usize,
    pub role: FrameRole,
    pub detections: Vec<Detection>,
    pub timings: StageTimings,
}

/// Aggregated key-frame features carried between key frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub pyramid: FeaturePyramid,
    pub key_image: Image,
    pub key_index: usize,
    pub frames_since_key: usize,
}

pub struct Pipeline {
    config: PipelineConfig,
    shapes: Vec<Shape>,
    extractor: Box<dyn FeatureExtractor + Send>,
    flow: Box<dyn FlowEstimator + Send>,
    aggregator: Aggregator,
    detector: Detector,
    memory: Option<MemoryState>,
    frame_index: usize,
    extractor_calls: usize,
    features: Option<FeaturePyramid>,
    masks: Option<Vec<ValidMask>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("frame_index", &self.frame_index)
            .field("extractor_calls", &self.extractor_calls)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Toy extractor and block-matching flow built from `config`.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let extractor = ToyExtractor::new(config.extractor.clone())?;
        let flow = BlockMatcher {
            config: config.block_match,
        };
        Self::with_providers(config, Box::new(extractor), Box::new(flow))
    }

    pub fn with_providers(
        config: PipelineConfig,
        extractor: Box<dyn FeatureExtractor + Send>,
        flow: Box<dyn FlowEstimator + Send>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = extractor.level_shapes();
        let aggregator = Aggregator::new(&config.embed, &shapes)?;
        let detector = Detector::new(config.head, &shapes)?;
        Ok(Self {
            config,
            shapes,
            extractor,
            flow,
            aggregator,
            detector,
            memory: None,
            frame_index: 0,
            extractor_calls: 0,
            features: None,
            masks: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn level_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn memory(&self) -> Option<&MemoryState> {
        self.memory.as_ref()
    }

    pub fn frames_seen(&self) -> usize {
        self.frame_index
    }

    pub fn extractor_calls(&self) -> usize {
        self.extractor_calls
    }

    /// Features the last frame's detections were computed from.
    pub fn current_features(&self) -> Option<&FeaturePyramid> {
        self.features.as_ref()
    }

    /// Per-level warp validity for the last frame; all true when the
    /// features were extracted rather than warped.
    pub fn current_masks(&self) -> Option<&[ValidMask]> {
        self.masks.as_deref()
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Role the next frame will take.
    pub fn next_role(&self) -> FrameRole {
        if self.frame_index == 0 {
            FrameRole::Initial
        } else if self.frame_index.is_multiple_of(self.config.key_interval) {
            FrameRole::Key
        } else {
            FrameRole::NonKey
        }
    }

    fn extract(&mut self, frame: &Image, timings: &mut StageTimings) -> Result<FeaturePyramid> {
        let start = Instant::now();
        let pyr = self.extractor.extract(frame)?;
        timings.feat = Some(start.elapsed());
        self.extractor_calls += 1;
        Ok(pyr)
    }

    fn flows_to_key(
        &self,
        memory: &MemoryState,
        frame: &Image,
        timings: &mut StageTimings,
    ) -> Result<FlowPyramid> {
        let start = Instant::now();
        let estimate = self.flow.estimate(&FlowRequest {
            key: &memory.key_image,
            current: frame,
            key_index: memory.key_index,
            current_index: self.frame_index,
            grid: self.shapes[0].spatial(),
        })?;
        let pyr = build_flow_pyramid(&estimate, &self.shapes)?;
        timings.flow = Some(start.elapsed());
        Ok(pyr)
    }

    fn all_valid(&self) -> Vec<ValidMask> {
        self.shapes
            .iter()
            .map(|s| ValidMask::all(s.height, s.width, true))
            .collect()
    }

    pub fn step(&mut self, frame: &Image) -> Result<FrameOutcome> {
        let expected = self.extractor.input_size();
        if (frame.height(), frame.width()) != expected {
            return Err(Error::contract(format!(
                "frame is {}x{}, pipeline expects {}x{}",
                frame.height(),
                frame.width(),
                expected.0,
                expected.1
            )));
        }
        let role = self.next_role();
        let mut timings = StageTimings::default();
        let index = self.frame_index;

        let (features, masks) = match (role, self.memory.take()) {
            (FrameRole::Initial, _) | (_, None) => {
                let pyr = self.extract(frame, &mut timings)?;
                self.set_memory(pyr.clone(), frame, index);
                (pyr, self.all_valid())
            }
            (_, Some(memory)) if !self.config.enable_fa => {
                drop(memory);
                let pyr = self.extract(frame, &mut timings)?;
                self.set_memory(pyr.clone(), frame, index);
                (pyr, self.all_valid())
            }
            (FrameRole::NonKey, Some(mut memory)) => {
                let flows = self.flows_to_key(&memory, frame, &mut timings)?;
                let scales = self.config.enable_scale_map.then_some(&flows.scales[..]);
                let start = Instant::now();
                let warped = warp_pyramid(&memory.pyramid, &flows.flows, scales)?;
                timings.warp = Some(start.elapsed());
                memory.frames_since_key += 1;
                self.memory = Some(memory);
                (warped.pyramid, warped.masks)
            }
            (FrameRole::Key, Some(memory)) => {
                let fresh = self.extract(frame, &mut timings)?;
                let pyr = if self.config.enable_ma {
                    let flows = self.flows_to_key(&memory, frame, &mut timings)?;
                    let mut log = EventLog::default();
                    let fused = self.aggregator.aggregate_traced(
                        &memory.pyramid,
                        &fresh,
                        &flows,
                        self.config.enable_scale_map,
                        &mut log,
                    )?;
                    timings.embed = Some(log.total(Kernel::Embed));
                    timings.agg = Some(log.total(Kernel::Aggregate));
                    fused
                } else {
                    fresh
                };
                self.set_memory(pyr.clone(), frame, index);
                (pyr, self.all_valid())
            }
        };

        let start = Instant::now();
        let detections = self.detector.predict(&features)?;
        timings.det = Some(start.elapsed());

        self.features = Some(features);
        self.masks = Some(masks);
        self.frame_index += 1;
        Ok(FrameOutcome {
            index,
            role,
            detections,
            timings,
        })
    }

    fn set_memory(&mut self, pyramid: FeaturePyramid, frame: &Image, index: usize) {
        self.memory = Some(MemoryState {
            pyramid,
            key_image: frame.clone(),
            key_index: index,
            frames_since_key: 0,
        });
    }

    /// Steps through every frame in order.
    pub fn run<'a>(&mut self, frames: impl IntoIterator<Item = &'a Image>) -> Result<Vec<FrameOutcome>> {
        frames.into_iter().map(|f| self.step(f)).collect()
    }
}
