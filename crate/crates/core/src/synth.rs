//! Synthetic clips of textured rectangles translating over a noisy
//! background, with exact motion and boxes.
//!
//! Motion follows the current-to-key convention used by the flow module: for
//! a pixel of frame `i` on object `o`, the ground-truth displacement to key
//! frame `k` is `position_k(o) - position_i(o) = velocity(o) * (k - i)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{BBox, LabeledBox};
use crate::error::{Error, Result};
use crate::extract::{FeatureExtractor, ToyExtractor};
use crate::flow::{FlowEstimate, FlowEstimator, FlowRequest};
use crate::io::write_ppm;
use crate::pipeline::{FrameRole, Pipeline, PipelineConfig};
use crate::tensor::{FlowField, Image, ScaleMap, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: u32,
    pub texture_seed: u64,
    /// `(height, width)` in pixels.
    pub size: (usize, usize),
    /// Top-left `(x, y)` in frame 0.
    pub start: (i64, i64),
    /// `(vx, vy)` in pixels per frame.
    pub velocity: (i64, i64),
}

impl ObjectSpec {
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let t = frame as i64;
        (self.start.0 + self.velocity.0 * t, self.start.1 + self.velocity.1 * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: f32,
    /// Half-width of the uniform per-frame noise added to background pixels.
    pub noise_amplitude: f32,
    pub objects: Vec<ObjectSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            frames: 30,
            background: 0.5,
            noise_amplitude: 0.02,
            objects: vec![
                ObjectSpec {
                    class_id: 0,
                    texture_seed: 1,
                    size: (40, 40),
                    start: (8, 12),
                    velocity: (2, 0),
                },
                ObjectSpec {
                    class_id: 1,
                    texture_seed: 2,
                    size: (32, 32),
                    start: (80, 76),
                    velocity: (-1, 0),
                },
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::config("synthetic clip needs positive size and length"));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.background) || !(0.0..=0.5).contains(&self.noise_amplitude) {
            return Err(Error::config("background must be in [0, 1], noise in [0, 0.5]"));
        }
        for frame in 0..self.frames {
            for (i, o) in self.objects.iter().enumerate() {
                let (x, y) = o.position(frame);
                let inside = x >= 0
                    && y >= 0
                    && x + o.size.1 as i64 <= self.width as i64
                    && y + o.size.0 as i64 <= self.height as i64;
                if !inside || o.size.0 == 0 || o.size.1 == 0 {
                    return Err(Error::config(format!(
                        "object {i} leaves the {}x{} frame at frame {frame} (top-left {x},{y})",
                        self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub config: SynthConfig,
    pub frames: Vec<Image>,
    pub boxes: Vec<Vec<LabeledBox>>,
    textures: Vec<Vec<f32>>,
}

pub fn generate_sequence(config: &SynthConfig, seed: u64) -> Result<SynthSequence> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let textures: Vec<Vec<f32>> = config
        .objects
        .iter()
        .map(|o| {
            let mut rng = ChaCha8Rng::seed_from_u64(o.texture_seed);
            (0..o.size.0 * o.size.1 * 3)
                .map(|_| rng.random_range(0.05f32..0.95))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(config.frames);
    let mut boxes = Vec::with_capacity(config.frames);
    for f in 0..config.frames {
        let a = config.noise_amplitude;
        let mut data: Vec<f32> = (0..h * w * 3)
            .map(|_| {
                let n = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
                (config.background + n).clamp(0.0, 1.0)
            })
            .collect();
        let mut frame_boxes = Vec::with_capacity(config.objects.len());
        for (o, tex) in config.objects.iter().zip(&textures) {
            let (x0, y0) = o.position(f);
            let (oh, ow) = o.size;
            for r in 0..oh {
                let y = y0 as usize + r;
                let dst = (y * w + x0 as usize) * 3;
                data[dst..dst + ow * 3].copy_from_slice(&tex[r * ow * 3..(r + 1) * ow * 3]);
            }
            frame_boxes.push(LabeledBox {
                bbox: BBox::new(
                    x0 as f32 / w as f32,
                    y0 as f32 / h as f32,
                    (x0 as usize + ow) as f32 / w as f32,
                    (y0 as usize + oh) as f32 / h as f32,
                ),
                class_id: o.class_id,
            });
        }
        frames.push(Image::new(h, w, data)?);
        boxes.push(frame_boxes);
    }
    Ok(SynthSequence {
        config: config.clone(),
        frames,
        boxes,
        textures,
    })
}

impl SynthSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Topmost object covering pixel `(y, x)` in `frame`.
    pub fn object_at(&self, frame: usize, y: i64, x: i64) -> Option<usize> {
        self.config.objects.iter().enumerate().rev().find_map(|(i, o)| {
            let (ox, oy) = o.position(frame);
            let hit = x >= ox && y >= oy && x < ox + o.size.1 as i64 && y < oy + o.size.0 as i64;
            hit.then_some(i)
        })
    }

    /// Whether the half-open pixel rectangle `(y0, y1, x0, x1)` lies entirely
    /// on one object in `frame`, returning it.
    pub fn object_covering(&self, frame: usize, rect: (i64, i64, i64, i64)) -> Option<usize> {
        let (y0, y1, x0, x1) = rect;
        let top = self.object_at(frame, y0, x0)?;
        let o = &self.config.objects[top];
        let (ox, oy) = o.position(frame);
        let inside = x0 >= ox && y0 >= oy && x1 <= ox + o.size.1 as i64 && y1 <= oy + o.size.0 as i64;
        // a later object drawn on top would break the texture
        let occluded = self.config.objects[top + 1..].iter().any(|p| {
            let (px, py) = p.position(frame);
            px < x1 && py < y1 && px + p.size.1 as i64 > x0 && py + p.size.0 as i64 > y0
        });
        (inside && !occluded).then_some(top)
    }

    /// Pixel displacement from `current` to `key` for object `o`.
    pub fn displacement(&self, object: usize, current: usize, key: usize) -> (i64, i64) {
        let o = &self.config.objects[object];
        let dt = key as i64 - current as i64;
        (o.velocity.0 * dt, o.velocity.1 * dt)
    }

    /// Current-to-key flow on a grid whose cells are `stride` pixels apart,
    /// taken from the object under each cell centre (zero on background).
    pub fn ground_truth_flow(
        &self,
        current: usize,
        key: usize,
        grid: (usize, usize),
        stride: (f32, f32),
    ) -> Result<FlowField> {
        FlowField::from_fn(grid.0, grid.1, |gy, gx| {
            let py = ((gy as f32 + 0.5) * stride.0).floor() as i64;
            let px = ((gx as f32 + 0.5) * stride.1).floor() as i64;
            match self.object_at(current, py, px) {
                Some(o) => {
                    let (dx, dy) = self.displacement(o, current, key);
                    (dx as f32 / stride.1, dy as f32 / stride.0)
                }
                None => (0.0, 0.0),
            }
        })
    }

    pub fn texture(&self, object: usize) -> &[f32] {
        &self.textures[object]
    }

    /// Writes `frame_NNNN.ppm` files and a `manifest.txt` with one line per
    /// frame: the index followed by `class:x1,y1,x2,y2:vx,vy` per object, in
    /// pixels.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (i, frame) in self.frames.iter().enumerate() {
            write_ppm(frame, dir.join(format!("frame_{i:04}.ppm")))?;
            write!(manifest, "{i}").unwrap();
            for o in &self.config.objects {
                let (x, y) = o.position(i);
                write!(
                    manifest,
                    " {}:{},{},{},{}:{},{}",
                    o.class_id,
                    x,
                    y,
                    x + o.size.1 as i64,
                    y + o.size.0 as i64,
                    o.velocity.0,
                    o.velocity.1
                )
                .unwrap();
            }
            manifest.push('\n');
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }
}

/// Flow source that reads exact motion from a synthetic clip.
#[derive(Debug, Clone)]
pub struct GroundTruthFlow {
    sequence: SynthSequence,
}

impl GroundTruthFlow {
    pub fn new(sequence: SynthSequence) -> Self {
        Self { sequence }
    }
}

impl FlowEstimator for GroundTruthFlow {
    fn estimate(&self, r: &FlowRequest<'_>) -> Result<FlowEstimate> {
        let (h, w) = (self.sequence.config.height, self.sequence.config.width);
        let stride = (h as f32 / r.grid.0 as f32, w as f32 / r.grid.1 as f32);
        Ok(FlowEstimate {
            flow: self
                .sequence
                .ground_truth_flow(r.current_index, r.key_index, r.grid, stride)?,
            scale: ScaleMap::ones(Shape::new(r.grid.0, r.grid.1, 1)),
        })
    }
}

/// Deviation of approximated features from directly extracted ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationError {
    pub key_interval: usize,
    /// Mean absolute difference over compared values; zero if none.
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Number of compared feature values.
    pub count: usize,
}

/// Runs the pipeline at each interval in `key_intervals` (sorted ascending)
/// and compares every non-key frame's features against direct extraction at
/// valid, padding-free cells.
pub fn approximation_error(
    sequence: &SynthSequence,
    config: &PipelineConfig,
    key_intervals: &[usize],
) -> Result<Vec<ApproximationError>> {
    approximation_error_with(sequence, config, key_intervals, |cfg| Pipeline::new(cfg.clone()))
}

/// As [`approximation_error`] with a caller-built pipeline per interval.
pub fn approximation_error_with(
    sequence: &SynthSequence,
    config: &PipelineConfig,
    key_intervals: &[usize],
    mut build: impl FnMut(&PipelineConfig) -> Result<Pipeline>,
) -> Result<Vec<ApproximationError>> {
    if let Some(k) = key_intervals.iter().find(|k| **k == 0) {
        return Err(Error::config(format!("key interval {k} must be at least 1")));
    }
    let direct = ToyExtractor::new(config.extractor.clone())?;
    let mut ks = key_intervals.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut out = Vec::with_capacity(ks.len());
    for k in ks {
        let cfg = PipelineConfig {
            key_interval: k,
            ..config.clone()
        };
        let mut pipeline = build(&cfg)?;
        let (mut sum, mut max, mut count) = (0.0f64, 0.0f64, 0usize);
        for frame in &sequence.frames {
            let outcome = pipeline.step(frame)?;
            if outcome.role != FrameRole::NonKey {
                continue;
            }
            let approx = pipeline.current_features().expect("features after step");
            let masks = pipeline.current_masks().expect("masks after step");
            let truth = direct.extract(frame)?;
            for (level, (a, t)) in approx.levels().iter().zip(truth.levels()).enumerate() {
                let c = a.channels();
                for y in 0..a.height() {
                    for x in 0..a.width() {
                        if !masks[level].get(y, x) || !direct.is_interior(level, y, x) {
                            continue;
                        }
                        for (p, q) in a.cell(y, x).iter().zip(t.cell(y, x)) {
                            let d = f64::from((p - q).abs());
                            sum += d;
                            max = max.max(d);
                        }
                        count += c;
                    }
                }
            }
        }
        out.push(ApproximationError {
            key_interval: k,
            mean_abs: if count == 0 { 0.0 } else { sum / count as f64 },
            max_abs: max,
            count,
        });
    }
    Ok(out)
}
