//! Multi-scale single-shot detection head, greedy NMS and frame-level mAP.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeaturePyramid, Shape};

/// Axis-aligned box in normalised image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        debug_assert!(x1 <= x2 && y1 <= y2);
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f32 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    fn key(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    fn cmp_lex(&self, other: &BBox) -> Ordering {
        self.key()
            .iter()
            .zip(other.key().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f32,
}

/// Ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: u32,
}

/// Centre-size anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

/// Regression offsets `(dx, dy, dw, dh)` relative to an anchor.
pub type Offsets = [f32; 4];

/// Centre-size box decoded from offsets, without clipping.
pub fn decode(anchor: &Anchor, off: &Offsets) -> Anchor {
    Anchor {
        cx: anchor.cx + off[0] * anchor.w,
        cy: anchor.cy + off[1] * anchor.h,
        w: anchor.w * off[2].exp(),
        h: anchor.h * off[3].exp(),
    }
}

pub fn encode(anchor: &Anchor, b: &Anchor) -> Offsets {
    [
        (b.cx - anchor.cx) / anchor.w,
        (b.cy - anchor.cy) / anchor.h,
        (b.w / anchor.w).ln(),
        (b.h / anchor.h).ln(),
    ]
}

fn to_bbox(a: &Anchor) -> BBox {
    let c = |v: f32| v.clamp(0.0, 1.0);
    BBox::new(
        c(a.cx - a.w / 2.0),
        c(a.cy - a.h / 2.0),
        c(a.cx + a.w / 2.0),
        c(a.cy + a.h / 2.0),
    )
}

const ASPECT_RATIOS: [f32; 6] = [1.0, 2.0, 0.5, 3.0, 1.0 / 3.0, 1.0];

/// Anchors tiled over every cell of every level.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub anchors_per_cell: usize,
    pub levels: Vec<Vec<Anchor>>,
}

impl AnchorGrid {
    /// SSD-style tiling: level scales spread linearly over `[0.2, 0.9]`.
    pub fn new(shapes: &[Shape], anchors_per_cell: usize) -> Result<Self> {
        if anchors_per_cell == 0 || anchors_per_cell > ASPECT_RATIOS.len() {
            return Err(Error::config(format!(
                "anchors per cell must be in 1..={}",
                ASPECT_RATIOS.len()
            )));
        }
        let n = shapes.len();
        let scale = |l: usize| {
            if n == 1 {
                0.2
            } else {
                0.2 + 0.7 * l as f32 / (n - 1) as f32
            }
        };
        let levels = shapes
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let (sk, next) = (scale(l), if l + 1 < n { scale(l + 1) } else { 1.0 });
                let mut out = Vec::with_capacity(s.area() * anchors_per_cell);
                for y in 0..s.height {
                    for x in 0..s.width {
                        let cx = (x as f32 + 0.5) / s.width as f32;
                        let cy = (y as f32 + 0.5) / s.height as f32;
                        for (a, ratio) in ASPECT_RATIOS.iter().take(anchors_per_cell).enumerate() {
                            // the last slot is the intermediate-scale square anchor
                            let size = if a == 5 { (sk * next).sqrt() } else { sk };
                            let r = ratio.sqrt();
                            out.push(Anchor {
                                cx,
                                cy,
                                w: size * r,
                                h: size / r,
                            });
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            anchors_per_cell,
            levels,
        })
    }

    pub fn total(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub seed: u64,
    pub classes: usize,
    pub anchors_per_cell: usize,
    pub score_threshold: f32,
    pub nms_iou: f32,
    /// Candidates kept per class before suppression.
    pub top_k: usize,
    /// Constant added to every class logit.
    pub class_bias: f32,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 3,
            anchors_per_cell: 4,
            score_threshold: 0.6,
            nms_iou: 0.45,
            top_k: 100,
            class_bias: 0.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if !unit(self.score_threshold) || !unit(self.nms_iou) {
            return Err(Error::config("detection thresholds must lie in [0, 1]"));
        }
        if self.classes == 0 {
            return Err(Error::config("detection head needs at least one class"));
        }
        if !self.class_bias.is_finite() {
            return Err(Error::config("class bias must be finite"));
        }
        Ok(())
    }
}

/// Seeded linear head over a fixed pyramid layout.
#[derive(Debug, Clone)]
pub struct Detector {
    config: HeadConfig,
    anchors: AnchorGrid,
    shapes: Vec<Shape>,
    /// Per level `[anchor][class logits.., 4 offsets][channel]`.
    weights: Vec<Vec<f32>>,
}

impl Detector {
    pub fn new(config: HeadConfig, shapes: &[Shape]) -> Result<Self> {
        let anchors = AnchorGrid::new(shapes, config.anchors_per_cell)?;
        Self::with_anchors(config, shapes, anchors)
    }

    pub fn with_anchors(config: HeadConfig, shapes: &[Shape], anchors: AnchorGrid) -> Result<Self> {
        config.validate()?;
        if anchors.levels.len() != shapes.len() || anchors.anchors_per_cell != config.anchors_per_cell
        {
            return Err(Error::contract(format!(
                "anchor grid has {} levels of {} anchors, head expects {} levels of {}",
                anchors.levels.len(),
                anchors.anchors_per_cell,
                shapes.len(),
                config.anchors_per_cell
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let outputs = config.anchors_per_cell * (config.classes + 4);
        let weights = shapes
            .iter()
            .map(|s| {
                let std = (1.0 / s.channels as f32).sqrt();
                let normal = Normal::new(0.0f32, std).expect("valid std");
                (0..outputs * s.channels).map(|_| normal.sample(&mut rng)).collect()
            })
            .collect();
        Ok(Self {
            config,
            anchors,
            shapes: shapes.to_vec(),
            weights,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    /// Scores, decodes, thresholds and suppresses.
    pub fn predict(&self, pyramid: &FeaturePyramid) -> Result<Vec<Detection>> {
        if pyramid.shapes() != self.shapes {
            return Err(Error::contract(format!(
                "pyramid has {} levels {:?}, head expects {:?}",
                pyramid.len(),
                pyramid.shapes(),
                self.shapes
            )));
        }
        let k = self.config.classes;
        let per_anchor = k + 4;
        let mut candidates = Vec::new();
        let mut out = vec![0.0f32; self.config.anchors_per_cell * per_anchor];
        for (l, feature) in pyramid.levels().iter().enumerate() {
            let c = feature.channels();
            let weights = &self.weights[l];
            for (p, cell) in feature.data().chunks_exact(c).enumerate() {
                for (o, row) in out.iter_mut().zip(weights.chunks_exact(c)) {
                    *o = row.iter().zip(cell).map(|(w, v)| w * v).sum();
                }
                for a in 0..self.config.anchors_per_cell {
                    let head = &out[a * per_anchor..(a + 1) * per_anchor];
                    let anchor = &self.anchors.levels[l][p * self.config.anchors_per_cell + a];
                    let mut decoded = None;
                    for (class, logit) in head[..k].iter().enumerate() {
                        let score = logistic(logit + self.config.class_bias);
                        if score >= self.config.score_threshold {
                            let b = *decoded.get_or_insert_with(|| {
                                let off = [head[k], head[k + 1], head[k + 2], head[k + 3]];
                                to_bbox(&decode(anchor, &off))
                            });
                            candidates.push(Detection {
                                bbox: b,
                                class_id: class as u32,
                                score,
                            });
                        }
                    }
                }
            }
        }
        Ok(nms(&keep_top_k(candidates, self.config.top_k), self.config.nms_iou))
    }
}

/// One-shot prediction; builds the head weights from `head.seed`.
pub fn predict(
    pyramid: &FeaturePyramid,
    head: &HeadConfig,
    anchors: &AnchorGrid,
) -> Result<Vec<Detection>> {
    Detector::with_anchors(*head, &pyramid.shapes(), anchors.clone())?.predict(pyramid)
}

fn logistic(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Total order used for ranking: score descending, then class, then box.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| a.bbox.cmp_lex(&b.bbox))
}

fn keep_top_k(mut dets: Vec<Detection>, k: usize) -> Vec<Detection> {
    dets.sort_by(rank_order);
    let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
    dets.retain(|d| {
        let n = per_class.entry(d.class_id).or_default();
        *n += 1;
        *n <= k
    });
    dets
}

/// Greedy per-class suppression of boxes overlapping a better one by more
/// than `iou_threshold`. Survivors come back in rank order.
pub fn nms(detections: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut by_class: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_class.entry(d.class_id).or_default().push(*d);
    }
    let mut kept = Vec::with_capacity(detections.len());
    for (_, mut dets) in by_class {
        dets.sort_by(rank_order);
        let mut suppressed = vec![false; dets.len()];
        for i in 0..dets.len() {
            if suppressed[i] {
                continue;
            }
            kept.push(dets[i]);
            for j in i + 1..dets.len() {
                if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                    suppressed[j] = true;
                }
            }
        }
    }
    kept.sort_by(rank_order);
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// Average precision of every class present in the ground truth.
    pub per_class: BTreeMap<u32, f64>,
    pub map: f64,
}

/// Frame-level mean average precision with all-points interpolation.
pub fn evaluate_frame_map(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<LabeledBox>],
    iou_threshold: f32,
) -> Result<MapReport> {
    if detections.len() != ground_truth.len() {
        return Err(Error::Evaluation(format!(
            "{} detection frames but {} ground-truth frames",
            detections.len(),
            ground_truth.len()
        )));
    }
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    for g in ground_truth.iter().flatten() {
        *gt_count.entry(g.class_id).or_default() += 1;
    }
    if gt_count.is_empty() {
        return Err(Error::Evaluation("ground truth contains no classes".into()));
    }
    let mut per_class = BTreeMap::new();
    for (&class, &total) in &gt_count {
        let mut ranked: Vec<(usize, Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(f, ds)| ds.iter().filter(|d| d.class_id == class).map(move |d| (f, *d)))
            .collect();
        ranked.sort_by(|(fa, a), (fb, b)| rank_order(a, b).then(fa.cmp(fb)));
        let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
        let mut hits = Vec::with_capacity(ranked.len());
        for (f, d) in &ranked {
            let mut best: Option<(usize, f32)> = None;
            for (gi, g) in ground_truth[*f].iter().enumerate() {
                if g.class_id != class || matched[*f][gi] {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            if let Some((gi, _)) = best {
                matched[*f][gi] = true;
                hits.push(true);
            } else {
                hits.push(false);
            }
        }
        per_class.insert(class, average_precision(&hits, total));
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { per_class, map })
}

/// Area under the precision envelope for a ranked hit list.
fn average_precision(hits: &[bool], positives: usize) -> f64 {
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, hit) in hits.iter().enumerate() {
        tp += usize::from(*hit);
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

pub const DETECTION_CSV_HEADER: &str = "frame_index,class_id,score,x1,y1,x2,y2";

/// Detections as CSV, six decimals per float.
pub fn detections_to_csv(frames: &[(usize, Vec<Detection>)]) -> String {
    let mut out = String::from(DETECTION_CSV_HEADER);
    out.push('\n');
    for (frame, dets) in frames {
        for d in dets {
            let b = d.bbox;
            writeln!(
                out,
                "{frame},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                d.class_id, d.score, b.x1, b.y1, b.x2, b.y2
            )
            .unwrap();
        }
    }
    out
}

pub fn detections_from_csv(text: &str) -> Result<Vec<(usize, Detection)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DETECTION_CSV_HEADER => {}
        _ => return Err(Error::format(0, "missing detection CSV header")),
    }
    let mut out = Vec::new();
    let mut offset = DETECTION_CSV_HEADER.len() as u64 + 1;
    for (_, line) in lines {
        let bad = || Error::format(offset, format!("malformed detection row {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f32>().map_err(|_| bad());
        out.push((
            f[0].parse().map_err(|_| bad())?,
            Detection {
                class_id: f[1].parse().map_err(|_| bad())?,
                score: num(2)?,
                bbox: BBox::new(num(3)?, num(4)?, num(5)?, num(6)?),
            },
        ));
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}
