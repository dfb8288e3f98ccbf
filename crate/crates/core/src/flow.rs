//! Motion estimation stand-in and multi-scale flow pyramids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FlowField, Image, ScaleMap, Shape};

/// Flow from the current frame to its key frame plus a refinement map, both
/// at the base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// Either one channel (shared by every feature channel) or as many
    /// channels as the features it will refine.
    pub scale: ScaleMap,
}

impl FlowEstimate {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            flow: FlowField::zeros(height, width),
            scale: ScaleMap::ones(Shape::new(height, width, 1)),
        }
    }
}

/// Per-level flows and scale maps aligned with a feature pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPyramid {
    pub flows: Vec<FlowField>,
    pub scales: Vec<ScaleMap>,
}

impl FlowPyramid {
    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// Zero flow and unit scale at every level.
    pub fn identity(shapes: &[Shape]) -> Self {
        Self {
            flows: shapes
                .iter()
                .map(|s| FlowField::zeros(s.height, s.width))
                .collect(),
            scales: shapes.iter().map(|s| ScaleMap::ones(*s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMatchConfig {
    /// Half-size of the square block compared, in pixels.
    pub block_radius: usize,
    /// Largest displacement searched along each axis, in pixels.
    pub search_radius: usize,
    /// Blocks whose pixel variance falls below this emit zero flow.
    pub texture_threshold: f32,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        Self {
            block_radius: 3,
            search_radius: 6,
            texture_threshold: 1e-3,
        }
    }
}

impl BlockMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_radius < 1 || self.search_radius < 1 {
            return Err(Error::config("block and search radius must be at least 1"));
        }
        if self.texture_threshold.is_nan() || self.texture_threshold < 0.0 {
            return Err(Error::config("texture threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Inputs handed to a flow source for one frame pair.
#[derive(Debug, Clone, Copy)]
pub struct FlowRequest<'a> {
    pub key: &'a Image,
    pub current: &'a Image,
    pub key_index: usize,
    pub current_index: usize,
    /// Base grid `(height, width)` the estimate must be expressed on.
    pub grid: (usize, usize),
}

/// Source of current-to-key motion.
pub trait FlowEstimator {
    fn estimate(&self, request: &FlowRequest<'_>) -> Result<FlowEstimate>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockMatcher {
    pub config: BlockMatchConfig,
}

impl FlowEstimator for BlockMatcher {
    fn estimate(&self, r: &FlowRequest<'_>) -> Result<FlowEstimate> {
        estimate_flow(r.key, r.current, &self.config, r.grid)
    }
}

/// Candidate displacements, nearest to zero first.
fn search_order(radius: i64) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .collect();
    out.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dx.abs().max(dy.abs()), dy, dx));
    out
}

/// Block matching by mean absolute difference.
///
/// For each base-grid cell the block around the cell centre in `current` is
/// compared with `key` displaced by each candidate; the winner `d` satisfies
/// `current(q) ~ key(q + d)` and is reported in base-grid units. Ties go to
/// the candidate nearest zero.
pub fn estimate_flow(
    key: &Image,
    current: &Image,
    config: &BlockMatchConfig,
    grid: (usize, usize),
) -> Result<FlowEstimate> {
    config.validate()?;
    if key.shape() != current.shape() {
        return Err(Error::contract(format!(
            "key image is {} but current image is {}",
            key.shape(),
            current.shape()
        )));
    }
    let (h, w) = (key.height(), key.width());
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || gh > h || gw > w {
        return Err(Error::contract(format!(
            "flow grid {gh}x{gw} does not fit a {h}x{w} image"
        )));
    }
    let r = config.block_radius as i64;
    let candidates = search_order(config.search_radius as i64);
    let full = ((2 * r + 1) * (2 * r + 1)) as usize;
    let inside = |y: i64, x: i64| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
    let (to_gx, to_gy) = (gw as f32 / w as f32, gh as f32 / h as f32);

    let mut data = Vec::with_capacity(gh * gw * 2);
    for gy in 0..gh {
        let cy = ((2 * gy + 1) * h / (2 * gh)) as i64;
        for gx in 0..gw {
            let cx = ((2 * gx + 1) * w / (2 * gw)) as i64;

            let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    if inside(y, x) {
                        for v in current.pixel(y as usize, x as usize) {
                            sum += f64::from(*v);
                            sq += f64::from(*v) * f64::from(*v);
                            n += 1;
                        }
                    }
                }
            }
            let mean = sum / n as f64;
            if sq / n as f64 - mean * mean < f64::from(config.texture_threshold) {
                data.extend([0.0, 0.0]);
                continue;
            }

            let mut best = (0i64, 0i64);
            let mut best_cost = f64::INFINITY;
            let block_inside = inside(cy - r, cx - r) && inside(cy + r, cx + r);
            for &(dx, dy) in &candidates {
                let shifted_inside = inside(cy - r + dy, cx - r + dx) && inside(cy + r + dy, cx + r + dx);
                let cost = if block_inside && shifted_inside {
                    // every pixel counts: compare whole rows and stop once
                    // this candidate can no longer win
                    let limit = best_cost * full as f64;
                    let span = (2 * r + 1) as usize * 3;
                    let mut total = 0.0f64;
                    for y in cy - r..=cy + r {
                        let a = &current.data()[((y as usize) * w + (cx - r) as usize) * 3..][..span];
                        let yk = (y + dy) as usize;
                        let b = &key.data()[(yk * w + (cx - r + dx) as usize) * 3..][..span];
                        total += f64::from(a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f32>());
                        if total >= limit {
                            break;
                        }
                    }
                    total / full as f64
                } else {
                    let (mut cost, mut count) = (0.0f64, 0usize);
                    for y in cy - r..=cy + r {
                        for x in cx - r..=cx + r {
                            if inside(y, x) && inside(y + dy, x + dx) {
                                let a = current.pixel(y as usize, x as usize);
                                let b = key.pixel((y + dy) as usize, (x + dx) as usize);
                                cost += f64::from(a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f32>());
                                count += 1;
                            }
                        }
                    }
                    if 2 * count < full {
                        continue;
                    }
                    cost / count as f64
                };
                if cost < best_cost {
                    best_cost = cost;
                    best = (dx, dy);
                }
            }
            data.push(best.0 as f32 * to_gx);
            data.push(best.1 as f32 * to_gy);
        }
    }
    Ok(FlowEstimate {
        flow: FlowField::new(gh, gw, data)?,
        scale: ScaleMap::ones(Shape::new(gh, gw, 1)),
    })
}

/// Source index range averaged into target cell `t`.
fn pool_window(t: usize, source: usize, target: usize) -> (usize, usize) {
    let lo = t * source / target;
    let hi = ((t + 1) * source).div_ceil(target);
    (lo, hi)
}

fn check_target(source: (usize, usize), target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::contract(format!(
            "target size {}x{} must be positive",
            target.0, target.1
        )));
    }
    if target.0 > source.0 || target.1 > source.1 {
        return Err(Error::contract(format!(
            "target size {}x{} exceeds source {}x{}",
            target.0, target.1, source.0, source.1
        )));
    }
    Ok(())
}

/// Adaptive average pooling over `(H, W)` of a channel-last buffer.
fn avg_pool(data: &[f32], source: Shape, target: (usize, usize)) -> Vec<f32> {
    let c = source.channels;
    let mut out = Vec::with_capacity(target.0 * target.1 * c);
    let mut acc = vec![0.0f64; c];
    for ty in 0..target.0 {
        let (y0, y1) = pool_window(ty, source.height, target.0);
        for tx in 0..target.1 {
            let (x0, x1) = pool_window(tx, source.width, target.1);
            acc.fill(0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let at = (y * source.width + x) * c;
                    for (a, v) in acc.iter_mut().zip(&data[at..at + c]) {
                        *a += f64::from(*v);
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.extend(acc.iter().map(|a| (a / n) as f32));
        }
    }
    out
}

/// Average-pools a flow onto a coarser grid and rescales its displacements
/// into target-grid units.
pub fn downscale_flow(flow: &FlowField, target: (usize, usize)) -> Result<FlowField> {
    check_target(flow.spatial(), target)?;
    let source = Shape::new(flow.height(), flow.width(), 2);
    let ry = target.0 as f64 / flow.height() as f64;
    let rx = target.1 as f64 / flow.width() as f64;
    let mut pooled = avg_pool(flow.data(), source, target);
    for d in pooled.chunks_exact_mut(2) {
        d[0] = (f64::from(d[0]) * rx) as f32;
        d[1] = (f64::from(d[1]) * ry) as f32;
    }
    FlowField::new(target.0, target.1, pooled)
}

/// Average-pools a scale map onto `target`, broadcasting a single-channel
/// map across the target channels.
pub fn resize_scale_map(scale: &ScaleMap, target: Shape) -> Result<ScaleMap> {
    let source = scale.shape();
    check_target(source.spatial(), target.spatial())?;
    let pooled = avg_pool(scale.data(), source, target.spatial());
    let data = if source.channels == target.channels {
        pooled
    } else if source.channels == 1 {
        pooled
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, target.channels))
            .collect()
    } else {
        return Err(Error::contract(format!(
            "scale map with {} channels cannot refine {target}",
            source.channels
        )));
    };
    ScaleMap::new(target, data)
}

pub fn build_flow_pyramid(base: &FlowEstimate, targets: &[Shape]) -> Result<FlowPyramid> {
    if targets.is_empty() {
        return Err(Error::contract("flow pyramid needs at least one level"));
    }
    if base.flow.spatial() != base.scale.shape().spatial() {
        return Err(Error::contract("flow and scale map disagree on base size"));
    }
    let flows = targets
        .iter()
        .map(|t| downscale_flow(&base.flow, t.spatial()))
        .collect::<Result<Vec<_>>>()?;
    let scales = targets
        .iter()
        .map(|t| resize_scale_map(&base.scale, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowPyramid { flows, scales })
}
