//! Memory aggregation at key frames.
//!
//! Both feature maps are projected through a small 1x1 bottleneck
//! (`C -> C/2 -> C/2 -> 2C`, ReLU between layers), compared by cosine
//! similarity at every position, and fused with position-wise weights that sum
//! to one and are shared by all channels.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowPyramid;
use crate::tensor::{FeatureMap, FeaturePyramid, Shape};
use crate::trace::{timed, Kernel, KernelEvent, NoTrace, Tracer};
use crate::warp::{apply_scale_map, warp_feature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// `[output][input]`
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense {
    fn random(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        let normal = Normal::new(0.0f32, (2.0 / inputs as f32).sqrt()).expect("valid std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f32], out: &mut Vec<f32>, relu: bool) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let v = row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b;
            out.push(if relu { v.max(0.0) } else { v });
        }
    }
}

/// Seeded 1x1 bottleneck for one feature level.
#[derive(Debug, Clone)]
pub struct Embedding {
    channels: usize,
    layers: [Dense; 3],
}

impl Embedding {
    pub fn new(config: &EmbeddingConfig, channels: usize, level: usize) -> Result<Self> {
        if channels < 2 || !channels.is_multiple_of(2) {
            return Err(Error::config(format!(
                "embedding needs an even, non-zero channel count, got {channels}"
            )));
        }
        let stream = config.seed ^ (level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let half = channels / 2;
        Ok(Self {
            channels,
            layers: [
                Dense::random(&mut rng, channels, half),
                Dense::random(&mut rng, half, half),
                Dense::random(&mut rng, half, 2 * channels),
            ],
        })
    }

    /// Filter counts of the three projections.
    pub fn channel_plan(&self) -> [usize; 3] {
        [
            self.layers[0].outputs,
            self.layers[1].outputs,
            self.layers[2].outputs,
        ]
    }

    pub fn apply(&self, feature: &FeatureMap) -> Result<FeatureMap> {
        if feature.channels() != self.channels {
            return Err(Error::contract(format!(
                "embedding built for {} channels applied to {}",
                self.channels,
                feature.shape()
            )));
        }
        let out_shape = Shape::new(feature.height(), feature.width(), 2 * self.channels);
        let mut data = Vec::with_capacity(out_shape.len());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for cell in feature.data().chunks_exact(self.channels) {
            self.layers[0].apply(cell, &mut a, true);
            self.layers[1].apply(&a, &mut b, true);
            self.layers[2].apply(&b, &mut a, false);
            data.extend_from_slice(&a);
        }
        FeatureMap::new(out_shape, data)
    }
}

/// Embeds a level-0-seeded projection of `feature` (`C` must be even).
pub fn embed_feature(feature: &FeatureMap, config: &EmbeddingConfig) -> Result<FeatureMap> {
    Embedding::new(config, feature.channels(), 0)?.apply(feature)
}

/// Position-wise fusion weights; `w_mem(p) + w_cur(p) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    height: usize,
    width: usize,
    w_mem: Vec<f32>,
    w_cur: Vec<f32>,
}

impl WeightPair {
    pub const SUM_TOLERANCE: f32 = 1e-6;

    pub fn new(height: usize, width: usize, w_mem: Vec<f32>, w_cur: Vec<f32>) -> Result<Self> {
        if w_mem.len() != height * width || w_cur.len() != height * width {
            return Err(Error::contract(format!(
                "weights must have {} entries",
                height * width
            )));
        }
        for (i, (m, c)) in w_mem.iter().zip(&w_cur).enumerate() {
            let ok = (0.0..=1.0).contains(m)
                && (0.0..=1.0).contains(c)
                && (m + c - 1.0).abs() <= Self::SUM_TOLERANCE;
            if !ok {
                return Err(Error::contract(format!(
                    "weights ({m}, {c}) at position {i} are not a convex pair"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            w_mem,
            w_cur,
        })
    }

    /// Uniform weights everywhere.
    pub fn constant(height: usize, width: usize, w_mem: f32) -> Result<Self> {
        let n = height * width;
        Self::new(height, width, vec![w_mem; n], vec![1.0 - w_mem; n])
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn memory(&self) -> &[f32] {
        &self.w_mem
    }

    pub fn current(&self) -> &[f32] {
        &self.w_cur
    }
}

/// Cosine similarity; `0` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Two-term exponential normalisation of `cos(mem, cur)` against the current
/// embedding's self-similarity.
pub fn similarity_weights(embedded_mem: &FeatureMap, embedded_cur: &FeatureMap) -> Result<WeightPair> {
    if embedded_mem.shape() != embedded_cur.shape() {
        return Err(Error::contract(format!(
            "memory embedding is {} but current embedding is {}",
            embedded_mem.shape(),
            embedded_cur.shape()
        )));
    }
    let c = embedded_mem.channels();
    let n = embedded_mem.shape().area();
    let mut w_mem = Vec::with_capacity(n);
    let mut w_cur = Vec::with_capacity(n);
    for (m, cur) in embedded_mem
        .data()
        .chunks_exact(c)
        .zip(embedded_cur.data().chunks_exact(c))
    {
        let s_mem = cosine(m, cur);
        let s_cur = cosine(cur, cur);
        // shift by the max for a stable softmax
        let top = s_mem.max(s_cur);
        let (e_mem, e_cur) = ((s_mem - top).exp(), (s_cur - top).exp());
        let z = e_mem + e_cur;
        w_mem.push((e_mem / z) as f32);
        w_cur.push((e_cur / z) as f32);
    }
    WeightPair::new(embedded_mem.height(), embedded_mem.width(), w_mem, w_cur)
}

/// `out(p, c) = w_mem(p) * memory_warped(p, c) + w_cur(p) * current(p, c)`.
pub fn aggregate_features(
    memory_warped: &FeatureMap,
    current: &FeatureMap,
    weights: &WeightPair,
) -> Result<FeatureMap> {
    let shape = current.shape();
    if memory_warped.shape() != shape {
        return Err(Error::contract(format!(
            "memory features are {} but current features are {shape}",
            memory_warped.shape()
        )));
    }
    if weights.spatial() != shape.spatial() {
        return Err(Error::contract(format!(
            "weights are {}x{} but features are {shape}",
            weights.height, weights.width
        )));
    }
    let c = shape.channels;
    let mut data = Vec::with_capacity(shape.len());
    for (p, (m, cur)) in memory_warped
        .data()
        .chunks_exact(c)
        .zip(current.data().chunks_exact(c))
        .enumerate()
    {
        let (wm, wc) = (f64::from(weights.w_mem[p]), f64::from(weights.w_cur[p]));
        // renormalised in f64 so the f32 result stays inside the input interval
        let t = wm / (wm + wc);
        data.extend(
            m.iter()
                .zip(cur)
                .map(|(a, b)| (t * f64::from(*a) + (1.0 - t) * f64::from(*b)) as f32),
        );
    }
    Ok(FeatureMap::from_vec_unchecked(shape, data))
}

/// Per-level embeddings for a fixed pyramid layout.
#[derive(Debug, Clone)]
pub struct Aggregator {
    embeddings: Vec<Embedding>,
}

impl Aggregator {
    pub fn new(config: &EmbeddingConfig, shapes: &[Shape]) -> Result<Self> {
        let embeddings = shapes
            .iter()
            .enumerate()
            .map(|(level, s)| Embedding::new(config, s.channels, level))
            .collect::<Result<_>>()?;
        Ok(Self { embeddings })
    }

    pub fn embedding(&self, level: usize) -> &Embedding {
        &self.embeddings[level]
    }

    pub fn aggregate(
        &self,
        memory: &FeaturePyramid,
        current: &FeaturePyramid,
        flows: &FlowPyramid,
        use_scale: bool,
    ) -> Result<FeaturePyramid> {
        self.aggregate_traced(memory, current, flows, use_scale, &mut NoTrace)
    }

    /// Warps memory into alignment with `current`, then fuses level by level.
    pub fn aggregate_traced(
        &self,
        memory: &FeaturePyramid,
        current: &FeaturePyramid,
        flows: &FlowPyramid,
        use_scale: bool,
        tracer: &mut dyn Tracer,
    ) -> Result<FeaturePyramid> {
        let levels = current.len();
        if memory.len() != levels || flows.flows.len() != levels || flows.scales.len() != levels {
            return Err(Error::contract(format!(
                "misaligned levels: memory {}, current {}, flows {}, scales {}",
                memory.len(),
                levels,
                flows.flows.len(),
                flows.scales.len()
            )));
        }
        if self.embeddings.len() != levels {
            return Err(Error::contract(format!(
                "aggregator has {} levels, pyramid has {levels}",
                self.embeddings.len()
            )));
        }
        let mut out = Vec::with_capacity(levels);
        for i in 0..levels {
            let (mem, cur) = (memory.level(i), current.level(i));
            if mem.shape() != cur.shape() {
                return Err(Error::contract(format!(
                    "level {i}: memory {} vs current {}",
                    mem.shape(),
                    cur.shape()
                )));
            }
            let start = Instant::now();
            let warped = warp_feature(mem, &flows.flows[i])?.warped;
            let aligned = if use_scale {
                apply_scale_map(&warped, &flows.scales[i])?
            } else {
                warped
            };
            let mut fuse_time = start.elapsed();
            let e_mem = timed(tracer, Kernel::Embed, i, || self.embeddings[i].apply(&aligned))?;
            let e_cur = timed(tracer, Kernel::Embed, i, || self.embeddings[i].apply(cur))?;
            let start = Instant::now();
            let w = similarity_weights(&e_mem, &e_cur)?;
            let fused = aggregate_features(&aligned, cur, &w)?;
            fuse_time += start.elapsed();
            // alignment and fusion are reported as one aggregation event
            tracer.record(KernelEvent {
                kernel: Kernel::Aggregate,
                level: i,
                elapsed: fuse_time,
            });
            out.push(fused);
        }
        FeaturePyramid::new(out)
    }
}

pub fn aggregate_pyramid(
    memory: &FeaturePyramid,
    current: &FeaturePyramid,
    flows: &FlowPyramid,
    embed: &EmbeddingConfig,
) -> Result<FeaturePyramid> {
    Aggregator::new(embed, &current.shapes())?.aggregate(memory, current, flows, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EventLog;
    use rand::Rng;

    fn random_map(rng: &mut impl Rng, shape: Shape, lo: f32) -> FeatureMap {
        FeatureMap::new(shape, (0..shape.len()).map(|_| rng.random_range(lo..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn bottleneck_channel_plan() {
        let e = Embedding::new(&EmbeddingConfig { seed: 1 }, 4, 0).unwrap();
        assert_eq!(e.channel_plan(), [2, 2, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = random_map(&mut rng, Shape::new(3, 5, 4), -1.0);
        let out = e.apply(&input).unwrap();
        assert_eq!(out.shape(), Shape::new(3, 5, 8));
        assert_eq!(out, embed_feature(&input, &EmbeddingConfig { seed: 1 }).unwrap());
        let zero = embed_feature(&FeatureMap::zeros(Shape::new(2, 2, 4)), &EmbeddingConfig::default())
            .unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
        assert!(matches!(
            embed_feature(&FeatureMap::zeros(Shape::new(2, 2, 3)), &EmbeddingConfig::default()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn weights_identical_and_orthogonal() {
        let a = FeatureMap::new(Shape::new(1, 2, 2), vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let w = similarity_weights(&a, &a).unwrap();
        assert_eq!(w.memory(), &[0.5, 0.5]);
        let b = FeatureMap::new(Shape::new(1, 2, 2), vec![0.0, 3.0, 1.0, 0.0]).unwrap();
        let w = similarity_weights(&a, &b).unwrap();
        let expect = 1.0 / (1.0 + std::f64::consts::E);
        for (m, c) in w.memory().iter().zip(w.current()) {
            assert!((f64::from(*m) - expect).abs() < 1e-6);
            assert!((f64::from(*c) - (1.0 - expect)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_norm_embeddings_are_neutral() {
        let z = FeatureMap::zeros(Shape::new(1, 1, 2));
        let w = similarity_weights(&z, &z).unwrap();
        assert_eq!(w.memory(), &[0.5]);
    }

    #[test]
    fn degenerate_and_fixed_point_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = Shape::new(3, 3, 2);
        let m = random_map(&mut rng, shape, -1.0);
        let c = random_map(&mut rng, shape, -1.0);
        let only_cur = aggregate_features(&m, &c, &WeightPair::constant(3, 3, 0.0).unwrap()).unwrap();
        assert_eq!(only_cur, c);
        let w = WeightPair::constant(3, 3, 0.3).unwrap();
        assert_eq!(aggregate_features(&c, &c, &w).unwrap(), c);
        let out = aggregate_features(&m, &c, &w).unwrap();
        for i in 0..shape.len() {
            let expect = 0.3 * f64::from(m.data()[i]) + 0.7 * f64::from(c.data()[i]);
            assert!((f64::from(out.data()[i]) - expect).abs() < 1e-6);
        }
        assert!(aggregate_features(&m, &c, &WeightPair::constant(2, 3, 0.3).unwrap()).is_err());
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(WeightPair::new(1, 1, vec![0.6], vec![0.6]).is_err());
        assert!(WeightPair::new(1, 1, vec![-0.1], vec![1.1]).is_err());
    }

    #[test]
    fn pyramid_fixed_point_and_call_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shapes: Vec<_> = [10, 5, 3, 2, 1].iter().map(|s| Shape::new(*s, *s, 4)).collect();
        let pyr =
            FeaturePyramid::new(shapes.iter().map(|s| random_map(&mut rng, *s, 0.0)).collect())
                .unwrap();
        let agg = Aggregator::new(&EmbeddingConfig { seed: 3 }, &shapes).unwrap();
        let mut log = EventLog::default();
        let out = agg
            .aggregate_traced(&pyr, &pyr, &FlowPyramid::identity(&shapes), true, &mut log)
            .unwrap();
        assert_eq!(out, pyr);
        assert_eq!(log.count(Kernel::Embed), 10);
        assert_eq!(log.count(Kernel::Aggregate), 5);
        let short = FlowPyramid::identity(&shapes[..4]);
        assert!(agg.aggregate(&pyr, &pyr, &short, true).is_err());
    }
}
