//! Brute-force reference implementations and the self-check suites built on
//! them.
//!
//! The references in [`oracle`] are written directly from the definitions
//! and share no code with the fast paths they check.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate_features, similarity_weights};
use crate::detect::{evaluate_frame_map, nms, BBox, Detection, LabeledBox};
use crate::error::Result;
use crate::pipeline::select_training_triplet;
use crate::tensor::{FeatureMap, FlowField, Shape};
use crate::warp::{warp_backward, warp_feature};

pub mod oracle {
    use std::cmp::Ordering;

    use crate::detect::Detection;
    use crate::tensor::Shape;

    /// Bilinear kernel weight between grid point `q` and sample point `p`.
    fn kernel(qx: f64, qy: f64, px: f64, py: f64) -> f64 {
        (1.0 - (qx - px).abs()).max(0.0) * (1.0 - (qy - py).abs()).max(0.0)
    }

    /// `out(p) = sum_q G(q, p + flow(p)) x(q)` summed over every grid point.
    pub fn warp_all_pairs(data: &[f64], shape: Shape, flow: &[f64]) -> Vec<f64> {
        let (h, w, c) = (shape.height, shape.width, shape.channels);
        let mut out = vec![0.0; h * w * c];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let sx = px as f64 + flow[2 * p];
                let sy = py as f64 + flow[2 * p + 1];
                for qy in 0..h {
                    for qx in 0..w {
                        let g = kernel(qx as f64, qy as f64, sx, sy);
                        if g == 0.0 {
                            continue;
                        }
                        let q = qy * w + qx;
                        for ch in 0..c {
                            out[p * c + ch] += g * data[q * c + ch];
                        }
                    }
                }
            }
        }
        out
    }

    /// `sum(upstream * warp_all_pairs(data, flow))`.
    pub fn warp_loss(data: &[f64], shape: Shape, flow: &[f64], upstream: &[f64]) -> f64 {
        warp_all_pairs(data, shape, flow)
            .iter()
            .zip(upstream)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Central differences of [`warp_loss`] for every data and flow entry.
    pub fn finite_difference(
        data: &[f64],
        shape: Shape,
        flow: &[f64],
        upstream: &[f64],
        step: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let diff = |v: &[f64], i: usize, f: &dyn Fn(&[f64]) -> f64| {
            let mut plus = v.to_vec();
            let mut minus = v.to_vec();
            plus[i] += step;
            minus[i] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step)
        };
        let gd = (0..data.len())
            .map(|i| diff(data, i, &|d| warp_loss(d, shape, flow, upstream)))
            .collect();
        let gf = (0..flow.len())
            .map(|i| diff(flow, i, &|f| warp_loss(data, shape, f, upstream)))
            .collect();
        (gd, gf)
    }

    fn overlap(a: &Detection, b: &Detection) -> f32 {
        let (a, b) = (a.bbox, b.bbox);
        let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let inter = w * h;
        let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn before(a: &Detection, b: &Detection) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.bbox.x1.total_cmp(&b.bbox.x1))
            .then(a.bbox.y1.total_cmp(&b.bbox.y1))
            .then(a.bbox.x2.total_cmp(&b.bbox.x2))
            .then(a.bbox.y2.total_cmp(&b.bbox.y2))
    }

    /// Keep the best remaining box, drop every same-class box overlapping it
    /// by more than `threshold`, repeat on the rest.
    pub fn nms_reference(detections: &[Detection], threshold: f32) -> Vec<Detection> {
        let mut pool = detections.to_vec();
        let mut kept = Vec::new();
        while let Some(best) = pool.iter().copied().min_by(before) {
            kept.push(best);
            pool.retain(|d| {
                !(d.class_id == best.class_id && (d == &best || overlap(d, &best) > threshold))
            });
        }
        kept.sort_by(before);
        kept
    }

    /// `(w_mem, w_cur)` for embeddings `m` and `c` straight from the
    /// definition with unshifted exponentials.
    pub fn weights_reference(m: &[f64], c: &[f64]) -> (f64, f64) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = |a: &[f64], b: &[f64]| {
            let d = norm(a) * norm(b);
            if d == 0.0 {
                0.0
            } else {
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / d
            }
        };
        let (em, ec) = (cos(m, c).exp(), cos(c, c).exp());
        (em / (em + ec), ec / (em + ec))
    }
}

/// Outcome of one self-check suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Largest observed deviation, in the suite's own measure.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<12} instances={} failures={} worst={:.3e} tol={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.failures,
            self.worst,
            self.tolerance
        )
    }
}

/// A random feature map up to `max` per axis and a flow of up to `reach`
/// cells, as f64 buffers.
pub fn random_warp_instance(
    rng: &mut impl Rng,
    max: (usize, usize, usize),
    reach: f64,
) -> (Shape, Vec<f64>, Vec<f64>) {
    let shape = Shape::new(
        rng.random_range(1..=max.0),
        rng.random_range(1..=max.1),
        rng.random_range(1..=max.2),
    );
    let data = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let flow = (0..shape.area() * 2)
        .map(|_| rng.random_range(-reach..reach))
        .collect();
    (shape, data, flow)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| f64::from(*x)).collect()
}

/// Fast warp against the all-pairs sum, plus the zero-flow identity.
pub fn warp_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let (shape, data, flow) = random_warp_instance(&mut rng, (6, 6, 3), 3.0);
        // inputs rounded to f32 first so both sides see the same values
        let (data32, flow32) = (to_f32(&data), to_f32(&flow));
        let fm = FeatureMap::new(shape, data32.clone())?;
        let ff = FlowField::new(shape.height, shape.width, flow32.clone())?;
        let fast = warp_feature(&fm, &ff)?.warped;
        let reference = oracle::warp_all_pairs(&to_f64(&data32), shape, &to_f64(&flow32));
        let err = fast
            .data()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (f64::from(*a) - b).abs())
            .fold(0.0, f64::max);
        let zero = warp_feature(&fm, &FlowField::zeros(shape.height, shape.width))?;
        let identity = zero.warped == fm && zero.mask.count_valid() == shape.area();
        worst = worst.max(err);
        if err > tol || !identity {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "warp",
        instances,
        failures,
        worst,
        tolerance: tol,
    })
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Analytic warp gradients against central differences of the all-pairs
/// sum, with sample points kept off integer coordinates.
pub fn gradient_suite(seed: u64, instances: usize, step: f64) -> Result<SuiteReport> {
    let tol = 1e-3;
    let floor = 1e-2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let (shape, data, mut flow) = random_warp_instance(&mut rng, (5, 5, 3), 2.5);
        for (i, f) in flow.iter_mut().enumerate() {
            let base = if i % 2 == 0 {
                (i / 2 % shape.width) as f64
            } else {
                (i / 2 / shape.width) as f64
            };
            let s = base + *f;
            let frac = s - s.floor();
            if !(0.05..=0.95).contains(&frac) {
                *f = s.floor() + rng.random_range(0.05..0.95) - base;
            }
        }
        let upstream: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (d32, f32_, u32_) = (to_f32(&data), to_f32(&flow), to_f32(&upstream));
        let (gd, gf) = warp_backward(
            &FeatureMap::new(shape, d32.clone())?,
            &FlowField::new(shape.height, shape.width, f32_.clone())?,
            &FeatureMap::new(shape, u32_.clone())?,
        )?;
        let (nd, nf) =
            oracle::finite_difference(&to_f64(&d32), shape, &to_f64(&f32_), &to_f64(&u32_), step);
        let err = gd
            .data()
            .iter()
            .zip(&nd)
            .chain(gf.data().iter().zip(&nf))
            .map(|(a, n)| relative_error(f64::from(*a), *n, floor))
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > tol {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "gradient",
        instances,
        failures,
        worst,
        tolerance: tol,
    })
}

/// Fusion contracts on every embedding pair from a small value lattice.
pub fn aggregation_suite() -> Result<SuiteReport> {
    let tol = 1e-6;
    let lattice = [-1.0f32, 0.0, 0.5, 1.0];
    let vectors: Vec<[f32; 2]> = lattice
        .iter()
        .flat_map(|a| lattice.iter().map(move |b| [*a, *b]))
        .collect();
    let (mut failures, mut worst, mut instances) = (0, 0.0f64, 0);
    for m in &vectors {
        for c in &vectors {
            instances += 1;
            let shape = Shape::new(1, 1, 2);
            let em = FeatureMap::new(shape, m.to_vec())?;
            let ec = FeatureMap::new(shape, c.to_vec())?;
            let w = similarity_weights(&em, &ec)?;
            let (rm, rc) = oracle::weights_reference(&to_f64(m), &to_f64(c));
            let (wm, wc) = (f64::from(w.memory()[0]), f64::from(w.current()[0]));
            let mut err = (wm - rm).abs().max((wc - rc).abs()).max((wm + wc - 1.0).abs());
            let fused = aggregate_features(&em, &ec, &w)?;
            for ((f, a), b) in fused.data().iter().zip(m).zip(c) {
                if *f < a.min(*b) || *f > a.max(*b) {
                    err = f64::INFINITY;
                }
            }
            let same = aggregate_features(&ec, &ec, &w)?;
            if same != ec {
                err = f64::INFINITY;
            }
            worst = worst.max(err);
            if err > tol {
                failures += 1;
            }
        }
    }
    Ok(SuiteReport {
        name: "aggregation",
        instances,
        failures,
        worst,
        tolerance: tol,
    })
}

/// `n` random detections over `classes` classes. Scores come from a coarse
/// lattice to exercise ties.
pub fn random_detections(rng: &mut impl Rng, n: usize, classes: u32) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..0.8f32), rng.random_range(0.0..0.8f32));
            let (w, h) = (rng.random_range(0.05..0.3f32), rng.random_range(0.05..0.3f32));
            Detection {
                bbox: BBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0)),
                class_id: rng.random_range(0..classes),
                score: rng.random_range(0..20u8) as f32 / 20.0,
            }
        })
        .collect()
}

/// Fast NMS against the recursive reference, compared exactly.
pub fn nms_suite(seed: u64, instances: usize, boxes: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..instances {
        let dets = random_detections(&mut rng, boxes, 3);
        let thr = rng.random_range(0.2..0.7f32);
        if nms(&dets, thr) != oracle::nms_reference(&dets, thr) {
            failures += 1;
        }
    }
    SuiteReport {
        name: "nms",
        instances,
        failures,
        worst: failures as f64,
        tolerance: 0.0,
    }
}

fn labeled(x1: f32, y1: f32, x2: f32, y2: f32, class_id: u32) -> LabeledBox {
    LabeledBox {
        bbox: BBox::new(x1, y1, x2, y2),
        class_id,
    }
}

/// One ground-truth box, a confident miss ranked above a hit: precision is
/// 1/2 at full recall, so AP is 1/2.
pub fn ap_half_fixture() -> (Vec<Vec<Detection>>, Vec<Vec<LabeledBox>>) {
    let gt = vec![vec![labeled(0.1, 0.1, 0.4, 0.4, 0)]];
    let dets = vec![vec![
        Detection {
            bbox: BBox::new(0.6, 0.6, 0.9, 0.9),
            class_id: 0,
            score: 0.9,
        },
        Detection {
            bbox: BBox::new(0.1, 0.1, 0.4, 0.4),
            class_id: 0,
            score: 0.8,
        },
    ]];
    (dets, gt)
}

/// Every ground-truth box over three frames detected exactly, nothing else.
pub fn perfect_fixture() -> (Vec<Vec<Detection>>, Vec<Vec<LabeledBox>>) {
    let gt: Vec<Vec<LabeledBox>> = (0..3)
        .map(|f| {
            let o = f as f32 * 0.1;
            vec![labeled(o, 0.1, o + 0.3, 0.5, 0), labeled(0.5, o, 0.9, o + 0.4, 1)]
        })
        .collect();
    let dets = gt
        .iter()
        .map(|g| {
            g.iter()
                .map(|b| Detection {
                    bbox: b.bbox,
                    class_id: b.class_id,
                    score: 0.9,
                })
                .collect()
        })
        .collect();
    (dets, gt)
}

pub fn map_suite() -> Result<SuiteReport> {
    let tol = 1e-12;
    let (d, g) = ap_half_fixture();
    let half = evaluate_frame_map(&d, &g, 0.5)?.map;
    let (d, g) = perfect_fixture();
    let perfect = evaluate_frame_map(&d, &g, 0.5)?.map;
    let errs = [(half - 0.5).abs(), (perfect - 1.0).abs()];
    Ok(SuiteReport {
        name: "map",
        instances: 2,
        failures: errs.iter().filter(|e| **e > tol).count(),
        worst: errs.iter().copied().fold(0.0, f64::max),
        tolerance: tol,
    })
}

/// Pearson chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Draws `samples` triplets and tallies the key-to-target offsets. Returns
/// the tally and the number of draws violating the index ordering.
pub fn sample_offsets(
    seed: u64,
    samples: usize,
    clip_len: usize,
    mem_to_key: usize,
    key_to_target: usize,
) -> Result<(BTreeMap<usize, usize>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = BTreeMap::new();
    let mut bad = 0;
    for _ in 0..samples {
        let t = select_training_triplet(clip_len, mem_to_key, key_to_target, &mut rng)?;
        if !(t.mem < t.key && t.key <= t.target && t.target < clip_len) {
            bad += 1;
        }
        *tally.entry(t.target - t.key).or_insert(0) += 1;
    }
    Ok((tally, bad))
}

/// Offsets uniform over `[0, 10]`: the statistic must stay under the 1%
/// critical value of a chi-square with 10 degrees of freedom.
pub fn sampler_suite(seed: u64, samples: usize) -> Result<SuiteReport> {
    const CRITICAL_10DF_1PCT: f64 = 23.209;
    let (tally, bad) = sample_offsets(seed, samples, 40, 10, 10)?;
    let counts: Vec<usize> = (0..=10).map(|o| tally.get(&o).copied().unwrap_or(0)).collect();
    let stray = tally.keys().filter(|o| **o > 10).count();
    let stat = chi_square_uniform(&counts);
    Ok(SuiteReport {
        name: "sampler",
        instances: samples,
        failures: bad + stray + usize::from(stat > CRITICAL_10DF_1PCT),
        worst: stat,
        tolerance: CRITICAL_10DF_1PCT,
    })
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        warp_suite(seed, 1000)?,
        gradient_suite(seed, 100, 1e-3)?,
        aggregation_suite()?,
        nms_suite(seed, 1000, 50),
        map_suite()?,
        sampler_suite(seed, 100_000)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pairs_matches_hand_case() {
        // 1x2 grid, sample halfway between the two cells
        let out = oracle::warp_all_pairs(&[2.0, 4.0], Shape::new(1, 2, 1), &[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn reference_nms_drops_overlaps() {
        let d = |x: f32, s: f32| Detection {
            bbox: BBox::new(x, 0.0, x + 0.5, 0.5),
            class_id: 0,
            score: s,
        };
        let kept = oracle::nms_reference(&[d(0.0, 0.5), d(0.05, 0.9), d(0.5, 0.1)], 0.5);
        assert_eq!(kept, vec![d(0.05, 0.9), d(0.5, 0.1)]);
    }

    #[test]
    fn small_suites_pass() {
        for r in [
            warp_suite(1, 50).unwrap(),
            gradient_suite(1, 5, 1e-3).unwrap(),
            aggregation_suite().unwrap(),
            nms_suite(1, 50, 20),
            map_suite().unwrap(),
            sampler_suite(1, 20_000).unwrap(),
        ] {
            assert!(r.passed(), "{r}");
        }
    }
}
