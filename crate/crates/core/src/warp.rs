//! Inverse warping with bilinear sampling.
//!
//! Output position `p` reads the key features at `p + flow(p)`. Samples that
//! fall outside the grid read zero. Each output cell is an independent
//! four-term sum, so results do not depend on evaluation order.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, FeaturePyramid, FlowField, ScaleMap, Shape};
use crate::trace::{timed, Kernel, NoTrace, Tracer};

/// Scalar-generic gather and its transpose on raw channel-last buffers.
///
/// The public [`FeatureMap`] API instantiates these with `f32`; gradient
/// checks can run the same code in `f64`.
pub mod kernel {
    use num_traits::Float;

    use crate::tensor::Shape;

    /// Four neighbours of a sample point with their bilinear weights.
    #[derive(Debug, Clone, Copy)]
    pub struct Footprint<T> {
        pub x0: i64,
        pub y0: i64,
        pub fx: T,
        pub fy: T,
    }

    impl<T: Float> Footprint<T> {
        pub fn at(x: T, y: T) -> Self {
            let xf = x.floor();
            let yf = y.floor();
            Self {
                x0: xf.to_i64().unwrap_or(i64::MIN / 2),
                y0: yf.to_i64().unwrap_or(i64::MIN / 2),
                fx: x - xf,
                fy: y - yf,
            }
        }

        /// `((x, y), weight)` for the four corners, top-left first.
        pub fn corners(&self) -> [((i64, i64), T); 4] {
            let one = T::one();
            let (fx, fy) = (self.fx, self.fy);
            [
                ((self.x0, self.y0), (one - fx) * (one - fy)),
                ((self.x0 + 1, self.y0), fx * (one - fy)),
                ((self.x0, self.y0 + 1), (one - fx) * fy),
                ((self.x0 + 1, self.y0 + 1), fx * fy),
            ]
        }

        /// Every corner carrying non-zero weight lies inside an `h x w` grid.
        pub fn in_bounds(&self, h: usize, w: usize) -> bool {
            self.corners()
                .iter()
                .all(|&((x, y), wt)| wt == T::zero() || inside(x, y, h, w))
        }
    }

    #[inline]
    pub fn inside(x: i64, y: i64, h: usize, w: usize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
    }

    #[inline]
    fn offset(x: i64, y: i64, shape: Shape) -> Option<usize> {
        inside(x, y, shape.height, shape.width)
            .then(|| (y as usize * shape.width + x as usize) * shape.channels)
    }

    /// Bilinear sample of all channels at `(x, y)`, accumulated into `out`.
    pub fn sample_into<T: Float>(data: &[T], shape: Shape, x: T, y: T, out: &mut [T]) {
        out.fill(T::zero());
        let c = shape.channels;
        for ((cx, cy), wt) in Footprint::at(x, y).corners() {
            if let Some(at) = offset(cx, cy, shape) {
                for (o, v) in out.iter_mut().zip(&data[at..at + c]) {
                    *o = *o + wt * *v;
                }
            }
        }
    }

    /// Returns the warped buffer and the per-position validity mask.
    pub fn gather<T: Float>(data: &[T], shape: Shape, flow: &[T]) -> (Vec<T>, Vec<bool>) {
        let c = shape.channels;
        let mut out = vec![T::zero(); shape.len()];
        let mut mask = Vec::with_capacity(shape.area());
        for y in 0..shape.height {
            for x in 0..shape.width {
                let p = y * shape.width + x;
                let sx = T::from(x).unwrap() + flow[2 * p];
                let sy = T::from(y).unwrap() + flow[2 * p + 1];
                mask.push(Footprint::at(sx, sy).in_bounds(shape.height, shape.width));
                sample_into(data, shape, sx, sy, &mut out[p * c..(p + 1) * c]);
            }
        }
        (out, mask)
    }

    /// Gradients of `sum(upstream * gather(data, flow))` with respect to
    /// `data` and `flow`.
    pub fn gather_backward<T: Float>(
        data: &[T],
        shape: Shape,
        flow: &[T],
        upstream: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let c = shape.channels;
        let one = T::one();
        let mut grad_data = vec![T::zero(); data.len()];
        let mut grad_flow = vec![T::zero(); flow.len()];
        let zeros = vec![T::zero(); c];
        for y in 0..shape.height {
            for x in 0..shape.width {
                let p = y * shape.width + x;
                let sx = T::from(x).unwrap() + flow[2 * p];
                let sy = T::from(y).unwrap() + flow[2 * p + 1];
                let fp = Footprint::at(sx, sy);
                let g = &upstream[p * c..(p + 1) * c];
                let corners = fp.corners();
                let at: [Option<usize>; 4] = corners.map(|((cx, cy), _)| offset(cx, cy, shape));
                for (&((_, _), wt), slot) in corners.iter().zip(&at) {
                    if let Some(o) = slot {
                        for (gd, gu) in grad_data[*o..*o + c].iter_mut().zip(g) {
                            *gd = *gd + wt * *gu;
                        }
                    }
                }
                let v = |i: usize| at[i].map_or(&zeros[..], |o| &data[o..o + c]);
                let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let dx = (one - fp.fy) * (v01[ch] - v00[ch]) + fp.fy * (v11[ch] - v10[ch]);
                    let dy = (one - fp.fx) * (v10[ch] - v00[ch]) + fp.fx * (v11[ch] - v01[ch]);
                    gx = gx + g[ch] * dx;
                    gy = gy + g[ch] * dy;
                }
                grad_flow[2 * p] = gx;
                grad_flow[2 * p + 1] = gy;
            }
        }
        (grad_data, grad_flow)
    }
}

/// Per-position flag: the bilinear footprint stayed inside the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn all(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        ValidMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub warped: FeatureMap,
    pub mask: ValidMask,
}

/// Bilinear interpolation of every channel at `(x, y)`; out-of-grid
/// neighbours contribute zero.
pub fn bilinear_sample(feature: &FeatureMap, x: f32, y: f32) -> Vec<f32> {
    let mut out = vec![0.0; feature.channels()];
    kernel::sample_into(feature.data(), feature.shape(), x, y, &mut out);
    out
}

fn check_flow(feature: Shape, flow: &FlowField) -> Result<()> {
    if feature.spatial() != flow.spatial() {
        return Err(Error::contract(format!(
            "flow is {}x{} but features are {feature}",
            flow.height(),
            flow.width()
        )));
    }
    Ok(())
}

pub fn warp_feature(key_feature: &FeatureMap, flow: &FlowField) -> Result<WarpResult> {
    let shape = key_feature.shape();
    check_flow(shape, flow)?;
    let (data, mask) = kernel::gather(key_feature.data(), shape, flow.data());
    Ok(WarpResult {
        warped: FeatureMap::from_vec_unchecked(shape, data),
        mask: ValidMask {
            height: shape.height,
            width: shape.width,
            data: mask,
        },
    })
}

pub fn apply_scale_map(feature: &FeatureMap, scale: &ScaleMap) -> Result<FeatureMap> {
    if feature.shape() != scale.shape() {
        return Err(Error::contract(format!(
            "scale map is {} but features are {}",
            scale.shape(),
            feature.shape()
        )));
    }
    let data = feature
        .data()
        .iter()
        .zip(scale.data())
        .map(|(f, s)| f * s)
        .collect();
    Ok(FeatureMap::from_vec_unchecked(feature.shape(), data))
}

/// Gradients of `sum(upstream * warp(key, flow))` for the key features and
/// the flow.
pub fn warp_backward(
    key_feature: &FeatureMap,
    flow: &FlowField,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, FlowField)> {
    let shape = key_feature.shape();
    check_flow(shape, flow)?;
    if upstream.shape() != shape {
        return Err(Error::contract(format!(
            "upstream gradient is {} but features are {shape}",
            upstream.shape()
        )));
    }
    let (gd, gf) = kernel::gather_backward(key_feature.data(), shape, flow.data(), upstream.data());
    Ok((
        FeatureMap::from_vec_unchecked(shape, gd),
        FlowField::new(shape.height, shape.width, gf)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPyramid {
    pub pyramid: FeaturePyramid,
    pub masks: Vec<ValidMask>,
}

/// Warps every level with its own flow and, when given, refines it with the
/// matching scale map.
pub fn warp_pyramid(
    key: &FeaturePyramid,
    flows: &[FlowField],
    scales: Option<&[ScaleMap]>,
) -> Result<WarpedPyramid> {
    warp_pyramid_traced(key, flows, scales, &mut NoTrace)
}

pub fn warp_pyramid_traced(
    key: &FeaturePyramid,
    flows: &[FlowField],
    scales: Option<&[ScaleMap]>,
    tracer: &mut dyn Tracer,
) -> Result<WarpedPyramid> {
    if flows.len() != key.len() {
        return Err(Error::contract(format!(
            "{} flows for a {}-level pyramid",
            flows.len(),
            key.len()
        )));
    }
    if let Some(s) = scales {
        if s.len() != key.len() {
            return Err(Error::contract(format!(
                "{} scale maps for a {}-level pyramid",
                s.len(),
                key.len()
            )));
        }
    }
    let mut levels = Vec::with_capacity(key.len());
    let mut masks = Vec::with_capacity(key.len());
    for (i, (feature, flow)) in key.levels().iter().zip(flows).enumerate() {
        let WarpResult { warped, mask } =
            timed(tracer, Kernel::Warp, i, || warp_feature(feature, flow))?;
        let refined = match scales {
            Some(s) => timed(tracer, Kernel::Scale, i, || apply_scale_map(&warped, &s[i]))?,
            None => warped,
        };
        levels.push(refined);
        masks.push(mask);
    }
    Ok(WarpedPyramid {
        pyramid: FeaturePyramid::new(levels)?,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EventLog;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut impl Rng, shape: Shape) -> FeatureMap {
        FeatureMap::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn sample_constant_and_center() {
        let m = FeatureMap::filled(Shape::new(3, 4, 2), 5.0);
        assert_eq!(bilinear_sample(&m, 1.3, 0.7), vec![5.0, 5.0]);
        let m = FeatureMap::new(Shape::new(2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&m, 0.5, 0.5), vec![1.5]);
        assert_eq!(bilinear_sample(&m, -2.0, -2.0), vec![0.0]);
        // half outside reads zero for the missing corners
        assert_eq!(bilinear_sample(&m, 1.5, 0.0), vec![0.5]);
    }

    #[test]
    fn zero_flow_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, Shape::new(5, 4, 3));
        let r = warp_feature(&m, &FlowField::zeros(5, 4)).unwrap();
        assert_eq!(r.warped, m);
        assert_eq!(r.mask.count_valid(), 20);
    }

    #[test]
    fn unit_shift_reads_next_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_map(&mut rng, Shape::new(3, 4, 2));
        let r = warp_feature(&m, &FlowField::constant(3, 4, 1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..2 {
                    let expect = if x + 1 < 4 { m.get(y, x + 1, c) } else { 0.0 };
                    assert_eq!(r.warped.get(y, x, c), expect);
                }
                assert_eq!(r.mask.get(y, x), x + 1 < 4);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let m = FeatureMap::zeros(Shape::new(3, 4, 2));
        let err = warp_feature(&m, &FlowField::zeros(4, 3)).unwrap_err().to_string();
        assert!(err.contains("4x3") && err.contains("3x4x2"), "{err}");
        let s = ScaleMap::ones(Shape::new(3, 4, 1));
        assert!(apply_scale_map(&m, &s).is_err());
        assert!(warp_backward(&m, &FlowField::zeros(3, 4), &FeatureMap::zeros(Shape::new(3, 4, 1)))
            .is_err());
    }

    #[test]
    fn scale_map_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(3, 3, 4);
        let m = random_map(&mut rng, shape);
        assert_eq!(apply_scale_map(&m, &ScaleMap::ones(shape)).unwrap(), m);
        let doubled = apply_scale_map(&m, &ScaleMap::filled(shape, 2.0).unwrap()).unwrap();
        assert!(doubled.data().iter().zip(m.data()).all(|(d, v)| *d == 2.0 * v));
        let s = ScaleMap::new(shape, (0..shape.len()).map(|_| rng.random_range(0.0..3.0)).collect())
            .unwrap();
        let out = apply_scale_map(&m, &s).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..4 {
                    let i = (y * 3 + x) * 4 + c;
                    assert_eq!(out.get(y, x, c), m.data()[i] * s.data()[i]);
                }
            }
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(4, 4, 2);
        let m = random_map(&mut rng, shape);
        let flow = FlowField::from_fn(4, 4, |_, _| (rng.random_range(-1.5..1.5), 0.3)).unwrap();
        let (gd, gf) = warp_backward(&m, &flow, &FeatureMap::zeros(shape)).unwrap();
        assert!(gd.data().iter().all(|v| *v == 0.0));
        assert!(gf.is_zero());

        let (gd, _) =
            warp_backward(&m, &FlowField::zeros(4, 4), &FeatureMap::filled(shape, 1.0)).unwrap();
        assert!(gd.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn pyramid_warps_each_level_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shapes = [8, 4, 2, 1].map(|s| Shape::new(s, s, 2));
        let pyr =
            FeaturePyramid::new(shapes.iter().map(|s| random_map(&mut rng, *s)).collect()).unwrap();
        let zeros: Vec<_> = shapes.iter().map(|s| FlowField::zeros(s.height, s.width)).collect();
        let ones: Vec<_> = shapes.iter().map(|s| ScaleMap::ones(*s)).collect();
        let mut log = EventLog::default();
        let out = warp_pyramid_traced(&pyr, &zeros, Some(&ones), &mut log).unwrap();
        assert_eq!(out.pyramid, pyr);
        assert_eq!(log.count(Kernel::Warp), 4);
        assert_eq!(log.count(Kernel::Scale), 4);
        assert!(warp_pyramid(&pyr, &zeros[..3], None).is_err());
        assert!(warp_pyramid(&pyr, &zeros, Some(&ones[..2])).is_err());
    }
}
