//! Dense grid containers shared by every stage of the pipeline.
//!
//! All grids are row-major and channel-last: the value at row `y`, column `x`,
//! channel `c` of an `H x W x C` grid lives at `(y * W + x) * C + c`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height, width and channel count of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

fn check_len(what: &str, shape: Shape, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::contract(format!(
            "{what} of shape {shape} needs {} values, got {len}",
            shape.len()
        )));
    }
    Ok(())
}

fn check_finite(what: &str, data: &[f32]) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::contract(format!(
            "{what} has a non-finite value at index {i}"
        )));
    }
    Ok(())
}

/// RGB frame with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_len("image", Shape::new(height, width, 3), data.len())?;
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::contract(format!(
                "image value {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, 3)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * 3;
        &self.data[i..i + 3]
    }
}

/// Dense `H x W x C` activation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        check_len("feature map", shape, data.len())?;
        check_finite("feature map", &data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a map by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(shape, data)
    }

    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    /// Channel vector at one grid position.
    #[inline]
    pub fn cell(&self, y: usize, x: usize) -> &[f32] {
        let c = self.shape.channels;
        let i = (y * self.shape.width + x) * c;
        &self.data[i..i + c]
    }

    /// Single-channel slice of this map.
    pub fn channel(&self, c: usize) -> FeatureMap {
        assert!(c < self.shape.channels);
        let shape = Shape::new(self.shape.height, self.shape.width, 1);
        let data = self
            .data
            .chunks_exact(self.shape.channels)
            .map(|cell| cell[c])
            .collect();
        FeatureMap { shape, data }
    }

    /// Concatenates equally sized maps along the channel axis.
    pub fn stack_channels(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::contract("cannot stack zero maps"))?;
        let (h, w) = first.shape.spatial();
        if let Some(m) = maps.iter().find(|m| m.shape.spatial() != (h, w)) {
            return Err(Error::contract(format!(
                "cannot stack {} with {}",
                first.shape, m.shape
            )));
        }
        let channels = maps.iter().map(|m| m.channels()).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for p in 0..h * w {
            for m in maps {
                let c = m.channels();
                data.extend_from_slice(&m.data[p * c..(p + 1) * c]);
            }
        }
        Ok(FeatureMap {
            shape: Shape::new(h, w, channels),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Ordered multi-scale features, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::contract("a pyramid needs at least one level"));
        }
        for pair in levels.windows(2) {
            if pair[1].shape().area() >= pair[0].shape().area() {
                return Err(Error::contract(format!(
                    "pyramid levels must shrink: {} followed by {}",
                    pair[0].shape(),
                    pair[1].shape()
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &FeatureMap {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.levels.iter().map(FeatureMap::shape).collect()
    }

    pub fn into_levels(self) -> Vec<FeatureMap> {
        self.levels
    }
}

/// Per-position `(dx, dy)` displacement in grid cells of its own resolution.
///
/// Positive `dx` points right, positive `dy` points down. For a flow from the
/// current frame to its key frame, position `p` samples the key features at
/// `p + flow(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_len("flow field", Shape::new(height, width, 2), data.len())?;
        check_finite("flow field", &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        assert!(dx.is_finite() && dy.is_finite());
        let data = std::iter::repeat_n([dx, dy], height * width)
            .flatten()
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data.push(dx);
                data.push(dy);
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Largest displacement magnitude (Euclidean) in the field.
    pub fn max_magnitude(&self) -> f32 {
        self.data
            .chunks_exact(2)
            .map(|d| d[0].hypot(d[1]))
            .fold(0.0, f32::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

/// Non-negative multiplicative refinement applied element-wise after warping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    shape: Shape,
    data: Vec<f32>,
}

impl ScaleMap {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        check_len("scale map", shape, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract(format!(
                "scale map value {} at index {i} is not a finite non-negative number",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn ones(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![1.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_ones(&self) -> bool {
        self.data.iter().all(|v| *v == 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_last() {
        let m = FeatureMap::from_fn(Shape::new(2, 3, 2), |y, x, c| (y * 100 + x * 10 + c) as f32)
            .unwrap();
        assert_eq!(m.data()[0..4], [0.0, 1.0, 10.0, 11.0]);
        assert_eq!(m.get(1, 2, 1), 121.0);
        assert_eq!(m.cell(1, 0), &[100.0, 101.0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Image::new(1, 1, vec![0.0, 0.5]).is_err());
        assert!(FeatureMap::new(Shape::new(1, 1, 1), vec![f32::NAN]).is_err());
        assert!(ScaleMap::new(Shape::new(1, 1, 1), vec![-0.1]).is_err());
        assert!(FlowField::new(1, 1, vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn pyramid_must_shrink() {
        let a = FeatureMap::zeros(Shape::new(4, 4, 2));
        let b = FeatureMap::zeros(Shape::new(2, 2, 2));
        assert!(FeaturePyramid::new(vec![a.clone(), b.clone()]).is_ok());
        assert!(FeaturePyramid::new(vec![b, a.clone()]).is_err());
        assert!(FeaturePyramid::new(vec![a.clone(), a]).is_err());
        assert!(FeaturePyramid::new(vec![]).is_err());
    }

    #[test]
    fn channel_slicing_and_stacking_invert() {
        let m = FeatureMap::from_fn(Shape::new(3, 2, 3), |y, x, c| (y + 2 * x + 7 * c) as f32)
            .unwrap();
        let slices: Vec<_> = (0..3).map(|c| m.channel(c)).collect();
        assert_eq!(FeatureMap::stack_channels(&slices).unwrap(), m);
    }
}
