//! Deterministic stand-in for a convolutional backbone.
//!
//! Level 0 is a non-overlapping patch convolution over the image whose stride
//! is chosen so that the configured grid covers the image (ceil mode). Each
//! further level is a strided `K x K` convolution over the previous level.
//! Every layer is bias-free and followed by `max(0, x)`, and out-of-range
//! inputs read as zero. Cells whose receptive field lies entirely inside the
//! image therefore shift exactly with integer-stride translations of the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, FeaturePyramid, Image, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub seed: u64,
    /// Input `(height, width)` in pixels.
    pub input: (usize, usize),
    /// Output shape of each pyramid level, finest first.
    pub levels: Vec<Shape>,
}

impl Default for ExtractorConfig {
    /// 300x300 input with the first five SSD300 grid sizes.
    fn default() -> Self {
        Self {
            seed: 0,
            input: (300, 300),
            levels: vec![
                Shape::new(38, 38, 16),
                Shape::new(19, 19, 32),
                Shape::new(10, 10, 32),
                Shape::new(5, 5, 32),
                Shape::new(3, 3, 32),
            ],
        }
    }
}

impl ExtractorConfig {
    /// Input of `(height, width)` pixels whose levels halve from
    /// `input / first_stride`.
    pub fn halving(seed: u64, input: (usize, usize), first_stride: usize, channels: &[usize]) -> Self {
        let (mut h, mut w) = (input.0.div_ceil(first_stride), input.1.div_ceil(first_stride));
        let levels = channels
            .iter()
            .map(|&c| {
                let s = Shape::new(h, w, c);
                (h, w) = (h.div_ceil(2), w.div_ceil(2));
                s
            })
            .collect();
        Self { seed, input, levels }
    }
}

/// One spatial axis of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Axis {
    stride: usize,
    /// Window for output `j` starts at `stride * j - pad`.
    pad: usize,
    kernel: usize,
}

impl Axis {
    fn resolve(input: usize, output: usize, first: bool) -> Result<Self> {
        if output == 0 || output > input {
            return Err(Error::config(format!(
                "level size {output} cannot be produced from size {input}"
            )));
        }
        let stride = input.div_ceil(output);
        if input.div_ceil(stride) != output {
            return Err(Error::config(format!(
                "no integer stride maps size {input} onto {output}"
            )));
        }
        Ok(if first {
            Axis {
                stride,
                pad: 0,
                kernel: stride,
            }
        } else {
            let half = (stride / 2).max(1);
            Axis {
                stride,
                pad: half,
                kernel: 2 * half + 1,
            }
        })
    }

    fn window(&self, j: usize) -> (i64, i64) {
        let lo = (self.stride * j) as i64 - self.pad as i64;
        (lo, lo + self.kernel as i64)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    input: Shape,
    output: Shape,
    rows: Axis,
    cols: Axis,
    /// `[out_channel][ky][kx][in_channel]`
    weights: Vec<f32>,
}

impl Layer {
    fn patch_len(&self) -> usize {
        self.rows.kernel * self.cols.kernel * self.input.channels
    }

    fn forward(&self, input: &[f32]) -> Vec<f32> {
        let (ih, iw, ic) = (self.input.height, self.input.width, self.input.channels);
        let plen = self.patch_len();
        let mut patch = vec![0.0f32; plen];
        let mut out = Vec::with_capacity(self.output.len());
        for oy in 0..self.output.height {
            let (y0, y1) = self.rows.window(oy);
            for ox in 0..self.output.width {
                let (x0, x1) = self.cols.window(ox);
                let mut i = 0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        if y >= 0 && x >= 0 && (y as usize) < ih && (x as usize) < iw {
                            let at = (y as usize * iw + x as usize) * ic;
                            patch[i..i + ic].copy_from_slice(&input[at..at + ic]);
                        } else {
                            patch[i..i + ic].fill(0.0);
                        }
                        i += ic;
                    }
                }
                for w in self.weights.chunks_exact(plen) {
                    let acc: f32 = w.iter().zip(&patch).map(|(a, b)| a * b).sum();
                    out.push(acc.max(0.0));
                }
            }
        }
        out
    }
}

/// Source of key-frame feature pyramids.
pub trait FeatureExtractor {
    fn level_shapes(&self) -> Vec<Shape>;
    fn input_size(&self) -> (usize, usize);
    fn extract(&self, image: &Image) -> Result<FeaturePyramid>;
}

#[derive(Debug, Clone)]
pub struct ToyExtractor {
    config: ExtractorConfig,
    layers: Vec<Layer>,
}

impl ToyExtractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        if config.levels.is_empty() {
            return Err(Error::config("extractor needs at least one level"));
        }
        if config.input.0 == 0 || config.input.1 == 0 {
            return Err(Error::config("extractor input size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut input = Shape::new(config.input.0, config.input.1, Image::CHANNELS);
        let mut layers = Vec::with_capacity(config.levels.len());
        for (i, &output) in config.levels.iter().enumerate() {
            if output.channels == 0 {
                return Err(Error::config(format!("level {i} has zero channels")));
            }
            let rows = Axis::resolve(input.height, output.height, i == 0)?;
            let cols = Axis::resolve(input.width, output.width, i == 0)?;
            if i > 0 && output.area() >= input.area() {
                return Err(Error::config(format!("level {i} does not shrink")));
            }
            let fan_in = rows.kernel * cols.kernel * input.channels;
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt())
                .expect("valid standard deviation");
            let weights = (0..fan_in * output.channels)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(Layer {
                input,
                output,
                rows,
                cols,
                weights,
            });
            input = output;
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    /// Pixel distance between neighbouring cells of a level, `(rows, cols)`.
    pub fn pixel_stride(&self, level: usize) -> (usize, usize) {
        self.layers[..=level]
            .iter()
            .fold((1, 1), |(sy, sx), l| (sy * l.rows.stride, sx * l.cols.stride))
    }

    /// Half-open pixel rectangle `(y0, y1, x0, x1)` a cell depends on.
    pub fn receptive_field(&self, level: usize, y: usize, x: usize) -> (i64, i64, i64, i64) {
        let (mut y0, mut y1, mut x0, mut x1) = (y as i64, y as i64 + 1, x as i64, x as i64 + 1);
        for l in self.layers[..=level].iter().rev() {
            let (r, c) = (l.rows, l.cols);
            y0 = y0 * r.stride as i64 - r.pad as i64;
            y1 = (y1 - 1) * r.stride as i64 - r.pad as i64 + r.kernel as i64;
            x0 = x0 * c.stride as i64 - c.pad as i64;
            x1 = (x1 - 1) * c.stride as i64 - c.pad as i64 + c.kernel as i64;
        }
        (y0, y1, x0, x1)
    }

    /// True when no padding reaches the cell, at any layer.
    pub fn is_interior(&self, level: usize, y: usize, x: usize) -> bool {
        let (y0, y1, x0, x1) = self.receptive_field(level, y, x);
        let (h, w) = self.config.input;
        y0 >= 0 && x0 >= 0 && y1 <= h as i64 && x1 <= w as i64
    }
}

impl FeatureExtractor for ToyExtractor {
    fn level_shapes(&self) -> Vec<Shape> {
        self.config.levels.clone()
    }

    fn input_size(&self) -> (usize, usize) {
        self.config.input
    }

    fn extract(&self, image: &Image) -> Result<FeaturePyramid> {
        if (image.height(), image.width()) != self.config.input {
            return Err(Error::config(format!(
                "image is {}x{}, extractor expects {}x{}",
                image.height(),
                image.width(),
                self.config.input.0,
                self.config.input.1
            )));
        }
        let mut levels = Vec::with_capacity(self.layers.len());
        let mut current: Vec<f32> = image.data().to_vec();
        for layer in &self.layers {
            current = layer.forward(&current);
            levels.push(FeatureMap::from_vec_unchecked(layer.output, current.clone()));
        }
        FeaturePyramid::new(levels)
    }
}

/// One-shot extraction; builds the weights from `config.seed` on every call.
pub fn toy_extract(image: &Image, config: &ExtractorConfig) -> Result<FeaturePyramid> {
    ToyExtractor::new(config.clone())?.extract(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn default_dims_follow_ssd300() {
        let cfg = ExtractorConfig::default();
        let pyr = toy_extract(&Image::filled(300, 300, 0.5).unwrap(), &cfg).unwrap();
        let sides: Vec<_> = pyr.shapes().iter().map(|s| (s.height, s.width)).collect();
        assert_eq!(sides, [(38, 38), (19, 19), (10, 10), (5, 5), (3, 3)]);
        let ext = ToyExtractor::new(cfg).unwrap();
        assert_eq!(ext.pixel_stride(0), (8, 8));
        assert_eq!(ext.pixel_stride(4), (128, 128));
    }

    #[test]
    fn deterministic_per_seed() {
        let img = noise_image(64, 64, 3);
        let cfg = ExtractorConfig::halving(11, (64, 64), 4, &[4, 6, 8]);
        let a = toy_extract(&img, &cfg).unwrap();
        let b = toy_extract(&img, &cfg).unwrap();
        assert_eq!(a, b);
        let other = toy_extract(&img, &ExtractorConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_mismatched_input() {
        let cfg = ExtractorConfig::halving(0, (64, 64), 4, &[4]);
        assert!(matches!(
            toy_extract(&noise_image(32, 64, 0), &cfg),
            Err(Error::Config { .. })
        ));
        let bad = ExtractorConfig {
            seed: 0,
            input: (10, 10),
            levels: vec![Shape::new(7, 7, 2)],
        };
        assert!(ToyExtractor::new(bad).is_err());
    }

    #[test]
    fn receptive_field_is_consistent_with_strides() {
        let ext = ToyExtractor::new(ExtractorConfig::halving(0, (64, 64), 4, &[2, 2, 2])).unwrap();
        assert_eq!(ext.receptive_field(0, 1, 2), (4, 8, 8, 12));
        // level 1 cell 1 reads level-0 cells 1..=3 -> pixels 4..16
        assert_eq!(ext.receptive_field(1, 1, 1), (4, 16, 4, 16));
        assert!(!ext.is_interior(1, 0, 0));
        assert!(ext.is_interior(1, 1, 1));
    }

    #[test]
    fn single_stride_translation_shifts_level_zero() {
        let cfg = ExtractorConfig::halving(5, (64, 64), 4, &[6, 6]);
        let ext = ToyExtractor::new(cfg).unwrap();
        let img = noise_image(64, 64, 9);
        // shifted right by one level-0 stride
        let shifted = Image::new(
            64,
            64,
            (0..64 * 64 * 3)
                .map(|i| {
                    let (p, c) = (i / 3, i % 3);
                    let (y, x) = (p / 64, p % 64);
                    if x >= 4 { img.get(y, x - 4, c) } else { 0.5 }
                })
                .collect(),
        )
        .unwrap();
        let a = ext.extract(&img).unwrap();
        let b = ext.extract(&shifted).unwrap();
        let (l0a, l0b) = (a.level(0), b.level(0));
        for y in 0..l0a.height() {
            for x in 1..l0a.width() {
                for c in 0..l0a.channels() {
                    assert!((l0b.get(y, x, c) - l0a.get(y, x - 1, c)).abs() <= 1e-4);
                }
            }
        }
    }
}
