//! Deterministic synthetic data: a two-class blob dataset for the toy
//! classifier and a textured RGB test image.

use crate::augment::Image;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 28;

/// Class 0: bright blob near the centre. Class 1: bright blob near one of
/// the four corners. Both over uniform background noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

const NOISE: f32 = 0.35;
const BLOB_AMPLITUDE: f32 = 0.65;
const BLOB_SIGMA: f32 = 3.0;

// val samples draw from streams offset by this so they never repeat train ones
const VAL_STREAM: u64 = 1 << 40;

impl SyntheticDataset {
    pub const CLASSES: usize = 2;

    /// `len` samples, alternating labels, sample `i` drawn from stream `seed ^ (offset + i)`.
    fn generate(len: usize, seed: u64, offset: u64) -> Self {
        let plane = SIDE * SIDE;
        let mut pixels = Vec::with_capacity(len * CHANNELS * plane);
        let mut labels = Vec::with_capacity(len);
        for i in 0..len {
            let label = i % 2;
            let mut rng = Rng::derive(seed, offset + i as u64);
            let jitter = |rng: &mut Rng| rng.uniform_in(-2.0, 2.0);
            let (cy, cx) = if label == 0 {
                (13.5 + jitter(&mut rng), 13.5 + jitter(&mut rng))
            } else {
                let corner = rng.below(4);
                let near = |far: bool| if far { 22.0 } else { 5.0 };
                (near(corner & 1 == 1) + jitter(&mut rng), near(corner & 2 == 2) + jitter(&mut rng))
            };
            let tint: Vec<f32> = (0..CHANNELS).map(|_| rng.uniform_in(0.6, 1.0)).collect();
            for &t in &tint {
                for k in 0..SIDE {
                    for l in 0..SIDE {
                        let d2 = (k as f32 - cy).powi(2) + (l as f32 - cx).powi(2);
                        let blob = BLOB_AMPLITUDE * t * (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
                        pixels.push((NOISE * rng.uniform() + blob).clamp(0.0, 1.0));
                    }
                }
            }
            labels.push(label);
        }
        Self { pixels, labels }
    }

    /// Disjoint train and validation sets from one seed.
    pub fn split(train: usize, val: usize, seed: u64) -> (Self, Self) {
        (Self::generate(train, seed, 0), Self::generate(val, seed, VAL_STREAM))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape() -> (usize, usize, usize) {
        (CHANNELS, SIDE, SIDE)
    }

    pub fn image(&self, i: usize) -> Image {
        let len = CHANNELS * SIDE * SIDE;
        let t = Tensor::new(
            Shape::new(1, CHANNELS, SIDE, SIDE).unwrap(),
            self.pixels[i * len..(i + 1) * len].to_vec(),
        )
        .unwrap();
        Image::new(t).expect("generated pixels lie in [0, 1]")
    }

    /// Stack the given samples into an NCHW batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = CHANNELS * SIDE * SIDE;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * len..(i + 1) * len]);
        }
        let shape = Shape::new(indices.len(), CHANNELS, SIDE, SIDE).unwrap();
        (
            Tensor::new(shape, data).unwrap(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Smooth multi-octave value noise with correlated RGB channels: a stand-in
/// for a natural photograph. Brightness is remapped monotonically so that
/// its median sits at mid-range, i.e. half the pixels are brighter than the
/// midpoint between the darkest and brightest one.
pub fn textured_image(h: usize, w: usize, seed: u64) -> Result<Image> {
    let mut rng = Rng::new(seed);
    let octaves = [(4usize, 1.0f32), (8, 0.5), (16, 0.25), (32, 0.125)];
    let lattices: Vec<(usize, f32, Vec<f32>)> = octaves
        .iter()
        .map(|&(cells, amp)| (cells, amp, (0..(cells + 1) * (cells + 1)).map(|_| rng.uniform()).collect()))
        .collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let luminance = |y: usize, x: usize| -> f32 {
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (cells, amp, lat) in &lattices {
            let fy = y as f32 / h as f32 * *cells as f32;
            let fx = x as f32 / w as f32 * *cells as f32;
            let (iy, ix) = (fy as usize, fx as usize);
            let (ty, tx) = (smooth(fy - iy as f32), smooth(fx - ix as f32));
            let at = |a: usize, b: usize| lat[a * (cells + 1) + b];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            acc += amp * (top * (1.0 - ty) + bottom * ty);
            norm += amp;
        }
        acc / norm
    };
    let tint = [rng.uniform_in(0.8, 1.0), rng.uniform_in(0.7, 0.95), rng.uniform_in(0.6, 0.9)];
    let lum: Vec<f32> = (0..h * w).map(|o| luminance(o / w, o % w)).collect();
    let (lo, hi) = lum.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let unit: Vec<f32> = lum.iter().map(|&v| (v - lo) / (hi - lo).max(f32::EPSILON)).collect();
    let mut sorted = unit.clone();
    sorted.sort_by(f32::total_cmp);
    let median = sorted[sorted.len() / 2].clamp(f32::EPSILON, 1.0 - f32::EPSILON);
    let balance = |v: f32| {
        if v < median {
            0.5 * v / median
        } else {
            0.5 + 0.5 * (v - median) / (1.0 - median)
        }
    };
    Image::from_fn(3, h, w, |_, ch, k, l| (balance(unit[k * w + l]) * tint[ch]).clamp(0.0, 1.0))
}
