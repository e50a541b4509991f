//! Dense 4-D tensors in NCHW layout.
//!
//! Every operation is a pure function returning a new tensor. The data is a
//! flat row-major `Vec<f32>`; element `(i, j, k, l)` lives at
//! `((i * c + j) * h + k) * w + l`.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements in one channel plane (`h * w`).
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// The same shape with the channel axis collapsed to 1.
    pub fn spatial(&self) -> Shape {
        Shape { c: 1, ..*self }
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        debug_assert!(i < self.n && j < self.c && k < self.h && l < self.w);
        ((i * self.c + j) * self.h + k) * self.w + l
    }

    /// Inverse of [`Shape::offset`].
    pub fn index(&self, offset: usize) -> (usize, usize, usize, usize) {
        let l = offset % self.w;
        let rest = offset / self.w;
        let k = rest % self.h;
        let rest = rest / self.h;
        let j = rest % self.c;
        let i = rest / self.c;
        (i, j, k, l)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Region over which min-max normalization statistics are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormScope {
    /// Each batch element is normalized independently.
    #[default]
    PerSample,
    /// One min and max for the whole tensor.
    WholeTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Build from dims, validating both the dims and the data length.
    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        Self::new(shape, data)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let data = (0..shape.len())
            .map(|o| {
                let (i, j, k, l) = shape.index(o);
                f(i, j, k, l)
            })
            .collect();
        Self { shape, data }
    }

    /// Each element drawn iid from `[0, 1)`.
    pub fn uniform(shape: Shape, rng: &mut Rng) -> Self {
        let data = (0..shape.len()).map(|_| rng.uniform()).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f32 {
        self.data[self.shape.offset(i, j, k, l)]
    }

    /// The flat slice holding sample `i`.
    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        self.map(|x| x + s)
    }

    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.data)
    }

    /// Sum over the channel axis; the result has shape `(n, 1, h, w)`.
    ///
    /// Channels are accumulated in increasing index order.
    pub fn sum_axis1(&self) -> Tensor {
        let s = self.shape;
        let plane = s.plane_len();
        let mut out = vec![0.0f32; s.n * plane];
        for (i, dst) in out.chunks_exact_mut(plane).enumerate() {
            for ch in self.sample(i).chunks_exact(plane) {
                for (d, &x) in dst.iter_mut().zip(ch) {
                    *d += x;
                }
            }
        }
        Tensor {
            shape: s.spatial(),
            data: out,
        }
    }

    /// Min-max rescale to `[0, 1]` within each scope. A scope whose max equals
    /// its min maps to all zeros.
    pub fn minmax_normalize(&self, scope: NormScope) -> Tensor {
        let mut data = self.data.clone();
        let chunk = match scope {
            NormScope::PerSample => self.shape.sample_len(),
            NormScope::WholeTensor => self.data.len(),
        };
        for part in data.chunks_exact_mut(chunk) {
            normalize_in_place(part);
        }
        Tensor {
            shape: self.shape,
            data,
        }
    }

    /// Multiply every channel by the `(n, 1, h, w)` map `m`.
    pub fn broadcast_mul(&self, m: &Tensor) -> Result<Tensor> {
        let s = self.shape;
        let ms = m.shape;
        if ms.c != 1 || ms.n != s.n || ms.h != s.h || ms.w != s.w {
            return Err(Error::ShapeMismatch {
                op: "broadcast_mul",
                expected: s.spatial(),
                got: ms,
            });
        }
        let plane = s.plane_len();
        let mut data = Vec::with_capacity(s.len());
        for i in 0..s.n {
            let mrow = &m.data[i * plane..(i + 1) * plane];
            for ch in self.sample(i).chunks_exact(plane) {
                data.extend(ch.iter().zip(mrow).map(|(&x, &k)| x * k));
            }
        }
        Ok(Tensor { shape: s, data })
    }

    /// Write the little-endian dump: four `u32` dims, then the `f32` payload.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        for d in self.shape.dims() {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidShape(format!("dimension {d} does not fit in u32")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Tensor> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(Error::parse(bytes.len(), "truncated tensor header"));
        }
        let mut dims = [0usize; 4];
        for (d, chunk) in dims.iter_mut().zip(bytes[..16].chunks_exact(4)) {
            *d = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| Error::parse(0, e.to_string()))?;
        let payload = &bytes[16..];
        if payload.len() != 4 * shape.len() {
            return Err(Error::parse(
                16 + payload.len().min(4 * shape.len()),
                format!("expected {} payload bytes, found {}", 4 * shape.len(), payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn min_max(xs: &[f32]) -> (f32, f32) {
    xs.iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub(crate) fn normalize_in_place(xs: &mut [f32]) {
    let (lo, hi) = min_max(xs);
    if hi == lo {
        xs.fill(0.0);
        return;
    }
    let range = hi - lo;
    for x in xs.iter_mut() {
        *x = (*x - lo) / range;
    }
}
