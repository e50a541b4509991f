//! ToyNet: conv(3x3) -> ReLU -> DROP -> maxpool(2) -> conv(3x3) -> ReLU -> DROP
//! -> maxpool(2) -> dense. Hand-written forward and backward passes.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::regularizers::{self, DropConfig, DropMask, Mode};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};
use crate::train::loss::softmax_cross_entropy;

const K: usize = 3;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    /// `[out_c][in_c][3][3]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    /// He-uniform fan-in initialization, zero bias.
    pub fn new(in_c: usize, out_c: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (in_c * K * K) as f32).sqrt();
        let weight = (0..out_c * in_c * K * K)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        Self {
            in_c,
            out_c,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    #[inline]
    fn w(&self, o: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((o * self.in_c + ci) * K + ky) * K + kx]
    }

    /// 3x3 convolution, stride 1, zero padding 1.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.c, self.in_c, "conv input channels");
        let (h, w) = (s.h, s.w);
        let hw = h * w;
        let out_shape = Shape { c: self.out_c, ..s };
        let mut out = vec![0.0f32; out_shape.len()];
        out.par_chunks_mut(self.out_c * hw)
            .enumerate()
            .for_each(|(i, dst)| {
                let src = x.sample(i);
                for o in 0..self.out_c {
                    let plane = &mut dst[o * hw..(o + 1) * hw];
                    plane.fill(self.bias[o]);
                    for ci in 0..self.in_c {
                        let input = &src[ci * hw..(ci + 1) * hw];
                        for ky in 0..K {
                            for kx in 0..K {
                                let wv = self.w(o, ci, ky, kx);
                                let (x0, x1) = col_range(kx, w);
                                for y in row_range(ky, h) {
                                    let iy = y + ky - 1;
                                    let drow = &mut plane[y * w..(y + 1) * w];
                                    let srow = &input[iy * w..(iy + 1) * w];
                                    for xx in x0..x1 {
                                        drow[xx] += wv * srow[xx + kx - 1];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Tensor::new(out_shape, out).expect("conv output length")
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`. Per-sample partial
    /// gradients are summed in sample order so the result is deterministic.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> (Option<Tensor>, Vec<f32>, Vec<f32>) {
        let s = x.shape();
        let (h, w) = (s.h, s.w);
        let hw = h * w;
        let partials: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..s.n)
            .into_par_iter()
            .map(|i| {
                let src = x.sample(i);
                let go = grad_out.sample(i);
                let mut gx = if need_input_grad { vec![0.0f32; self.in_c * hw] } else { Vec::new() };
                let mut gw = vec![0.0f32; self.weight.len()];
                let mut gb = vec![0.0f32; self.out_c];
                for o in 0..self.out_c {
                    let gplane = &go[o * hw..(o + 1) * hw];
                    gb[o] = gplane.iter().sum();
                    for ci in 0..self.in_c {
                        let input = &src[ci * hw..(ci + 1) * hw];
                        for ky in 0..K {
                            for kx in 0..K {
                                let widx = ((o * self.in_c + ci) * K + ky) * K + kx;
                                let wv = self.weight[widx];
                                let (x0, x1) = col_range(kx, w);
                                let mut acc = 0.0f32;
                                for y in row_range(ky, h) {
                                    let iy = y + ky - 1;
                                    let grow = &gplane[y * w..(y + 1) * w];
                                    let srow = &input[iy * w..(iy + 1) * w];
                                    for xx in x0..x1 {
                                        acc += grow[xx] * srow[xx + kx - 1];
                                    }
                                    if need_input_grad {
                                        let xrow = &mut gx[ci * hw + iy * w..ci * hw + (iy + 1) * w];
                                        for xx in x0..x1 {
                                            xrow[xx + kx - 1] += wv * grow[xx];
                                        }
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
                (gx, gw, gb)
            })
            .collect();

        let mut gw = vec![0.0f32; self.weight.len()];
        let mut gb = vec![0.0f32; self.out_c];
        let mut gx = Vec::with_capacity(if need_input_grad { s.len() } else { 0 });
        for (px, pw, pb) in partials {
            add_into(&mut gw, &pw);
            add_into(&mut gb, &pb);
            gx.extend_from_slice(&px);
        }
        let gx = need_input_grad.then(|| Tensor::new(s, gx).expect("conv grad length"));
        (gx, gw, gb)
    }
}

/// Output rows whose kernel row `ky` lands inside the input.
fn row_range(ky: usize, h: usize) -> std::ops::Range<usize> {
    let lo = if ky == 0 { 1 } else { 0 };
    let hi = if ky == K - 1 { h - 1 } else { h };
    lo..hi.max(lo)
}

fn col_range(kx: usize, w: usize) -> (usize, usize) {
    let r = row_range(kx, w);
    (r.start, r.end)
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs as f32).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| rng.uniform_in(-bound, bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, features: &[f32], batch: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for row in features.chunks_exact(self.inputs).take(batch) {
            for o in 0..self.outputs {
                let wrow = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let dot: f32 = wrow.iter().zip(row).map(|(a, b)| a * b).sum();
                out.push(dot + self.bias[o]);
            }
        }
        out
    }

    /// Returns `(grad_features, grad_weight, grad_bias)`.
    pub fn backward(&self, features: &[f32], grad_out: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut gf = vec![0.0f32; features.len()];
        let mut gw = vec![0.0f32; self.weight.len()];
        let mut gb = vec![0.0f32; self.outputs];
        for ((row, grow), g) in features
            .chunks_exact(self.inputs)
            .zip(gf.chunks_exact_mut(self.inputs))
            .zip(grad_out.chunks_exact(self.outputs))
        {
            for o in 0..self.outputs {
                let wrow = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let gwrow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                gb[o] += g[o];
                for ((gwv, &x), (gx, &wv)) in gwrow.iter_mut().zip(row).zip(grow.iter_mut().zip(wrow)) {
                    *gwv += g[o] * x;
                    *gx += g[o] * wv;
                }
            }
        }
        (gf, gw, gb)
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled tensor and, for each output,
/// the flat input offset that won.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape { h: oh, w: ow, ..s };
    let mut out = Vec::with_capacity(out_shape.len());
    let mut idx = Vec::with_capacity(out_shape.len());
    let data = x.data();
    for i in 0..s.n {
        for j in 0..s.c {
            for k in 0..oh {
                for l in 0..ow {
                    let mut best = s.offset(i, j, 2 * k, 2 * l);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = s.offset(i, j, 2 * k + dy, 2 * l + dx);
                        if data[o] > data[best] {
                            best = o;
                        }
                    }
                    out.push(data[best]);
                    idx.push(best as u32);
                }
            }
        }
    }
    (Tensor::new(out_shape, out).expect("pool length"), idx)
}

pub fn maxpool2_backward(input_shape: Shape, idx: &[u32], grad_out: &[f32]) -> Tensor {
    let mut g = vec![0.0f32; input_shape.len()];
    for (&o, &v) in idx.iter().zip(grad_out) {
        g[o as usize] += v;
    }
    Tensor::new(input_shape, g).expect("unpool length")
}

/// How the two drop layers produce their masks for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    /// Pass-through.
    Infer,
    /// Fresh training-mode masks; Dropout layers draw from `seed`-derived streams.
    Train { seed: u64 },
    /// Reuse masks from an earlier pass (gradient checking).
    Fixed(&'a [DropMask; 2]),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Tensor,
    pub pre_relu: [Tensor; 2],
    pub masks: Option<[DropMask; 2]>,
    pub dropped: [Tensor; 2],
    pub pool_idx: [Vec<u32>; 2],
    pub pooled1: Tensor,
    pub features: Vec<f32>,
    pub logits: Vec<f32>,
}

impl ForwardCache {
    /// ReLU on/off pattern and pooling winners; equal signatures mean two
    /// inputs lie on the same piecewise-linear piece.
    pub fn kink_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for z in &self.pre_relu {
            sig.extend(z.data().iter().map(|&v| u32::from(v > 0.0)));
        }
        for idx in &self.pool_idx {
            sig.extend_from_slice(idx);
        }
        sig
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv1_w: Vec<f32>,
    pub conv1_b: Vec<f32>,
    pub conv2_w: Vec<f32>,
    pub conv2_b: Vec<f32>,
    pub fc_w: Vec<f32>,
    pub fc_b: Vec<f32>,
}

impl Gradients {
    pub fn slices(&self) -> [&[f32]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.slices().concat()
    }
}

#[derive(Debug)]
pub struct ToyNet {
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Dense,
    pub drop: Option<DropConfig>,
    train_mask_applications: AtomicUsize,
}

impl Clone for ToyNet {
    fn clone(&self) -> Self {
        Self {
            input: self.input,
            classes: self.classes,
            conv1: self.conv1.clone(),
            conv2: self.conv2.clone(),
            fc: self.fc.clone(),
            drop: self.drop,
            train_mask_applications: AtomicUsize::new(self.train_mask_applications()),
        }
    }
}

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;

impl ToyNet {
    /// `input` is `(channels, height, width)`; height and width must be
    /// divisible by 4.
    pub fn new(input: (usize, usize, usize), classes: usize, drop: Option<DropConfig>, seed: u64) -> Result<Self> {
        let (c, h, w) = input;
        if c == 0 || h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 || classes < 2 {
            return Err(Error::Config(format!(
                "ToyNet needs c >= 1, h and w multiples of 4, >= 2 classes; got {input:?}, {classes} classes"
            )));
        }
        let mut rng = Rng::new(seed);
        let conv1 = Conv2d::new(c, CONV1_CHANNELS, &mut rng);
        let conv2 = Conv2d::new(CONV1_CHANNELS, CONV2_CHANNELS, &mut rng);
        let fc = Dense::new(CONV2_CHANNELS * (h / 4) * (w / 4), classes, &mut rng);
        Ok(Self {
            input,
            classes,
            conv1,
            conv2,
            fc,
            drop,
            train_mask_applications: AtomicUsize::new(0),
        })
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> [&[f32]; 6] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.fc.weight,
            &self.fc.bias,
        ]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f32]; 6] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ]
    }

    /// Mutable access to the `index`-th parameter in flattened order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f32 {
        for s in self.param_slices_mut() {
            if index < s.len() {
                return &mut s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// Number of training-mode mask computations performed so far.
    pub fn train_mask_applications(&self) -> usize {
        self.train_mask_applications.load(Ordering::Relaxed)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let (c, h, w) = self.input;
        if (s.c, s.h, s.w) != (c, h, w) {
            return Err(Error::ShapeMismatch {
                op: "ToyNet::forward",
                expected: Shape { n: s.n, c, h, w },
                got: s,
            });
        }
        Ok(())
    }

    fn drop_layer(&self, layer: usize, r: Tensor, source: MaskSource<'_>) -> Result<(Tensor, Option<DropMask>)> {
        let Some(cfg) = self.drop else {
            return Ok((r, None));
        };
        match source {
            MaskSource::Infer => {
                let (out, _) = regularizers::forward(&r, &cfg.with_mode(Mode::Infer))?;
                Ok((out, None))
            }
            MaskSource::Train { seed } => {
                self.train_mask_applications.fetch_add(1, Ordering::Relaxed);
                let cfg = cfg.train().with_seed(seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let (out, mask) = regularizers::forward(&r, &cfg)?;
                Ok((out, Some(mask)))
            }
            MaskSource::Fixed(masks) => {
                let mask = masks[layer].clone();
                let out = regularizers::apply_mask(&r, &mask, &cfg)?;
                Ok((out, Some(mask)))
            }
        }
    }

    pub fn forward(&self, x: &Tensor, source: MaskSource<'_>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let z1 = self.conv1.forward(x);
        let (d1, m1) = self.drop_layer(0, z1.relu(), source)?;
        let (p1, idx1) = maxpool2(&d1);
        let z2 = self.conv2.forward(&p1);
        let (d2, m2) = self.drop_layer(1, z2.relu(), source)?;
        let (p2, idx2) = maxpool2(&d2);
        let features = p2.into_data();
        let logits = self.fc.forward(&features, x.shape().n);
        let masks = match (m1, m2) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };
        Ok(ForwardCache {
            input: x.clone(),
            pre_relu: [z1, z2],
            masks,
            dropped: [d1, d2],
            pool_idx: [idx1, idx2],
            pooled1: p1,
            features,
            logits,
        })
    }

    /// Inference-mode logits, `batch x classes`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f32>> {
        Ok(self.forward(x, MaskSource::Infer)?.logits)
    }

    /// Mean cross-entropy over the batch and per-sample correctness.
    pub fn loss(&self, cache: &ForwardCache, labels: &[usize]) -> (f64, Vec<f64>, usize) {
        let mut total = 0.0;
        let mut correct = 0;
        let b = labels.len() as f64;
        let mut dlogits = Vec::with_capacity(cache.logits.len());
        for (row, &y) in cache.logits.chunks_exact(self.classes).zip(labels) {
            let logits: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            let (l, g) = softmax_cross_entropy(&logits, y);
            total += l;
            dlogits.extend(g.into_iter().map(|v| v / b));
            if argmax(row) == y {
                correct += 1;
            }
        }
        (total / b, dlogits, correct)
    }

    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
        let dl: Vec<f32> = dlogits.iter().map(|&v| v as f32).collect();
        let (gfeat, fc_w, fc_b) = self.fc.backward(&cache.features, &dl);

        let g_d2 = maxpool2_backward(cache.dropped[1].shape(), &cache.pool_idx[1], &gfeat);
        let g_z2 = self.through_drop_relu(1, cache, g_d2)?;
        let (g_p1, conv2_w, conv2_b) = self.conv2.backward(&cache.pooled1, &g_z2, true);
        let g_p1 = g_p1.expect("requested input grad");

        let g_d1 = maxpool2_backward(cache.dropped[0].shape(), &cache.pool_idx[0], g_p1.data());
        let g_z1 = self.through_drop_relu(0, cache, g_d1)?;
        let (_, conv1_w, conv1_b) = self.conv1.backward(&cache.input, &g_z1, false);

        Ok(Gradients {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            fc_w,
            fc_b,
        })
    }

    fn through_drop_relu(&self, layer: usize, cache: &ForwardCache, grad: Tensor) -> Result<Tensor> {
        let grad = match (&self.drop, &cache.masks) {
            (Some(cfg), Some(masks)) => regularizers::drop_backward(&grad, &masks[layer], &cfg.train())?,
            _ => grad,
        };
        grad.mul(&cache.pre_relu[layer].map(|z| if z > 0.0 { 1.0 } else { 0.0 }))
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
