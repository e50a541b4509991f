//! Brute-force reference implementations used by the integration tests.
//! They index with explicit loops and share nothing with the library's
//! kernels except the `Tensor` container.

#![allow(dead_code)]

use maxdropout::{NormScope, Rng, Shape, Tensor};

/// Random shape with every dimension in `1..=max`.
pub fn random_shape(rng: &mut Rng, max: [usize; 4]) -> Shape {
    let d = |rng: &mut Rng, m: usize| 1 + rng.below(m);
    Shape::new(d(rng, max[0]), d(rng, max[1]), d(rng, max[2]), d(rng, max[3])).unwrap()
}

/// Mixed corpus: mostly uniform values in [-1, 1), some with heavy ties and
/// some constant, so degenerate ranges are exercised too.
pub fn random_tensor(rng: &mut Rng, shape: Shape) -> Tensor {
    match rng.below(10) {
        0 => Tensor::full(shape, rng.uniform_in(-1.0, 1.0)),
        1 | 2 => Tensor::from_fn(shape, |_, _, _, _| rng.below(4) as f32 * 0.5),
        _ => Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0)),
    }
}

fn normalize(values: &[f32]) -> Vec<f32> {
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in values {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    values
        .iter()
        .map(|&v| if hi == lo { 0.0 } else { (v - lo) / (hi - lo) })
        .collect()
}

/// MaxDropout over the whole array: normalize each scope, zero every entry
/// whose normalized value exceeds `1 - rate`.
pub fn max_dropout_oracle(t: &Tensor, rate: f32, scope: NormScope) -> (Tensor, Vec<f32>) {
    let s = t.shape();
    let per = s.c * s.h * s.w;
    let groups = match scope {
        NormScope::PerSample => s.n,
        NormScope::WholeTensor => 1,
    };
    let len = s.n * per / groups;
    let threshold = 1.0 - rate;
    let mut mask = vec![0.0; s.n * per];
    for g in 0..groups {
        let part: Vec<f32> = (g * len..(g + 1) * len).map(|o| t.data()[o]).collect();
        for (j, v) in normalize(&part).into_iter().enumerate() {
            mask[g * len + j] = if v > threshold { 0.0 } else { 1.0 };
        }
    }
    let out: Vec<f32> = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    (Tensor::new(s, out).unwrap(), mask)
}

/// MaxDropoutV2 by literal construction: channel sums, normalized spatial
/// map, then a full `n x c x h x w` mask with the map copied into every channel.
pub fn max_dropout_v2_oracle(t: &Tensor, rate: f32, scope: NormScope) -> (Tensor, Vec<f32>) {
    let s = t.shape();
    let mut sums = vec![0.0f32; s.n * s.h * s.w];
    for i in 0..s.n {
        for k in 0..s.h {
            for l in 0..s.w {
                let mut acc = 0.0f32;
                for j in 0..s.c {
                    acc += t.get(i, j, k, l);
                }
                sums[(i * s.h + k) * s.w + l] = acc;
            }
        }
    }
    let plane = s.h * s.w;
    let mut norm = vec![0.0; sums.len()];
    match scope {
        NormScope::PerSample => {
            for i in 0..s.n {
                let part = normalize(&sums[i * plane..(i + 1) * plane]);
                norm[i * plane..(i + 1) * plane].copy_from_slice(&part);
            }
        }
        NormScope::WholeTensor => norm = normalize(&sums),
    }
    let threshold = 1.0 - rate;
    let mut full_mask = Vec::with_capacity(s.len());
    for i in 0..s.n {
        for _ in 0..s.c {
            for o in 0..plane {
                full_mask.push(if norm[i * plane + o] > threshold { 0.0 } else { 1.0 });
            }
        }
    }
    let out: Vec<f32> = t.data().iter().zip(&full_mask).map(|(&x, &m)| x * m).collect();
    (Tensor::new(s, out).unwrap(), full_mask)
}

pub fn bits(t: &[f32]) -> Vec<u32> {
    t.iter().map(|v| v.to_bits()).collect()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
