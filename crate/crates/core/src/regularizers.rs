//! Dropout, MaxDropout and MaxDropoutV2.
//!
//! MaxDropout min-max normalizes the activations and zeroes every position
//! whose normalized value exceeds `1 - rate`. MaxDropoutV2 does the same on
//! the channel-summed `(n, 1, h, w)` map and broadcasts the resulting spatial
//! mask over all channels, so it performs `n*h*w` threshold comparisons
//! instead of `n*c*h*w`.
//!
//! All three variants are the identity in [`Mode::Infer`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{NormScope, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dropout,
    MaxDropout,
    MaxDropoutV2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dropout, Variant::MaxDropout, Variant::MaxDropoutV2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dropout => "dropout",
            Variant::MaxDropout => "max-dropout",
            Variant::MaxDropoutV2 => "max-dropout-v2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "dropout" => Ok(Variant::Dropout),
            "max-dropout" | "maxdropout" | "v1" => Ok(Variant::MaxDropout),
            "max-dropout-v2" | "maxdropoutv2" | "maxdropout-v2" | "v2" => Ok(Variant::MaxDropoutV2),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropConfig {
    pub variant: Variant,
    rate: f32,
    pub mode: Mode,
    pub scope: NormScope,
    /// Only consulted by [`Variant::Dropout`].
    pub seed: u64,
}

impl DropConfig {
    pub fn new(variant: Variant, rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        Ok(Self {
            variant,
            rate,
            mode: Mode::Train,
            scope: NormScope::PerSample,
            seed: 0,
        })
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }

    /// Normalized activations strictly above this value are dropped.
    pub fn threshold(&self) -> f32 {
        1.0 - self.rate
    }

    /// Survivor scale for inverted Dropout; 1 for the MaxDropout family.
    pub fn survivor_scale(&self) -> f32 {
        match self.variant {
            Variant::Dropout => 1.0 / (1.0 - self.rate),
            Variant::MaxDropout | Variant::MaxDropoutV2 => 1.0,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scope(mut self, scope: NormScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn train(self) -> Self {
        self.with_mode(Mode::Train)
    }

    pub fn infer(self) -> Self {
        self.with_mode(Mode::Infer)
    }

    fn expect(&self, variant: Variant) -> Result<()> {
        if self.variant != variant {
            return Err(Error::Config(format!(
                "{variant} kernel called with a {} config",
                self.variant
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// One entry per element, shape `(n, c, h, w)`.
    Full,
    /// One entry per spatial position, shape `(n, 1, h, w)`, shared by all channels.
    Spatial,
}

/// Binary keep (1) / drop (0) mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DropMask {
    pub kind: MaskKind,
    pub values: Tensor,
}

impl DropMask {
    pub fn keep_all(kind: MaskKind, input: Shape) -> Self {
        let shape = match kind {
            MaskKind::Full => input,
            MaskKind::Spatial => input.spatial(),
        };
        Self {
            kind,
            values: Tensor::ones(shape),
        }
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        match self.kind {
            MaskKind::Full => t.mul(&self.values),
            MaskKind::Spatial => t.broadcast_mul(&self.values),
        }
    }

    pub fn dropped(&self) -> usize {
        self.values.data().iter().filter(|&&v| v == 0.0).count()
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.dropped() as f64 / self.values.len() as f64
    }

    pub fn is_binary(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Receives one tick per threshold comparison.
pub trait ComparisonCounter {
    fn tick(&mut self);
}

/// Compiles away.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl ComparisonCounter for NoCount {
    #[inline(always)]
    fn tick(&mut self) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CountComparisons(pub u64);

impl ComparisonCounter for CountComparisons {
    #[inline]
    fn tick(&mut self) {
        self.0 += 1;
    }
}

/// Threshold comparisons performed by one mask computation, from the shape alone.
pub fn analytic_comparisons(variant: Variant, shape: Shape) -> u64 {
    match variant {
        Variant::Dropout => 0,
        Variant::MaxDropout => shape.len() as u64,
        Variant::MaxDropoutV2 => (shape.n * shape.plane_len()) as u64,
    }
}

fn threshold_mask<C: ComparisonCounter>(normalized: &Tensor, threshold: f32, counter: &mut C) -> Tensor {
    let data = normalized
        .data()
        .iter()
        .map(|&v| {
            counter.tick();
            if v > threshold {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Tensor::new(normalized.shape(), data).expect("mask has input length")
}

/// `x * (m * scale)` elementwise; shapes are checked by the caller.
fn masked_scaled(t: &Tensor, mask: &Tensor, scale: f32) -> Tensor {
    let data = t
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * (m * scale))
        .collect();
    Tensor::new(t.shape(), data).expect("mask has input length")
}

/// Standard inverted dropout: each element is zeroed with probability
/// `rate`, survivors are scaled by `1 / (1 - rate)`.
pub fn dropout_forward(t: &Tensor, cfg: &DropConfig) -> Result<(Tensor, DropMask)> {
    cfg.expect(Variant::Dropout)?;
    if cfg.mode == Mode::Infer {
        return Ok((t.clone(), DropMask::keep_all(MaskKind::Full, t.shape())));
    }
    let mut rng = Rng::new(cfg.seed);
    let rate = cfg.rate;
    let mask = Tensor::from_fn(t.shape(), |_, _, _, _| if rng.uniform() < rate { 0.0 } else { 1.0 });
    let scale = cfg.survivor_scale();
    let out = masked_scaled(t, &mask, scale);
    Ok((
        out,
        DropMask {
            kind: MaskKind::Full,
            values: mask,
        },
    ))
}

pub fn max_dropout_mask(t: &Tensor, cfg: &DropConfig) -> Result<DropMask> {
    max_dropout_mask_counted(t, cfg, &mut NoCount)
}

/// [`max_dropout_mask`] reporting each threshold comparison to `counter`.
pub fn max_dropout_mask_counted<C: ComparisonCounter>(
    t: &Tensor,
    cfg: &DropConfig,
    counter: &mut C,
) -> Result<DropMask> {
    cfg.expect(Variant::MaxDropout)?;
    let normalized = t.minmax_normalize(cfg.scope);
    Ok(DropMask {
        kind: MaskKind::Full,
        values: threshold_mask(&normalized, cfg.threshold(), counter),
    })
}

pub fn max_dropout_forward(t: &Tensor, cfg: &DropConfig) -> Result<(Tensor, DropMask)> {
    cfg.expect(Variant::MaxDropout)?;
    if cfg.mode == Mode::Infer {
        return Ok((t.clone(), DropMask::keep_all(MaskKind::Full, t.shape())));
    }
    let mask = max_dropout_mask(t, cfg)?;
    let out = mask.apply(t)?;
    Ok((out, mask))
}

pub fn max_dropout_v2_mask(t: &Tensor, cfg: &DropConfig) -> Result<DropMask> {
    max_dropout_v2_mask_counted(t, cfg, &mut NoCount)
}

pub fn max_dropout_v2_mask_counted<C: ComparisonCounter>(
    t: &Tensor,
    cfg: &DropConfig,
    counter: &mut C,
) -> Result<DropMask> {
    cfg.expect(Variant::MaxDropoutV2)?;
    let normalized = t.sum_axis1().minmax_normalize(cfg.scope);
    Ok(DropMask {
        kind: MaskKind::Spatial,
        values: threshold_mask(&normalized, cfg.threshold(), counter),
    })
}

pub fn max_dropout_v2_forward(t: &Tensor, cfg: &DropConfig) -> Result<(Tensor, DropMask)> {
    cfg.expect(Variant::MaxDropoutV2)?;
    if cfg.mode == Mode::Infer {
        return Ok((t.clone(), DropMask::keep_all(MaskKind::Spatial, t.shape())));
    }
    let mask = max_dropout_v2_mask(t, cfg)?;
    let out = mask.apply(t)?;
    Ok((out, mask))
}

/// Dispatch on `cfg.variant`.
pub fn forward(t: &Tensor, cfg: &DropConfig) -> Result<(Tensor, DropMask)> {
    match cfg.variant {
        Variant::Dropout => dropout_forward(t, cfg),
        Variant::MaxDropout => max_dropout_forward(t, cfg),
        Variant::MaxDropoutV2 => max_dropout_v2_forward(t, cfg),
    }
}

/// Multiply `t` by an existing mask, applying the variant's survivor scale.
/// This is the training-mode forward with the mask held fixed.
pub fn apply_mask(t: &Tensor, mask: &DropMask, cfg: &DropConfig) -> Result<Tensor> {
    let expected = match mask.kind {
        MaskKind::Full => mask.values.shape(),
        MaskKind::Spatial => Shape {
            c: t.shape().c,
            ..mask.values.shape()
        },
    };
    if t.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            expected,
            got: t.shape(),
        });
    }
    match (cfg.variant, mask.kind) {
        (Variant::Dropout, MaskKind::Full) => Ok(masked_scaled(t, &mask.values, cfg.survivor_scale())),
        _ => mask.apply(t),
    }
}

/// Gradient of the forward pass with the mask held constant.
pub fn drop_backward(upstream: &Tensor, mask: &DropMask, cfg: &DropConfig) -> Result<Tensor> {
    if cfg.mode == Mode::Infer {
        return Ok(upstream.clone());
    }
    apply_mask(upstream, mask, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f32]) -> Tensor {
        Tensor::from_vec([1, 1, 1, values.len()], values.to_vec()).unwrap()
    }

    fn cfg(variant: Variant, rate: f32) -> DropConfig {
        DropConfig::new(variant, rate).unwrap().with_scope(NormScope::WholeTensor)
    }

    #[test]
    fn rate_validation() {
        assert!(DropConfig::new(Variant::Dropout, 1.0).is_err());
        assert!(DropConfig::new(Variant::Dropout, -0.1).is_err());
        assert!(DropConfig::new(Variant::Dropout, f32::NAN).is_err());
        assert!(DropConfig::new(Variant::MaxDropout, 0.0).is_ok());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("V2".parse::<Variant>().unwrap(), Variant::MaxDropoutV2);
        assert!("dropblock".parse::<Variant>().is_err());
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let x = row(&[1., 2.]);
        assert!(max_dropout_forward(&x, &cfg(Variant::Dropout, 0.5)).is_err());
        assert!(dropout_forward(&x, &cfg(Variant::MaxDropoutV2, 0.5)).is_err());
    }

    #[test]
    fn dropout_rate_zero_keeps_everything() {
        let x = row(&[1., -2., 3.]);
        let (y, m) = dropout_forward(&x, &cfg(Variant::Dropout, 0.0)).unwrap();
        assert_eq!(y, x);
        assert_eq!(m.dropped(), 0);
    }

    #[test]
    fn dropout_fraction_and_scaling() {
        let s = Shape::new(1, 1, 100, 1000).unwrap();
        let x = Tensor::uniform(s, &mut Rng::new(3));
        let c = cfg(Variant::Dropout, 0.5).with_seed(11);
        let (y, m) = dropout_forward(&x, &c).unwrap();
        assert!((m.dropped_fraction() - 0.5).abs() <= 0.01, "{}", m.dropped_fraction());
        for ((&a, &b), &k) in x.data().iter().zip(y.data()).zip(m.values.data()) {
            if k == 0.0 {
                assert_eq!(b, 0.0);
            } else {
                assert_eq!(b, a * 2.0);
            }
        }
        let (again, _) = dropout_forward(&x, &c).unwrap();
        assert_eq!(again, y);
    }

    #[test]
    fn max_dropout_mask_by_hand() {
        let x = row(&[1., 2., 3., 4.]);
        let m = max_dropout_mask(&x, &cfg(Variant::MaxDropout, 0.5)).unwrap();
        assert_eq!(m.values.data(), &[1., 1., 0., 0.]);
        let m0 = max_dropout_mask(&x, &cfg(Variant::MaxDropout, 0.0)).unwrap();
        assert_eq!(m0.dropped(), 0);
        let flat = row(&[5., 5., 5., 5.]);
        for r in [0.0, 0.5, 0.99] {
            assert_eq!(max_dropout_mask(&flat, &cfg(Variant::MaxDropout, r)).unwrap().dropped(), 0);
        }
    }

    #[test]
    fn max_dropout_forward_by_hand() {
        let x = row(&[1., 2., 3., 4.]);
        let c = cfg(Variant::MaxDropout, 0.5);
        assert_eq!(max_dropout_forward(&x, &c).unwrap().0.data(), &[1., 2., 0., 0.]);
        assert_eq!(max_dropout_forward(&x, &c.infer()).unwrap().0, x);
        let quarter = max_dropout_mask(&x, &cfg(Variant::MaxDropout, 0.25)).unwrap();
        assert_eq!(quarter.values.data(), &[1., 1., 1., 0.]);
    }

    #[test]
    fn max_dropout_v2_by_hand() {
        let x = Tensor::from_vec([1, 2, 2, 2], vec![1., 2., 3., 4., 0., 0., 0., 0.]).unwrap();
        let c = cfg(Variant::MaxDropoutV2, 0.5);
        let (y, m) = max_dropout_v2_forward(&x, &c).unwrap();
        assert_eq!(m.kind, MaskKind::Spatial);
        assert_eq!(m.values.shape().dims(), [1, 1, 2, 2]);
        assert_eq!(m.values.data(), &[1., 1., 0., 0.]);
        assert_eq!(y.data(), &[1., 2., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(max_dropout_v2_forward(&x, &c.infer()).unwrap().0, x);
    }

    #[test]
    fn comparison_counts() {
        let s = Shape::new(1, 64, 32, 32).unwrap();
        let x = Tensor::uniform(s, &mut Rng::new(0));
        let mut v1 = CountComparisons::default();
        max_dropout_mask_counted(&x, &cfg(Variant::MaxDropout, 0.5), &mut v1).unwrap();
        let mut v2 = CountComparisons::default();
        max_dropout_v2_mask_counted(&x, &cfg(Variant::MaxDropoutV2, 0.5), &mut v2).unwrap();
        assert_eq!(v1.0, 65_536);
        assert_eq!(v2.0, 1_024);
        assert_eq!(analytic_comparisons(Variant::MaxDropout, s), 65_536);
        assert_eq!(analytic_comparisons(Variant::MaxDropoutV2, s), 1_024);
    }

    #[test]
    fn backward_masks_upstream() {
        let x = row(&[1., 2., 3., 4.]);
        let c = cfg(Variant::MaxDropout, 0.5);
        let (_, m) = max_dropout_forward(&x, &c).unwrap();
        let up = row(&[10.; 4]);
        assert_eq!(drop_backward(&up, &m, &c).unwrap().data(), &[10., 10., 0., 0.]);
        let ones = DropMask::keep_all(MaskKind::Full, x.shape());
        assert_eq!(drop_backward(&up, &ones, &c).unwrap(), up);
        assert_eq!(drop_backward(&up, &m, &c.infer()).unwrap(), up);
    }

    #[test]
    fn backward_dropout_rescales() {
        let x = row(&[1., 2., 3., 4.]);
        let c = cfg(Variant::Dropout, 0.5).with_seed(5);
        let (_, m) = dropout_forward(&x, &c).unwrap();
        let g = drop_backward(&row(&[1.; 4]), &m, &c).unwrap();
        for (&gv, &mv) in g.data().iter().zip(m.values.data()) {
            assert_eq!(gv, 2.0 * mv);
        }
    }

    #[test]
    fn backward_spatial_broadcasts_over_channels() {
        let x = Tensor::from_vec([1, 2, 2, 2], vec![1., 2., 3., 4., 0., 0., 0., 0.]).unwrap();
        let c = cfg(Variant::MaxDropoutV2, 0.5);
        let (_, m) = max_dropout_v2_forward(&x, &c).unwrap();
        let g = drop_backward(&Tensor::ones(x.shape()), &m, &c).unwrap();
        assert_eq!(g.data(), &[1., 1., 0., 0., 1., 1., 0., 0.]);
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = row(&[1., 2., 3., 4.]);
        let c = cfg(Variant::MaxDropout, 0.5);
        let (_, m) = max_dropout_forward(&x, &c).unwrap();
        assert!(matches!(
            drop_backward(&row(&[1., 2.]), &m, &c),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
