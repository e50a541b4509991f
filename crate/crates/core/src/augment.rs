//! Input-space augmentation: Cutout, RandomErasing, random crop, horizontal flip
//! and nearest-neighbour resize, composed by [`AugmentPlan`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// A single `(1, c, h, w)` image with `c` in `{1, 3}` and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || !(s.c == 1 || s.c == 3) {
            return Err(Error::InvalidShape(format!(
                "an image needs n = 1 and 1 or 3 channels, got {s}"
            )));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn from_fn(c: usize, h: usize, w: usize, f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        Self::new(Tensor::from_fn(Shape::new(1, c, h, w)?, f))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape().c
    }

    pub fn height(&self) -> usize {
        self.0.shape().h
    }

    pub fn width(&self) -> usize {
        self.0.shape().w
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> f32 {
        self.0.get(0, ch, row, col)
    }

    fn rebuild(&self, h: usize, w: usize, f: impl FnMut(usize, usize, usize, usize) -> f32) -> Image {
        let shape = Shape::new(1, self.channels(), h, w).expect("non-empty image");
        Image(Tensor::from_fn(shape, f))
    }
}

/// Half-open rectangle `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.bottom).contains(&row) && (self.left..self.right).contains(&col)
    }

    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }
}

/// The `size x size` square `[center - size/2, center - size/2 + size)` on each
/// axis, clipped to the image.
pub fn cutout_region(h: usize, w: usize, size: usize, center: (usize, usize)) -> Region {
    let clip = |c: usize, extent: usize| {
        let lo = c as isize - (size / 2) as isize;
        let hi = lo + size as isize;
        (lo.max(0) as usize, (hi.max(0) as usize).min(extent))
    };
    let (top, bottom) = clip(center.0, h);
    let (left, right) = clip(center.1, w);
    Region {
        top,
        left,
        bottom,
        right,
    }
}

/// Zero a square centred on the given pixel in every channel.
pub fn cutout_at(img: &Image, size: usize, center: (usize, usize)) -> Image {
    let r = cutout_region(img.height(), img.width(), size, center);
    img.rebuild(img.height(), img.width(), |_, ch, k, l| {
        if r.contains(k, l) {
            0.0
        } else {
            img.get(ch, k, l)
        }
    })
}

/// Cutout with the centre drawn uniformly over all pixels.
pub fn cutout(img: &Image, size: usize, rng: &mut Rng) -> Result<Image> {
    if size == 0 {
        return Err(Error::Config("cutout size must be >= 1".into()));
    }
    let center = (rng.below(img.height()), rng.below(img.width()));
    Ok(cutout_at(img, size, center))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErasingParams {
    pub area_lo: f32,
    pub area_hi: f32,
    pub aspect_lo: f32,
    pub aspect_hi: f32,
}

impl Default for ErasingParams {
    fn default() -> Self {
        Self {
            area_lo: 0.02,
            area_hi: 0.33,
            aspect_lo: 0.3,
            aspect_hi: 3.3,
        }
    }
}

impl ErasingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.area_lo && self.area_lo <= self.area_hi && self.area_hi < 1.0) {
            return Err(Error::Config(format!(
                "erasing area fractions need 0 < lo <= hi < 1, got [{}, {}]",
                self.area_lo, self.area_hi
            )));
        }
        if !(0.0 < self.aspect_lo && self.aspect_lo <= self.aspect_hi) {
            return Err(Error::Config(format!(
                "erasing aspect ratios need 0 < lo <= hi, got [{}, {}]",
                self.aspect_lo, self.aspect_hi
            )));
        }
        Ok(())
    }
}

pub const ERASING_ATTEMPTS: usize = 10;

/// Pick the rectangle RandomErasing would overwrite, or `None` when all
/// placement attempts fail.
pub fn erasing_region(h: usize, w: usize, params: &ErasingParams, rng: &mut Rng) -> Result<Option<Region>> {
    params.validate()?;
    let total = (h * w) as f32;
    for _ in 0..ERASING_ATTEMPTS {
        let area = rng.uniform_in(params.area_lo, params.area_hi) * total;
        // log-uniform aspect so r and 1/r are equally likely
        let aspect = rng
            .uniform_in(params.aspect_lo.ln(), params.aspect_hi.ln())
            .exp();
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let top = rng.below(h - eh + 1);
        let left = rng.below(w - ew + 1);
        return Ok(Some(Region {
            top,
            left,
            bottom: top + eh,
            right: left + ew,
        }));
    }
    Ok(None)
}

/// Overwrite one random rectangle with iid uniform `[0, 1)` noise.
pub fn random_erasing(img: &Image, params: &ErasingParams, rng: &mut Rng) -> Result<Image> {
    let Some(r) = erasing_region(img.height(), img.width(), params, rng)? else {
        return Ok(img.clone());
    };
    Ok(img.rebuild(img.height(), img.width(), |_, ch, k, l| {
        if r.contains(k, l) {
            rng.uniform()
        } else {
            img.get(ch, k, l)
        }
    }))
}

pub fn crop_at(img: &Image, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 || top + out_h > img.height() || left + out_w > img.width() {
        return Err(Error::Config(format!(
            "crop {out_h}x{out_w} at ({top},{left}) does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    Ok(img.rebuild(out_h, out_w, |_, ch, k, l| img.get(ch, top + k, left + l)))
}

/// Copy an `out_h x out_w` window at a uniformly random offset.
pub fn random_crop(img: &Image, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<Image> {
    if out_h > img.height() || out_w > img.width() {
        return Err(Error::Config(format!(
            "crop {out_h}x{out_w} larger than image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let top = rng.below(img.height() - out_h + 1);
    let left = rng.below(img.width() - out_w + 1);
    crop_at(img, top, left, out_h, out_w)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let w = img.width();
    img.rebuild(img.height(), w, |_, ch, k, l| img.get(ch, k, w - 1 - l))
}

/// Mirror columns with probability `prob`.
pub fn hflip(img: &Image, prob: f32, rng: &mut Rng) -> Image {
    if rng.uniform() < prob {
        flip_horizontal(img)
    } else {
        img.clone()
    }
}

/// Nearest-neighbour resize; the identity when the size already matches.
pub fn resize_nearest(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be non-empty".into()));
    }
    if out_h == img.height() && out_w == img.width() {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    Ok(img.rebuild(out_h, out_w, |_, ch, k, l| img.get(ch, k * h / out_h, l * w / out_w)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentStep {
    Resize(usize, usize),
    Crop(usize, usize),
    HFlip(f32),
    Cutout(usize),
    RandomErasing(ErasingParams),
}

impl AugmentStep {
    pub fn apply(&self, img: &Image, rng: &mut Rng) -> Result<Image> {
        match *self {
            AugmentStep::Resize(h, w) => resize_nearest(img, h, w),
            AugmentStep::Crop(h, w) => random_crop(img, h, w, rng),
            AugmentStep::HFlip(p) => Ok(hflip(img, p, rng)),
            AugmentStep::Cutout(size) => cutout(img, size, rng),
            AugmentStep::RandomErasing(ref p) => random_erasing(img, p, rng),
        }
    }
}

impl fmt::Display for AugmentStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentStep::Resize(h, w) => write!(f, "resize:{h}x{w}"),
            AugmentStep::Crop(h, w) => write!(f, "crop:{h}x{w}"),
            AugmentStep::HFlip(p) => write!(f, "hflip:{p}"),
            AugmentStep::Cutout(s) => write!(f, "cutout:{s}"),
            AugmentStep::RandomErasing(p) => write!(
                f,
                "erasing:{}:{}:{}:{}",
                p.area_lo, p.area_hi, p.aspect_lo, p.aspect_hi
            ),
        }
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad {what} '{s}'")))
}

fn parse_hw(s: &str) -> Result<(usize, usize)> {
    match s.split_once('x') {
        Some((h, w)) => Ok((parse_num(h, "height")?, parse_num(w, "width")?)),
        None => {
            let v = parse_num(s, "size")?;
            Ok((v, v))
        }
    }
}

impl FromStr for AugmentStep {
    type Err = Error;

    /// `resize:HxW`, `crop:HxW`, `hflip[:P]`, `cutout:S`, `erasing[:alo:ahi:rlo:rhi]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let step = match name {
            "resize" => {
                let (h, w) = parse_hw(arg)?;
                AugmentStep::Resize(h, w)
            }
            "crop" => {
                let (h, w) = parse_hw(arg)?;
                AugmentStep::Crop(h, w)
            }
            "hflip" if arg.is_empty() => AugmentStep::HFlip(0.5),
            "hflip" => AugmentStep::HFlip(parse_num(arg, "flip probability")?),
            "cutout" => {
                let size: usize = parse_num(arg, "cutout size")?;
                if size == 0 {
                    return Err(Error::Config("cutout size must be >= 1".into()));
                }
                AugmentStep::Cutout(size)
            }
            "erasing" if arg.is_empty() => AugmentStep::RandomErasing(ErasingParams::default()),
            "erasing" => {
                let v: Vec<f32> = arg
                    .split(':')
                    .map(|x| parse_num(x, "erasing parameter"))
                    .collect::<Result<_>>()?;
                let [area_lo, area_hi, aspect_lo, aspect_hi] = v[..] else {
                    return Err(Error::Config(format!("erasing takes 4 parameters, got '{arg}'")));
                };
                let p = ErasingParams {
                    area_lo,
                    area_hi,
                    aspect_lo,
                    aspect_hi,
                };
                p.validate()?;
                AugmentStep::RandomErasing(p)
            }
            other => return Err(Error::Config(format!("unknown augmentation step '{other}'"))),
        };
        Ok(step)
    }
}

/// Ordered augmentation steps plus the seed their random choices derive from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPlan {
    pub steps: Vec<AugmentStep>,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn new(steps: Vec<AugmentStep>, seed: u64) -> Self {
        Self { steps, seed }
    }

    /// Parse a comma-separated list of steps, e.g. `crop:28x28,hflip:0.5,cutout:8`.
    pub fn parse(spec: &str, seed: u64) -> Result<Self> {
        let steps = spec
            .split(',')
            .filter(|s| !s.trim().is_empty() && s.trim() != "none")
            .map(str::parse)
            .collect::<Result<_>>()?;
        Ok(Self { steps, seed })
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Apply every step in order. `stream` selects an independent random
    /// stream (`seed ^ stream`), e.g. a sample or worker index.
    pub fn apply(&self, img: &Image, stream: u64) -> Result<Image> {
        let mut rng = Rng::derive(self.seed, stream);
        self.apply_with(img, &mut rng)
    }

    pub fn apply_with(&self, img: &Image, rng: &mut Rng) -> Result<Image> {
        let mut out = img.clone();
        for step in &self.steps {
            out = step.apply(&out, rng)?;
        }
        Ok(out)
    }
}

impl fmt::Display for AugmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}
