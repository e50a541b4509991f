//! Apply a drop variant to a single image, as a picture of what each mask
//! removes.

use crate::augment::Image;
use crate::error::Result;
use crate::regularizers::{forward, DropConfig, DropMask, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Visualization {
    /// Raw layer output; Dropout survivors are scaled and may exceed 1.
    pub output: Tensor,
    pub mask: DropMask,
    /// `output` clamped to `[0, 1]` for display.
    pub image: Image,
}

/// Run `cfg` in Train mode on `img` viewed as a `(1, C, H, W)` tensor.
pub fn visualize(img: &Image, cfg: &DropConfig) -> Result<Visualization> {
    let cfg = cfg.with_mode(Mode::Train);
    let (output, mask) = forward(img.tensor(), &cfg)?;
    let image = Image::new(output.map(|v| v.clamp(0.0, 1.0)))?;
    Ok(Visualization { output, mask, image })
}

/// Fraction of pixels whose every channel is exactly zero.
pub fn black_fraction(img: &Image) -> f64 {
    let (h, w) = (img.height(), img.width());
    let black = (0..h * w)
        .filter(|&o| (0..img.channels()).all(|ch| img.get(ch, o / w, o % w) == 0.0))
        .count();
    black as f64 / (h * w) as f64
}

/// Pixels where some channels were zeroed and others kept.
pub fn partial_pixels(before: &Image, after: &Image) -> usize {
    let (h, w) = (after.height(), after.width());
    (0..h * w)
        .filter(|&o| {
            let (k, l) = (o / w, o % w);
            let zeroed = (0..after.channels())
                .filter(|&ch| after.get(ch, k, l) == 0.0 && before.get(ch, k, l) != 0.0)
                .count();
            zeroed > 0 && zeroed < after.channels()
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::Variant;
    use crate::synth::textured_image;

    #[test]
    fn rate_zero_is_identity() {
        let img = textured_image(16, 16, 2).unwrap();
        for v in Variant::ALL {
            let out = visualize(&img, &DropConfig::new(v, 0.0).unwrap()).unwrap();
            assert_eq!(out.image, img, "{v}");
        }
    }

    #[test]
    fn v2_drops_whole_pixels() {
        let img = textured_image(32, 32, 5).unwrap();
        let out = visualize(&img, &DropConfig::new(Variant::MaxDropoutV2, 0.5).unwrap()).unwrap();
        assert_eq!(partial_pixels(&img, &out.image), 0);
        assert!(black_fraction(&out.image) > 0.0);
        let dropout = visualize(&img, &DropConfig::new(Variant::Dropout, 0.5).unwrap().with_seed(1)).unwrap();
        assert!(partial_pixels(&img, &dropout.image) > 0);
    }
}
