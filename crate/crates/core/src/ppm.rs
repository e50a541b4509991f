//! Binary netpbm I/O: P6 (RGB) and P5 (grey), maxval 255.
//!
//! Samples map linearly to `[0, 1]` as `v / 255`; writing rounds `x * 255`
//! back, so decode followed by encode reproduces the input bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::parse(0, "missing P6/P5 magic")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(maxval_at, format!("unsupported maxval {maxval}, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(3, "zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::parse(cur.pos, "expected a single whitespace before raster")),
    }
    let need = width * height * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("raster truncated: need {need} bytes, found {}", raster.len()),
        ));
    }
    let shape = Shape::new(1, channels, height, width)?;
    // interleaved HWC on disk, planar CHW in memory
    let t = Tensor::from_fn(shape, |_, ch, k, l| {
        f32::from(raster[(k * width + l) * channels + ch]) / 255.0
    });
    Image::new(t)
}

pub fn encode(img: &Image) -> Vec<u8> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for k in 0..h {
        for l in 0..w {
            for ch in 0..c {
                out.push(to_byte(img.get(ch, k, l)));
            }
        }
    }
    out
}

fn to_byte(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    decode(&fs::read(path)?)
}

pub fn write(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(img))?;
    Ok(())
}
