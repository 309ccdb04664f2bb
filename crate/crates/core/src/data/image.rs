//! 8-bit grayscale images and binary PGM (`P5`, maxval 255) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// `[1, 1, H, W]` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor::from_vec(&[1, 1, self.height, self.width], data).expect("dimensions are positive")
    }

    /// Inverse of [`Image::to_tensor`]: clamps to `[0, 1]` and rounds to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims4("image tensor")?;
        if n != 1 || c != 1 {
            return Err(Error::invalid(format!(
                "expected a single grayscale image tensor, got shape {:?}",
                t.shape()
            )));
        }
        let pixels = t.data().iter().map(|&v| quantize(v * 255.0)).collect();
        Image::new(w, h, pixels)
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut reader = HeaderReader { bytes, pos: 0 };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::parse(0, "missing P5 magic"));
        }
        reader.pos = 2;
        let (width, _) = reader.number("width")?;
        let (height, _) = reader.number("height")?;
        let (maxval, maxval_at) = reader.number("maxval")?;
        if maxval != 255 {
            return Err(Error::parse(
                maxval_at,
                format!("unsupported maxval {maxval}, only 255 is accepted"),
            ));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(reader.pos) {
            Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
            _ => return Err(Error::parse(reader.pos, "expected whitespace after maxval")),
        }
        if width == 0 || height == 0 {
            return Err(Error::parse(2, "image dimensions must be positive"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::parse(2, "image dimensions overflow"))?;
        let start = reader.pos;
        if bytes.len() - start < n {
            return Err(Error::parse(
                bytes.len(),
                format!(
                    "truncated raster: expected {n} bytes, found {}",
                    bytes.len() - start
                ),
            ));
        }
        Image::new(width, height, bytes[start..start + n].to_vec())
    }

    /// Canonical encoding: `P5\n<w> <h>\n255\n` followed by the raster.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_separators(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    /// Parses a decimal field, returning it with its starting offset.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        let before = self.pos;
        self.skip_separators();
        if self.pos == before {
            return Err(Error::parse(
                self.pos,
                format!("expected whitespace before {what}"),
            ));
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map(|v| (v, start))
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::decode_pgm(&bytes)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode_pgm()).map_err(|e| Error::io(path, e))
}
