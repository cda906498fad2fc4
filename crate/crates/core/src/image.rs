//! Dense images and crop-resized regions, plus the raw `.fkdi` container
//! used to persist synthetic datasets.
//!
//! Container layout (little-endian): magic `"FKDI"`, height `u32`, width
//! `u32`, channels `u32`, then `height × width × channels` f32 values in
//! row-major HWC order.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"FKDI";

/// An `height × width × channels` image stored row-major, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(&IMAGE_MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != IMAGE_MAGIC {
            return Err(Error::invalid("not an FKDI image container"));
        }
        let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(4), dim(8), dim(12));
        let n = h * w * c;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::invalid(format!(
                "image container holds {} bytes, expected {}",
                bytes.len(),
                16 + 4 * n
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Image::new(h, w, c, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A crop-resized `resolution × resolution × channels` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    resolution: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Region {
    pub fn new(resolution: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::invalid("region dimensions must be positive"));
        }
        if pixels.len() != resolution * resolution * channels {
            return Err(Error::LengthMismatch {
                expected: resolution * resolution * channels,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("region pixels"));
        }
        Ok(Region {
            resolution,
            channels,
            pixels,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.resolution + col) * self.channels + channel]
    }

    /// Horizontal mirror.
    pub fn flipped(&self) -> Region {
        let (r, ch) = (self.resolution, self.channels);
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in 0..r {
            for col in (0..r).rev() {
                let at = (row * r + col) * ch;
                pixels.extend_from_slice(&self.pixels[at..at + ch]);
            }
        }
        Region {
            resolution: r,
            channels: ch,
            pixels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let img = Image::new(2, 3, 2, (0..12).map(|v| v as f32 * 0.25).collect()).unwrap();
        assert_eq!(Image::from_bytes(&img.to_bytes()).unwrap(), img);
        let mut bad = img.to_bytes();
        bad.pop();
        assert!(Image::from_bytes(&bad).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let r = Region::new(3, 2, (0..18).map(|v| v as f64).collect()).unwrap();
        assert_eq!(r.flipped().at(0, 0, 1), r.at(0, 2, 1));
        assert_eq!(r.flipped().flipped(), r);
    }
}
