//! Linear RGB image buffers and their on-disk forms.
//!
//! Two encodings are supported: 8-bit PNG for viewing, and a float planar
//! binary for metrics. The planar layout is
//!
//! | bytes | content                                         |
//! |-------|-------------------------------------------------|
//! | 4     | magic `UBSF`                                    |
//! | 4     | width, u32 little-endian                        |
//! | 4     | height, u32 little-endian                       |
//! | 12·W·H| R plane, G plane, B plane; f32 LE, row-major    |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, UbsError};

const PLANAR_MAGIC: &[u8; 4] = b"UBSF";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB pixels.
    pub data: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self { width, height, data: vec![rgb; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.data[y * self.width + x] = rgb;
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest per-channel absolute difference.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert!(self.same_size(other), "image size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max)
    }

    /// Channel `c` as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[c]).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            let p = self.data[i];
            *px = image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
        Ok(Self { width: w as usize, height: h as usize, data })
    }

    pub fn to_planar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 12 * self.data.len());
        out.extend_from_slice(PLANAR_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for c in 0..3 {
            for p in &self.data {
                out.extend_from_slice(&(p[c] as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_planar_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != PLANAR_MAGIC {
            return Err(UbsError::Format("bad magic in float image".into()));
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = w * h;
        if bytes.len() != 12 + 12 * n {
            return Err(UbsError::Format("truncated float image".into()));
        }
        let mut img = Self::new(w, h);
        let body = &bytes[12..];
        for c in 0..3 {
            for i in 0..n {
                let off = 4 * (c * n + i);
                img.data[i][c] = f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64;
            }
        }
        Ok(img)
    }

    pub fn save_planar(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_planar_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load_planar(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_planar_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_layout_is_plane_major() {
        let mut img = ImageBuffer::new(2, 1);
        img.set(0, 0, [0.25, 0.5, 0.75]);
        img.set(1, 0, [1.0, 0.0, 0.125]);
        let bytes = img.to_planar_bytes();
        let f = |k: usize| f32::from_le_bytes(bytes[12 + 4 * k..16 + 4 * k].try_into().unwrap());
        assert_eq!([f(0), f(1), f(2), f(3), f(4), f(5)], [0.25, 1.0, 0.5, 0.0, 0.75, 0.125]);
        assert_eq!(ImageBuffer::from_planar_bytes(&bytes).unwrap(), img);
        assert!(ImageBuffer::from_planar_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn png_roundtrip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = ImageBuffer::new(3, 2);
        img.set(2, 1, [1.0, 0.5, 0.0]);
        img.save_png(&path).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }
}
