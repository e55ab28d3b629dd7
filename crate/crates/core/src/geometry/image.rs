//! 8-bit RGB images used for mesh coloring.

use crate::error::Result;
use crate::geometry::grid::{bilinear_corners, Grid};

/// Row-major RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pixels: Grid<[u8; 3]>,
}

impl ColorImage {
    pub fn new_fill(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            pixels: Grid::new_fill(width, height, rgb),
        }
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        Ok(Self {
            pixels: Grid::from_vec(width, height, pixels)?,
        })
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        *self.pixels.get(u, v)
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        self.pixels.set(u, v, rgb);
    }

    pub fn as_slice(&self) -> &[[u8; 3]] {
        self.pixels.as_slice()
    }

    /// Bilinear RGB sample in `[0, 1]` per channel; `None` outside the
    /// pixel-center domain.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        let corners = bilinear_corners(self.width(), self.height(), x, y)?;
        let mut acc = [0.0f64; 3];
        for (u, v, w) in corners {
            if w > 0.0 {
                let rgb = self.pixels.get(u, v);
                for c in 0..3 {
                    acc[c] += w * rgb[c] as f64 / 255.0;
                }
            }
        }
        Some([acc[0] as f32, acc[1] as f32, acc[2] as f32])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_blends_neighbors() {
        let img = ColorImage::from_vec(2, 1, vec![[0, 0, 0], [255, 255, 255]]).unwrap();
        let s = img.sample(0.5, 0.0).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-6);
        assert!(img.sample(2.0, 0.0).is_none());
    }
}
