//! Row-major 2D grid storage shared by depth maps, masks, and flow fields.

use crate::error::{Error, Result};

/// Dense H×W grid, row-major, indexed as `(u, v)` with `u` along the width.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    /// Grid filled with a single value.
    pub fn new_fill(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wrap an existing row-major buffer.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "buffer holds {} values, grid is {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[self.idx(u, v)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let i = self.idx(u, v);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterate `(u, v, &value)` in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, t)| (i % w, i / w, t))
    }

    pub fn same_shape<U: Clone>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Grid<bool> {
    /// Number of set pixels.
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixel-wise AND of two equally shaped masks.
    pub fn and(&self, other: &Grid<bool>) -> Result<Grid<bool>> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(Grid {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

/// Bilinear sample of `values` at the subpixel location `(x, y)`.
///
/// Integer coordinates address pixel centers. All four cell corners must be
/// valid or the sample fails; at the image border the cell is clamped, so a
/// sample exactly on the last row/column only involves the pixels that
/// exist. Returns `None` outside `[0, w-1] x [0, h-1]`.
pub fn bilinear_sample(values: &Grid<f64>, valid: &Grid<bool>, x: f64, y: f64) -> Option<f64> {
    bilinear_sample_generic(values, valid, x, y)
}

/// [`bilinear_sample`] over any scalar, so pose-dependent sample locations
/// can carry derivatives through the interpolation weights. Validity and
/// bounds decisions branch on the primal value.
pub(crate) fn bilinear_sample_generic<T: crate::autodiff::Real>(
    values: &Grid<f64>,
    valid: &Grid<bool>,
    x: T,
    y: T,
) -> Option<T> {
    let (w, h) = (values.width(), values.height());
    let (xv, yv) = (x.val(), y.val());
    if !(xv >= 0.0 && xv <= (w - 1) as f64 && yv >= 0.0 && yv <= (h - 1) as f64) {
        return None;
    }
    let x0 = xv.floor() as usize;
    let y0 = yv.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    if !(*valid.get(x0, y0) && *valid.get(x1, y0) && *valid.get(x0, y1) && *valid.get(x1, y1)) {
        return None;
    }
    let one = T::from_f64(1.0);
    let fx = x - T::from_f64(x0 as f64);
    let fy = y - T::from_f64(y0 as f64);
    let lift = |u: usize, v: usize| T::from_f64(*values.get(u, v));
    Some(
        (one - fx) * (one - fy) * lift(x0, y0)
            + fx * (one - fy) * lift(x1, y0)
            + (one - fx) * fy * lift(x0, y1)
            + fx * fy * lift(x1, y1),
    )
}

/// The four bilinear corners and weights for `(x, y)`, or `None` when the
/// location falls outside the pixel-center domain.
pub fn bilinear_corners(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> Option<[(usize, usize, f64); 4]> {
    if !(x >= 0.0 && x <= (width - 1) as f64 && y >= 0.0 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Some([
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ])
}
