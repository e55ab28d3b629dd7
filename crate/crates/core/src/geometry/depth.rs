//! Depth rasters: predicted depth with uncertainty, sparse anchors, and
//! volume-simulated depth.

use crate::error::{Error, Result};
use crate::geometry::grid::{bilinear_sample, Grid};

/// Per-pixel depth prediction: mean, standard deviation, and validity mask.
///
/// Depths are z-components in the camera frame, not ray lengths. Valid pixels
/// carry a strictly positive mean and a finite, non-negative std; a zero std
/// marks exact (noise-free) depth and is accepted here, while the losses that
/// divide by the std guard against it themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    mean: Grid<f64>,
    std: Grid<f64>,
    valid: Grid<bool>,
}

impl DepthMap {
    pub fn new(mean: Grid<f64>, std: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        if !mean.same_shape(&std) || !mean.same_shape(&valid) {
            return Err(Error::DimensionMismatch(
                "depth mean/std/mask shapes differ".into(),
            ));
        }
        for (u, v, &ok) in valid.iter_pixels() {
            if !ok {
                continue;
            }
            let m = *mean.get(u, v);
            let s = *std.get(u, v);
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "valid pixel ({u}, {v}) has non-positive depth {m}"
                )));
            }
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "valid pixel ({u}, {v}) has bad std {s}"
                )));
            }
        }
        Ok(Self { mean, std, valid })
    }

    /// Uniform-std map, useful for synthetic data.
    pub fn with_uniform_std(mean: Grid<f64>, std: f64, valid: Grid<bool>) -> Result<Self> {
        let s = Grid::new_fill(mean.width(), mean.height(), std);
        Self::new(mean, s, valid)
    }

    pub fn width(&self) -> usize {
        self.mean.width()
    }

    pub fn height(&self) -> usize {
        self.mean.height()
    }

    pub fn mean(&self) -> &Grid<f64> {
        &self.mean
    }

    pub fn std(&self) -> &Grid<f64> {
        &self.std
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn mean_mut(&mut self) -> &mut Grid<f64> {
        &mut self.mean
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        *self.valid.get(u, v)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count_set()
    }

    /// Bilinear depth at a subpixel location; `None` when out of the sampling
    /// domain or when a positively weighted neighbor is invalid.
    pub fn sample_mean(&self, x: f64, y: f64) -> Option<f64> {
        bilinear_sample(&self.mean, &self.valid, x, y)
    }

    /// Bilinear (mean, std) pair at a subpixel location.
    pub fn sample_mean_std(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = bilinear_sample(&self.mean, &self.valid, x, y)?;
        let s = bilinear_sample(&self.std, &self.valid, x, y)?;
        Some((m, s))
    }

    /// Mean depth over valid pixels.
    pub fn mean_depth(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (u, v, &ok) in self.valid.iter_pixels() {
            if ok {
                sum += self.mean.get(u, v);
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Sparse metric depth anchors from SfM, rasterized onto the image grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepth {
    values: Grid<f64>,
    mask: Grid<bool>,
}

impl SparseDepth {
    pub fn new(values: Grid<f64>, mask: Grid<bool>) -> Result<Self> {
        if !values.same_shape(&mask) {
            return Err(Error::DimensionMismatch(
                "sparse depth value/mask shapes differ".into(),
            ));
        }
        for (u, v, &on) in mask.iter_pixels() {
            if on {
                let d = *values.get(u, v);
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "sparse anchor ({u}, {v}) has non-positive depth {d}"
                    )));
                }
            }
        }
        Ok(Self { values, mask })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            values: Grid::new_fill(width, height, 0.0),
            mask: Grid::new_fill(width, height, false),
        }
    }

    /// Insert one anchor at an integer pixel.
    pub fn insert(&mut self, u: usize, v: usize, depth: f64) -> Result<()> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        self.values.set(u, v, depth);
        self.mask.set(u, v, true);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.count_set()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mask
            .iter_pixels()
            .filter(|&(_, _, &on)| on)
            .map(|(u, v, _)| (u, v, *self.values.get(u, v)))
    }
}

/// Depth rendered back out of the fused volume by ray casting. Pixels whose
/// rays found no zero crossing are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDepth {
    depth: Grid<f64>,
    valid: Grid<bool>,
}

impl SimulatedDepth {
    pub fn new(depth: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        if !depth.same_shape(&valid) {
            return Err(Error::DimensionMismatch(
                "simulated depth value/mask shapes differ".into(),
            ));
        }
        for (u, v, &ok) in valid.iter_pixels() {
            if ok {
                let d = *depth.get(u, v);
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "simulated pixel ({u}, {v}) has non-positive depth {d}"
                    )));
                }
            }
        }
        Ok(Self { depth, valid })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn depth(&self) -> &Grid<f64> {
        &self.depth
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count_set()
    }

    /// View the simulation as a `DepthMap`, borrowing per-pixel stds from a
    /// prediction for the same frame. Valid where both agree on validity.
    pub fn to_depth_map_with_std(&self, std_source: &DepthMap) -> Result<DepthMap> {
        if self.width() != std_source.width() || self.height() != std_source.height() {
            return Err(Error::DimensionMismatch(
                "simulated depth and std source shapes differ".into(),
            ));
        }
        let valid = self.valid.and(std_source.valid())?;
        DepthMap::new(self.depth.clone(), std_source.std().clone(), valid)
    }

    /// View the simulation as a `DepthMap` with a constant std. Used where a
    /// loss ignores the source std (e.g. flow source) or none is available.
    pub fn to_depth_map_uniform_std(&self, std: f64) -> Result<DepthMap> {
        DepthMap::with_uniform_std(self.depth.clone(), std, self.valid.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_map_rejects_bad_valid_pixels() {
        let mean = Grid::from_vec(2, 1, vec![1.0, -3.0]).unwrap();
        let std = Grid::new_fill(2, 1, 0.1);
        let mut valid = Grid::new_fill(2, 1, false);
        valid.set(0, 0, true);
        // Invalid pixel may hold garbage.
        assert!(DepthMap::new(mean.clone(), std.clone(), valid.clone()).is_ok());
        valid.set(1, 0, true);
        assert!(DepthMap::new(mean, std, valid).is_err());
    }

    #[test]
    fn zero_std_is_accepted() {
        let mean = Grid::new_fill(2, 2, 1.5);
        let valid = Grid::new_fill(2, 2, true);
        assert!(DepthMap::with_uniform_std(mean, 0.0, valid).is_ok());
    }

    #[test]
    fn sparse_iter_yields_anchors() {
        let mut s = SparseDepth::empty(4, 4);
        s.insert(1, 2, 3.0).unwrap();
        s.insert(0, 0, 1.0).unwrap();
        let got: Vec<_> = s.iter().collect();
        assert_eq!(got, vec![(0, 0, 1.0), (1, 2, 3.0)]);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn simulated_to_depth_map_intersects_masks() {
        let depth = Grid::new_fill(2, 1, 2.0);
        let mut sim_valid = Grid::new_fill(2, 1, true);
        sim_valid.set(1, 0, false);
        let sim = SimulatedDepth::new(depth, sim_valid).unwrap();

        let mut pred_valid = Grid::new_fill(2, 1, true);
        pred_valid.set(0, 0, true);
        let pred = DepthMap::new(
            Grid::new_fill(2, 1, 1.0),
            Grid::new_fill(2, 1, 0.2),
            pred_valid,
        )
        .unwrap();

        let dm = sim.to_depth_map_with_std(&pred).unwrap();
        assert_eq!(dm.valid_count(), 1);
        assert!(dm.is_valid(0, 0));
        assert_eq!(*dm.std().get(0, 0), 0.2);
        assert_eq!(*dm.mean().get(0, 0), 2.0);
    }
}
