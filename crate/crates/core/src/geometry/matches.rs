//! Sparse feature correspondences between frame pairs.

use crate::error::{Error, Result};

/// One correspondence: pixel `a` in frame `frame_a` matches pixel `b` in
/// frame `frame_b`. Pixel coordinates are subpixel, pixel-center convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureMatch {
    pub frame_a: usize,
    pub frame_b: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// An oriented pixel pair for a specific ordered frame pair `(j, k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelPair {
    /// Pixel in frame `j`.
    pub a: [f64; 2],
    /// Pixel in frame `k`.
    pub b: [f64; 2],
}

/// All feature matches of a sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatchSet {
    matches: Vec<FeatureMatch>,
}

impl FeatureMatchSet {
    pub fn new(matches: Vec<FeatureMatch>) -> Result<Self> {
        for m in &matches {
            if m.frame_a == m.frame_b {
                return Err(Error::InvalidInput(format!(
                    "match joins frame {} with itself",
                    m.frame_a
                )));
            }
            if !(m.a[0].is_finite() && m.a[1].is_finite() && m.b[0].is_finite() && m.b[1].is_finite())
            {
                return Err(Error::InvalidInput("non-finite match pixel".into()));
            }
        }
        Ok(Self { matches })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: FeatureMatch) {
        self.matches.push(m);
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureMatch> {
        self.matches.iter()
    }

    /// Matches for the ordered pair `(j, k)`, orienting each so that `a`
    /// lies in frame `j`. Stored order is preserved.
    pub fn for_pair(&self, j: usize, k: usize) -> Vec<PixelPair> {
        self.matches
            .iter()
            .filter_map(|m| {
                if m.frame_a == j && m.frame_b == k {
                    Some(PixelPair { a: m.a, b: m.b })
                } else if m.frame_a == k && m.frame_b == j {
                    Some(PixelPair { a: m.b, b: m.a })
                } else {
                    None
                }
            })
            .collect()
    }

    /// Frame pairs (smaller index first) that have at least one match,
    /// sorted and deduplicated.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .matches
            .iter()
            .map(|m| {
                (
                    m.frame_a.min(m.frame_b),
                    m.frame_a.max(m.frame_b),
                )
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
