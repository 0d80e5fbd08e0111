use serde::{Deserialize, Serialize};

use crate::datagen::ImageGrid;
use crate::error::{Error, Result};

/// A per-pixel relevance map for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub grid: ImageGrid,
    pub method: String,
    pub sample_id: usize,
    /// Whether scores carry sign. Metrics always use magnitudes.
    pub signed: bool,
    /// Hyperparameters and seed used to produce the map.
    pub provenance: serde_json::Value,
}

impl ImportanceMap {
    pub fn abs_values(&self) -> Vec<f64> {
        self.grid.data().iter().map(|v| v.abs()).collect()
    }
}

/// Square tiles over the image, enumerated row-major; perturbation methods
/// switch whole tiles on and off.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    side: usize,
    size: usize,
}

impl PatchGrid {
    pub fn new(side: usize, size: usize) -> Result<Self> {
        if size == 0 || side % size != 0 {
            return Err(Error::InvalidArgument(format!("patch size {size} does not tile a {side}px image")));
        }
        Ok(PatchGrid { side, size })
    }

    /// Single pixels up to 8x8 images; 4x4 tiles for 64x64.
    pub fn default_for(side: usize) -> Self {
        let size = if side <= 8 { 1 } else { (side / 16).max(1) };
        PatchGrid::new(side, size).unwrap_or(PatchGrid { side, size: 1 })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn count(&self) -> usize {
        (self.side / self.size).pow(2)
    }

    /// Flat pixel indices of patch `p`.
    pub fn pixels(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let per_row = self.side / self.size;
        let (r0, c0) = ((p / per_row) * self.size, (p % per_row) * self.size);
        (0..self.size * self.size).map(move |k| (r0 + k / self.size) * self.side + c0 + k % self.size)
    }

    /// Patch index of every pixel.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.side * self.side];
        for p in 0..self.count() {
            for i in self.pixels(p) {
                out[i] = p;
            }
        }
        out
    }

    /// Copies per-patch values onto their pixels.
    pub fn broadcast(&self, values: &[f64]) -> ImageGrid {
        let data = self.assignment().into_iter().map(|p| values[p]).collect();
        ImageGrid::new(self.side, data).expect("side*side values")
    }

    /// `x` where `on[p]`, the baseline elsewhere.
    pub fn compose(&self, x: &[f64], baseline: &[f64], on: &[bool], out: &mut [f64]) {
        out.copy_from_slice(baseline);
        for (p, _) in on.iter().enumerate().filter(|(_, &b)| b) {
            for i in self.pixels(p) {
                out[i] = x[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patches_tile_the_image() {
        let g = PatchGrid::new(8, 4).unwrap();
        assert_eq!(g.count(), 4);
        assert_eq!(g.pixels(1).collect::<Vec<_>>()[..5], [4, 5, 6, 7, 12]);
        let mut seen = g.assignment();
        seen.sort();
        assert_eq!(seen.iter().filter(|&&p| p == 3).count(), 16);
        assert!(PatchGrid::new(8, 3).is_err());
        assert_eq!(PatchGrid::default_for(64).size(), 4);
        assert_eq!(PatchGrid::default_for(8).count(), 64);
    }

    #[test]
    fn compose_switches_whole_patches() {
        let g = PatchGrid::new(2, 1).unwrap();
        let mut out = [0.0; 4];
        g.compose(&[1.0, 2.0, 3.0, 4.0], &[9.0; 4], &[true, false, false, true], &mut out);
        assert_eq!(out, [1.0, 9.0, 9.0, 4.0]);
    }
}
