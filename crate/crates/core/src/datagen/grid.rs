use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square image of real pixel values in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    side: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 || data.len() != side * side {
            return Err(Error::InvalidArgument(format!(
                "a {side}x{side} grid needs {} values, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(ImageGrid { side, data })
    }

    pub fn zeros(side: usize) -> Self {
        ImageGrid {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.side + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_scaled(&mut self, other: &ImageGrid, factor: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Rotates the whole grid by 90 degrees clockwise.
    pub fn rotate_quarter(&self) -> ImageGrid {
        let n = self.side;
        let mut out = ImageGrid::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.set(c, n - 1 - r, self.get(r, c));
            }
        }
        out
    }
}

/// Boolean pixel set over a square grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    side: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(side: usize, data: Vec<bool>) -> Result<Self> {
        if side == 0 || data.len() != side * side {
            return Err(Error::InvalidArgument(format!(
                "a {side}x{side} mask needs {} entries, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Mask { side, data })
    }

    pub fn empty(side: usize) -> Self {
        Mask {
            side,
            data: vec![false; side * side],
        }
    }

    /// Pixels where the grid is nonzero.
    pub fn nonzero(grid: &ImageGrid) -> Self {
        Mask {
            side: grid.side(),
            data: grid.data().iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.side + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            side: self.side,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Flat indices of the set pixels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}
