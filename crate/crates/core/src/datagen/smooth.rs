use super::grid::{ImageGrid, Mask};
use crate::error::{Error, Result};

/// Fraction of the peak absolute value above which a smoothed pattern pixel
/// counts as part of the pattern's support.
pub const SUPPORT_THRESHOLD: f64 = 0.05;

/// Normalised 1-D Gaussian taps truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable Gaussian blur with zero padding; `sigma == 0` is the identity.
pub fn gaussian_smooth(grid: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(grid.clone());
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let n = grid.side();
    let src = grid.data();
    let mut rows_done = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (k, &w) in taps.iter().enumerate() {
                let cc = c as isize + k as isize - radius;
                if cc >= 0 && (cc as usize) < n {
                    acc += w * src[r * n + cc as usize];
                }
            }
            rows_done[r * n + c] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (k, &w) in taps.iter().enumerate() {
                let rr = r as isize + k as isize - radius;
                if rr >= 0 && (rr as usize) < n {
                    acc += w * rows_done[rr as usize * n + c];
                }
            }
            out[r * n + c] = acc;
        }
    }
    ImageGrid::new(n, out)
}

/// Pixels whose magnitude reaches 5% of the grid's peak magnitude.
pub fn threshold_support(grid: &ImageGrid) -> Result<Mask> {
    let peak = grid.max_abs();
    if peak == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot threshold the support of an all-zero pattern".into(),
        ));
    }
    let cut = SUPPORT_THRESHOLD * peak;
    Mask::new(
        grid.side(),
        grid.data().iter().map(|v| v.abs() >= cut).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::pattern::{make_pattern, TetrominoKind};

    fn impulse(side: usize) -> ImageGrid {
        let mut g = ImageGrid::zeros(side);
        g.set(side / 2, side / 2, 1.0);
        g
    }

    #[test]
    fn zero_sigma_is_identity() {
        let g = ImageGrid::new(2, vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        assert_eq!(gaussian_smooth(&g, 0.0).unwrap(), g);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_smooth(&ImageGrid::zeros(4), -1.0).is_err());
    }

    #[test]
    fn impulse_response_is_centered_and_symmetric() {
        let side = 64;
        let out = gaussian_smooth(&impulse(side), 1.5).unwrap();
        let c = side / 2;
        let peak = out.get(c, c);
        assert!(out.data().iter().all(|&v| v <= peak));
        for d in 1..6 {
            assert!((out.get(c - d, c) - out.get(c + d, c)).abs() < 1e-15);
            assert!((out.get(c, c - d) - out.get(c, c + d)).abs() < 1e-15);
            assert!((out.get(c - d, c) - out.get(c, c - d)).abs() < 1e-15);
        }
    }

    #[test]
    fn interior_impulse_keeps_unit_mass() {
        for sigma in [0.7, 1.5, 3.0, 10.0] {
            let out = gaussian_smooth(&impulse(128), sigma).unwrap();
            let total: f64 = out.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "sigma {sigma}: {total}");
        }
    }

    #[test]
    fn threshold_at_five_percent() {
        let g = ImageGrid::new(2, vec![1.0, 0.04, 0.06, 0.0]).unwrap();
        let m = threshold_support(&g).unwrap();
        assert_eq!(m.data(), &[true, false, true, false]);
    }

    #[test]
    fn threshold_of_binary_pattern_is_its_nonzero_set() {
        let p = make_pattern(TetrominoKind::L, 1, (2, 1), 1, 8).unwrap();
        assert_eq!(threshold_support(&p.grid).unwrap(), Mask::nonzero(&p.grid));
    }

    #[test]
    fn smoothing_widens_support() {
        let p = make_pattern(TetrominoKind::T, 0, (8, 8), 8, 64).unwrap();
        let raw = threshold_support(&p.grid).unwrap();
        let smoothed = threshold_support(&gaussian_smooth(&p.grid, 1.5).unwrap()).unwrap();
        assert!(raw.is_subset_of(&smoothed));
        assert!(smoothed.count() > raw.count());
    }

    #[test]
    fn all_zero_support_rejected() {
        assert!(threshold_support(&ImageGrid::zeros(3)).is_err());
    }
}
