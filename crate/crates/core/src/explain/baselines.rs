//! Model-ignorant reference maps.

use rand::Rng;

use crate::datagen::ImageGrid;

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const LAPLACE: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// 3x3 cross-correlation with zero padding.
pub fn filter3(img: &ImageGrid, kernel: &[[f64; 3]; 3]) -> ImageGrid {
    let n = img.side() as isize;
    let mut out = ImageGrid::zeros(img.side());
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (dr, row) in kernel.iter().enumerate() {
                for (dc, &k) in row.iter().enumerate() {
                    let (rr, cc) = (r + dr as isize - 1, c + dc as isize - 1);
                    if (0..n).contains(&rr) && (0..n).contains(&cc) {
                        acc += k * img.get(rr as usize, cc as usize);
                    }
                }
            }
            out.set(r as usize, c as usize, acc);
        }
    }
    out
}

/// Gradient magnitude `sqrt(Gx^2 + Gy^2)`.
pub fn sobel(img: &ImageGrid) -> ImageGrid {
    let gx = filter3(img, &SOBEL_X);
    let gy = filter3(img, &SOBEL_Y);
    let data = gx.data().iter().zip(gy.data()).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    ImageGrid::new(img.side(), data).expect("same side")
}

pub fn laplace(img: &ImageGrid) -> ImageGrid {
    filter3(img, &LAPLACE)
}

/// i.i.d. uniform scores on (-1, 1).
pub fn random_map<R: Rng + ?Sized>(side: usize, rng: &mut R) -> ImageGrid {
    let data = (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
    ImageGrid::new(side, data).expect("side*side values")
}

/// The rectified sample `|x|`.
pub fn input_map(img: &ImageGrid) -> ImageGrid {
    let data = img.data().iter().map(|v| v.abs()).collect();
    ImageGrid::new(img.side(), data).expect("same side")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_interior_response() {
        let img = ImageGrid::new(6, vec![2.5; 36]).unwrap();
        let (s, l) = (sobel(&img), laplace(&img));
        for r in 1..5 {
            for c in 1..5 {
                assert_eq!(s.get(r, c), 0.0);
                assert_eq!(l.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn step_edge_sobel_magnitude() {
        let h = 1.5;
        let mut img = ImageGrid::zeros(8);
        for r in 0..8 {
            for c in 4..8 {
                img.set(r, c, h);
            }
        }
        let s = sobel(&img);
        for r in 1..7 {
            assert_eq!(s.get(r, 3), 4.0 * h);
            assert_eq!(s.get(r, 4), 4.0 * h);
            assert_eq!(s.get(r, 1), 0.0);
        }
    }

    #[test]
    fn input_map_is_abs() {
        let img = ImageGrid::new(2, vec![-1.0, 0.5, 0.0, -0.25]).unwrap();
        assert_eq!(input_map(&img).data(), &[1.0, 0.5, 0.0, 0.25]);
    }

    #[test]
    fn random_map_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = random_map(64, &mut rng);
        assert!(m.data().iter().all(|v| (-1.0..1.0).contains(v)));
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!(mean.abs() < 0.05);
    }
}
