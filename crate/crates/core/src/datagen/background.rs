use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::grid::ImageGrid;
use super::scenario::{BackgroundKind, ScenarioSpec};
use super::smooth::gaussian_smooth;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "JPEG"];

/// Draws the class-agnostic background of each sample.
///
/// Natural-image backgrounds are consumed without replacement in a
/// seed-shuffled order of the directory listing, so sample `n` always gets the
/// same file for a given spec.
pub struct BackgroundSampler {
    kind: BackgroundKind,
    side: usize,
    sigma: f64,
    images: Vec<PathBuf>,
}

impl BackgroundSampler {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        let images = match spec.background {
            BackgroundKind::Imagenet => {
                let dir = spec.image_dir.as_deref().ok_or_else(|| {
                    Error::InvalidArgument("IMAGENET backgrounds need an image_dir".into())
                })?;
                let mut paths = list_images(dir)?;
                if paths.len() < spec.n_samples {
                    return Err(Error::ImageSource {
                        path: dir.to_path_buf(),
                        message: format!(
                            "{} images available for {} samples",
                            paths.len(),
                            spec.n_samples
                        ),
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(u64::MAX);
                paths.shuffle(&mut rng);
                paths
            }
            _ => Vec::new(),
        };
        Ok(BackgroundSampler {
            kind: spec.background,
            side: spec.side,
            sigma: spec.sigma_background,
            images,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Result<ImageGrid> {
        match self.kind {
            BackgroundKind::White => Ok(white_noise(self.side, rng)),
            BackgroundKind::Corr => gaussian_smooth(&white_noise(self.side, rng), self.sigma),
            BackgroundKind::Imagenet => load_background(&self.images[index], self.side),
        }
    }
}

pub fn white_noise<R: Rng + ?Sized>(side: usize, rng: &mut R) -> ImageGrid {
    let data = (0..side * side).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    ImageGrid::new(side, data).expect("side*side values")
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e));
        if is_image {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::ImageSource {
            path: dir.to_path_buf(),
            message: "no png or jpeg images found".into(),
        });
    }
    paths.sort();
    Ok(paths)
}

/// Scales so the shorter edge equals `side`, centre-crops to a square,
/// converts to luminance and subtracts the image mean.
pub fn load_background(path: &Path, side: usize) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::ImageSource {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let scale = side as f64 / w.min(h) as f64;
    let new_w = ((w as f64 * scale).round() as u32).max(side as u32);
    let new_h = ((h as f64 * scale).round() as u32).max(side as u32);
    let resized = image::imageops::resize(&rgb, new_w, new_h, FilterType::Triangle);
    let x0 = (new_w - side as u32) / 2;
    let y0 = (new_h - side as u32) / 2;
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side as u32 {
        for x in 0..side as u32 {
            let p = resized.get_pixel(x0 + x, y0 + y).0;
            data.push(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64);
        }
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    for v in &mut data {
        *v -= mean;
    }
    ImageGrid::new(side, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::scenario::ScenarioKind;

    #[test]
    fn white_noise_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut values = Vec::new();
        while values.len() < 100_000 {
            values.extend_from_slice(white_noise(8, &mut rng).data());
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn unsmoothed_corr_matches_white() {
        let mut spec = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::Corr, 0.1, 0);
        spec.sigma_background = 0.0;
        let corr = BackgroundSampler::new(&spec).unwrap();
        spec.background = BackgroundKind::White;
        let white = BackgroundSampler::new(&spec).unwrap();
        let a = corr.sample(0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = white.sample(0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn solid_gray_image_centres_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::RgbImage::from_pixel(40, 30, image::Rgb([128, 128, 128]))
            .save(&path)
            .unwrap();
        let g = load_background(&path, 8).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-6), "{:?}", g.data());
    }

    #[test]
    fn crops_keep_aspect_and_centre() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bars.png");
        // left third black, middle white, right third black: the centre crop
        // of a 3:1 image is the white band
        let img = image::RgbImage::from_fn(48, 16, |x, _| {
            if (16..32).contains(&x) {
                image::Rgb([255, 255, 255])
            } else {
                image::Rgb([0, 0, 0])
            }
        });
        img.save(&path).unwrap();
        let g = load_background(&path, 8).unwrap();
        let spread = g.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - g.data().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.3, "spread {spread}");
    }

    #[test]
    fn empty_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::Imagenet, 0.1, 0);
        spec.image_dir = Some(dir.path().to_path_buf());
        let err = BackgroundSampler::new(&spec).err().unwrap();
        assert!(err.to_string().contains(&dir.path().display().to_string()));
    }
}
