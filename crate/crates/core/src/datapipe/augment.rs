use rand::Rng;

use crate::error::Result;
use crate::raster::{ColorImage, GrayImage};
use crate::spectral::{fma_augment_with, FmaConfig};

/// Spatial and photometric augmentation settings shared by both streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub height: usize,
    pub width: usize,
    /// Rotation angle is drawn from `[-max_rotation, max_rotation]` degrees.
    pub max_rotation: f64,
    /// Brightness and contrast factors are drawn from `1 ± jitter`.
    pub jitter: f64,
    /// Probability of each photometric jitter.
    pub jitter_prob: f64,
    pub pad: usize,
    pub fma: FmaConfig,
}

impl AugmentConfig {
    pub fn new(height: usize, width: usize) -> Self {
        AugmentConfig {
            height,
            width,
            max_rotation: 15.0,
            jitter: 0.2,
            jitter_prob: 0.5,
            pad: 10,
            fma: FmaConfig::default(),
        }
    }
}

/// One training view in both streams.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    /// Spatially and photometrically augmented RGB image.
    pub original: ColorImage,
    /// Grayscale of `original` after frequency mixing.
    pub high_frequency: GrayImage,
    pub rotation: f64,
}

impl AugmentedPair {
    /// Normalised HWC input for the original stream.
    pub fn original_input(&self) -> Vec<f64> {
        normalize(&self.original)
    }

    /// Normalised HWC input for the high-frequency stream (gray replicated to 3 channels).
    pub fn high_frequency_input(&self) -> Vec<f64> {
        normalize(&self.high_frequency.to_color())
    }
}

/// Maps `[0, 1]` to `[-1, 1]` per channel, HWC order.
pub fn normalize(img: &ColorImage) -> Vec<f64> {
    img.data().iter().map(|v| (v - 0.5) / 0.5).collect()
}

/// Evaluation view: resize and normalise only.
pub fn eval_input(img: &ColorImage, height: usize, width: usize) -> Vec<f64> {
    if img.height() == height && img.width() == width {
        normalize(img)
    } else {
        normalize(&img.resize(height, width))
    }
}

/// Spatial and photometric part alone: resize, rotate, jitter, pad-and-crop.
/// Returns the view and the rotation angle drawn.
pub fn augment_view<R: Rng + ?Sized>(img: &ColorImage, config: &AugmentConfig, rng: &mut R) -> (ColorImage, f64) {
    let mut x = if img.height() == config.height && img.width() == config.width {
        img.clone()
    } else {
        img.resize(config.height, config.width)
    };
    let rotation = if config.max_rotation > 0.0 {
        rng.random_range(-config.max_rotation..=config.max_rotation)
    } else {
        0.0
    };
    x = x.rotate(rotation);
    if rng.random_bool(config.jitter_prob) {
        x = x.adjust_brightness(rng.random_range(1.0 - config.jitter..=1.0 + config.jitter));
    }
    if rng.random_bool(config.jitter_prob) {
        x = x.adjust_contrast(rng.random_range(1.0 - config.jitter..=1.0 + config.jitter));
    }
    if config.pad > 0 {
        let top = rng.random_range(0..=2 * config.pad);
        let left = rng.random_range(0..=2 * config.pad);
        x = x.pad_crop(config.pad, top, left);
    }
    (x, rotation)
}

/// [`augment_view`] followed by frequency mixing of its grayscale, so the
/// second stream sees exactly the pixels the original stream sees.
pub fn augment_pair<R: Rng + ?Sized>(img: &ColorImage, config: &AugmentConfig, rng: &mut R) -> Result<AugmentedPair> {
    let (original, rotation) = augment_view(img, config, rng);
    let high_frequency = fma_augment_with(&original.to_gray(), &config.fma, rng)?;
    Ok(AugmentedPair {
        original,
        high_frequency,
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ColorImage {
        ColorImage::from_fn(40, 30, |y, x| {
            [0, 1, 2].map(|c| ((y * 7 + x * 3 + c * 11) % 17) as f64 / 16.0)
        })
        .unwrap()
    }

    #[test]
    fn identity_fma_matches_gray_of_original() {
        let mut cfg = AugmentConfig::new(32, 32);
        cfg.fma = FmaConfig::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = augment_pair(&sample(), &cfg, &mut rng).unwrap();
            let g = p.original.to_gray();
            for (a, b) in g.pixels().iter().zip(p.high_frequency.pixels()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shapes_and_range() {
        let cfg = AugmentConfig::new(32, 24);
        let p = augment_pair(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((p.original.height(), p.original.width()), (32, 24));
        assert_eq!(p.original_input().len(), 32 * 24 * 3);
        assert_eq!(p.high_frequency_input().len(), 32 * 24 * 3);
        assert!(p.original_input().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(eval_input(&sample(), 32, 24).len() == 32 * 24 * 3);
    }

    #[test]
    fn rotation_statistics() {
        let cfg = AugmentConfig::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = ColorImage::from_fn(8, 8, |_, _| [0.5; 3]).unwrap();
        let angles: Vec<f64> = (0..10_000)
            .map(|_| augment_pair(&img, &cfg, &mut rng).unwrap().rotation)
            .collect();
        assert!(angles.iter().all(|a| a.abs() <= 15.0));
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let var = angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / angles.len() as f64;
        assert!(mean.abs() < 0.5, "mean {mean}");
        // uniform on [-15, 15] has variance 75
        assert!((var - 75.0).abs() < 3.0, "var {var}");
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = AugmentConfig::new(16, 16);
        let a = augment_pair(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = augment_pair(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.original, b.original);
        assert_eq!(a.high_frequency, b.high_frequency);
    }
}
