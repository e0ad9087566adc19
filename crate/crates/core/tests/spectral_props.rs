use hfreid::raster::GrayImage;
use hfreid::spectral::{
    apply_high_pass, fma_augment_with, forward_transform, forward_transform_grid, inverse_transform, mask_side,
    mix_spectra, sample_mask, AlphaMode, FmaConfig, HighPassFilter,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

fn grid() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..20, 1usize..20).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0.0..1.0f64, h * w)))
}

/// Textbook DFT, centred layout: frequency `k` sits at index `(k + h/2) mod h`.
fn naive_dft(h: usize, w: usize, x: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for k in 0..h {
        for l in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h {
                for n in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                    acc += Complex64::from_polar(x[m * w + n], phase);
                }
            }
            out[((k + h / 2) % h) * w + (l + w / 2) % w] = acc;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_recovers_input((h, w, v) in grid()) {
        let spec = forward_transform_grid(h, w, &v).unwrap();
        let back = inverse_transform(&spec);
        for (a, b) in v.iter().zip(&back.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(back.max_imag_residue < 1e-9);
    }

    #[test]
    fn matches_textbook_dft((h, w, v) in (1usize..7, 1usize..7).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(-1.0..1.0f64, h * w)))) {
        let fast = forward_transform_grid(h, w, &v).unwrap();
        for (a, b) in fast.coeffs().iter().zip(naive_dft(h, w, &v)) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn transform_is_linear((h, w, a) in grid(), s in -3.0..3.0f64, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
        let (fa, fb) = (forward_transform_grid(h, w, &a).unwrap(), forward_transform_grid(h, w, &b).unwrap());
        let fc = forward_transform_grid(h, w, &combo).unwrap();
        for ((x, y), z) in fa.coeffs().iter().zip(fb.coeffs()).zip(fc.coeffs()) {
            prop_assert!((x * s + y - z).norm() < 1e-9);
        }
    }

    #[test]
    fn parseval_holds((h, w, v) in grid()) {
        let spec = forward_transform_grid(h, w, &v).unwrap();
        let spatial: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((spec.energy() - (h * w) as f64 * spatial).abs() < 1e-8 * (1.0 + spec.energy()));
    }

    #[test]
    fn filter_removes_dc_and_never_amplifies(h in 1usize..64, w in 1usize..64, cutoff in 0.01..0.9f64) {
        let f = HighPassFilter::new(cutoff, h, w).unwrap();
        prop_assert_eq!(f.gain_at(h / 2, w / 2), 0.0);
        prop_assert!(f.gain().iter().all(|&g| (0.0..1.0).contains(&g)));
    }

    #[test]
    fn high_pass_output_has_zero_mean((h, w, v) in grid(), cutoff in 0.02..0.5f64) {
        let spec = forward_transform_grid(h, w, &v).unwrap();
        let filtered = apply_high_pass(&spec, &HighPassFilter::new(cutoff, h, w).unwrap()).unwrap();
        prop_assert_eq!(filtered.dc(), Complex64::new(0.0, 0.0));
        prop_assert!(inverse_transform(&filtered).mean().abs() < 1e-12);
    }

    #[test]
    fn mask_area_is_rounded_square(n in 1usize..200, alpha in 0.0..=0.5f64, seed in any::<u64>()) {
        let m = sample_mask(alpha, n, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let side = (alpha * (n * n) as f64).sqrt().round() as usize;
        prop_assert_eq!(m.count_ones(), side * side);
        prop_assert_eq!(m.grid().iter().map(|&b| b as usize).sum::<usize>(), side * side);
        let (r, c) = m.anchor();
        prop_assert!(r + side <= n && c + side <= n);
    }

    #[test]
    fn mask_side_never_exceeds_grid(h in 1usize..100, w in 1usize..100, alpha in 0.0..=0.5f64) {
        prop_assert!(mask_side(alpha, h, w) <= h.min(w));
    }

    #[test]
    fn mix_takes_each_coefficient_from_one_side((h, w, v) in grid(), alpha in 0.0..=0.5f64, seed in any::<u64>()) {
        let orig = forward_transform_grid(h, w, &v).unwrap();
        let high = apply_high_pass(&orig, &HighPassFilter::new(0.1, h, w).unwrap()).unwrap();
        let mask = sample_mask(alpha, h, w, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mixed = mix_spectra(&high, &orig, &mask).unwrap();
        for r in 0..h {
            for c in 0..w {
                let want = if mask.contains(r, c) { orig.get(r, c) } else { high.get(r, c) };
                prop_assert_eq!(mixed.get(r, c), want);
            }
        }
    }

    #[test]
    fn augmented_output_is_unit_range((h, w, v) in grid(), seed in any::<u64>()) {
        let img = GrayImage::new(h, w, v).unwrap();
        let cfg = FmaConfig { alpha: AlphaMode::Random, ..FmaConfig::default() };
        let out = fma_augment_with(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!((out.height(), out.width()), (h, w));
        prop_assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn constant_image_high_passes_to_zero() {
    let img = GrayImage::filled(16, 12, 0.7).unwrap();
    let out = fma_augment_with(
        &img,
        &FmaConfig::pure_high_pass(0.05),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(out.pixels().iter().all(|&p| p == 0.0));
    let spec = forward_transform(&img).unwrap();
    assert!((spec.dc().re - 0.7 * 192.0).abs() < 1e-9);
}
