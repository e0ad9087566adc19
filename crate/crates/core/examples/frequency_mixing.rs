//! Walks one grayscale image through the frequency-mixing augmentation:
//! transform, soft high-pass, square mask mixing and rescaling. Saves every
//! stage as a PNG and prints how much low-frequency energy survives.
//!
//! ```bash
//! cargo run -p hfreid --example frequency_mixing -- /tmp/fma
//! ```

use std::path::PathBuf;

use hfreid::datapipe::synth::{self, SynthConfig};
use hfreid::spectral::{fma_trace, AlphaMode, FmaConfig, HighPassFilter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hfreid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hfreid_fma"));
    std::fs::create_dir_all(&out).map_err(|e| hfreid::Error::io(&out, e))?;

    let sample = &synth::generate(&SynthConfig {
        ids: 1,
        imgs_per_id: 1,
        ..Default::default()
    })?[0];
    let gray = sample.image.to_gray();
    gray.save_png(&out.join("gray.png"))?;

    let filter = HighPassFilter::new(0.1, gray.height(), gray.width())?;
    let passed = filter.gain().iter().filter(|&&g| g > 0.5).count();
    println!(
        "cutoff 0.1: {passed}/{} frequencies keep more than half their amplitude",
        filter.gain().len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for alpha in [0.0, 0.1, 0.3, 0.5] {
        let cfg = FmaConfig {
            cutoff_fraction: 0.1,
            alpha: AlphaMode::Fixed(alpha),
            ..Default::default()
        };
        let t = fma_trace(&gray, &cfg, &mut rng)?;
        println!(
            "alpha {alpha:.1}: mask {0}x{0} at {1:?}, energy kept {2:.3}",
            t.mask.side(),
            t.mask.anchor(),
            t.mixed.energy() / t.original.energy()
        );
        t.mixed
            .log_magnitude()
            .save_png(&out.join(format!("spectrum_alpha{alpha}.png")))?;
        t.output
            .save_png(&out.join(format!("high_frequency_alpha{alpha}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
