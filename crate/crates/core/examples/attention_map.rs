//! Trains briefly on plain-background images, then renders the class
//! attention of a few unseen images and reports how much of it lands on the
//! object mask.
//!
//! ```bash
//! cargo run --release -p hfreid --example attention_map -- /tmp/attn
//! ```

use std::path::PathBuf;

use hfreid::datapipe::synth::{self, Background, SynthConfig};
use hfreid::harness::viz::{attention_map, mass_inside};
use hfreid::harness::{train, ImageSet, TrainConfig};

fn main() -> hfreid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hfreid_attn"));
    std::fs::create_dir_all(&out).map_err(|e| hfreid::Error::io(&out, e))?;

    let plain = |seed, ids| SynthConfig {
        ids,
        imgs_per_id: 6,
        background: Background::Plain,
        seed,
        ..Default::default()
    };
    let train_samples = synth::generate(&plain(1, 12))?;
    let mut config = TrainConfig::toy();
    config.epochs = 15;
    let run = train(&config, &ImageSet::from_samples(&train_samples, 64, 64), None, None)?;

    for s in synth::generate(&plain(2, 4))?.iter().step_by(6) {
        let map = attention_map(&run.model, &s.image, config.mu)?;
        let cover = synth::patch_coverage(&s.mask, 64, 64, config.patch_size);
        let on = map.selected.iter().filter(|&&p| cover[p] >= 0.5).count();
        let name = synth::identity_name(s.identity);
        println!(
            "{name}: {:.0}% of attention mass on the object ({:.0}% of the area), {on}/{} selected patches on it",
            100.0 * mass_inside(map.heat.pixels(), &s.mask),
            100.0 * s.mask.iter().filter(|&&m| m).count() as f64 / s.mask.len() as f64,
            map.selected.len()
        );
        map.overlay.save_png(&out.join(format!("{name}_overlay.png")))?;
        map.selection_view.save_png(&out.join(format!("{name}_selected.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
