//! Sweeps the selection ratio over a few values, prints the median test mAP
//! per value and writes the table and an SVG plot.
//!
//! ```bash
//! cargo run --release -p hfreid --example sweep -- /tmp/sweep
//! ```

use std::path::PathBuf;

use hfreid::datapipe::synth::{self, SynthConfig};
use hfreid::harness::{sweep, ImageSet, SweepParam, TrainConfig};

fn main() -> hfreid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hfreid_sweep"));
    std::fs::create_dir_all(&out).map_err(|e| hfreid::Error::io(&out, e))?;

    let samples = synth::generate(&SynthConfig {
        ids: 16,
        imgs_per_id: 6,
        ..Default::default()
    })?;
    let set = ImageSet::from_samples(&samples, 64, 64);
    let ids: Vec<String> = (0..16).map(synth::identity_name).collect();
    let (train_set, test_set) = (set.subset(&ids[..12]), set.subset(&ids[12..]));

    let mut config = TrainConfig::toy();
    config.epochs = 8;
    let table = sweep(
        &config,
        SweepParam::parse("mu")?,
        &[0.25, 0.5, 0.75, 1.0],
        &[0],
        &train_set,
        &test_set,
        Some(&out),
    )?;
    print!("{}", table.render());
    println!("plot in {}", out.join("sweep.svg").display());
    Ok(())
}
