//! Runs the component ladder (single stream, pure high-pass, mixing,
//! selection, equilibrium loss) on a small synthetic split and prints the
//! table of median test metrics.
//!
//! ```bash
//! cargo run --release -p hfreid --example ablation -- 20
//! ```

use hfreid::datapipe::synth::{self, SynthConfig};
use hfreid::harness::{ablate, ImageSet, Stage, TrainConfig};

fn main() -> hfreid::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let samples = synth::generate(&SynthConfig {
        ids: 20,
        imgs_per_id: 6,
        ..Default::default()
    })?;
    let set = ImageSet::from_samples(&samples, 64, 64);
    let ids: Vec<String> = (0..20).map(synth::identity_name).collect();
    let (train_set, test_set) = (set.subset(&ids[..14]), set.subset(&ids[14..]));

    let mut config = TrainConfig::toy();
    config.epochs = epochs;
    let table = ablate(&config, &Stage::LADDER, &[0, 1], &train_set, &test_set, None)?;
    print!("{}", table.render());
    Ok(())
}
