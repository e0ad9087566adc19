//! Trains the two-stream model on a synthetic dataset at toy scale, prints
//! the loss terms per epoch, then saves, reloads and re-scores the checkpoint.
//!
//! ```bash
//! cargo run --release -p hfreid --example train_toy -- /tmp/toy_run
//! ```

use std::path::PathBuf;

use hfreid::datapipe::synth::{self, SynthConfig};
use hfreid::harness::{evaluate_model, train, Checkpoint, ImageSet, TrainConfig};

fn main() -> hfreid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hfreid_train_toy"));

    let samples = synth::generate(&SynthConfig {
        ids: 16,
        imgs_per_id: 6,
        ..Default::default()
    })?;
    let set = ImageSet::from_samples(&samples, 64, 64);
    let ids: Vec<String> = (0..16).map(synth::identity_name).collect();
    let (train_set, test_set) = (set.subset(&ids[..12]), set.subset(&ids[12..]));

    let mut config = TrainConfig::toy();
    config.epochs = 10;
    config.eval_every = 5;
    let run = train(&config, &train_set, Some(&test_set), Some(&out))?;

    for e in &run.record.epochs {
        let m = &e.mean;
        println!(
            "epoch {:2} lr {:.4}  id {:.3}/{:.3}  tri {:.3}/{:.3}  L_F {:.4}  total {:.3}",
            e.epoch, e.lr, m.id_o, m.id_h, m.tri_o, m.tri_h, m.equilibrium, m.total
        );
    }
    let report = run.record.final_report.as_ref().expect("test set given");
    println!(
        "test mAP {:.3}  rank1 {:.3}  ({:.2} s/epoch)",
        report.map, report.rank1, run.timing.seconds_per_epoch
    );

    let loaded = Checkpoint::load(&out.join("checkpoint.bin"))?;
    let again = evaluate_model(&loaded.model()?, &test_set, &loaded.config)?;
    assert_eq!(&again, report);
    println!("checkpoint reload reproduces the report; outputs in {}", out.display());
    Ok(())
}
