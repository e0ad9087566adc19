//! Runs both streams of an untrained model on two images and shows which
//! high-frequency patches the original stream's class attention selects.
//!
//! ```bash
//! cargo run -p hfreid --example token_selection
//! ```

use hfreid::autograd::Tape;
use hfreid::backbone::{extract_patches, VitConfig};
use hfreid::datapipe::synth::{self, SynthConfig};
use hfreid::harness::ReidModel;
use hfreid::selection::{dual_forward, DynamicMemory, TokenSelection};
use hfreid::spectral::fma_augment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hfreid::Result<()> {
    let cfg = VitConfig {
        image_height: 32,
        image_width: 32,
        patch_size: 8,
        embed_dim: 32,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = ReidModel::init(cfg, 2, false, &mut rng)?;

    let samples = synth::generate(&SynthConfig {
        ids: 2,
        imgs_per_id: 1,
        size: 32,
        ..Default::default()
    })?;
    let mut orig = Vec::new();
    let mut hf = Vec::new();
    for s in &samples {
        orig.push(s.image.data().to_vec());
        let g = fma_augment(&s.image.to_gray(), 0.1, &mut rng)?;
        hf.push(g.to_color().data().to_vec());
    }
    let orig = extract_patches(&cfg, &orig)?;
    let hf = extract_patches(&cfg, &hf)?;

    for mu in [0.25, 0.5] {
        let mut tape = Tape::new();
        let mut memory = DynamicMemory::new();
        let out = dual_forward(
            &mut tape,
            &model.store,
            &model.vit,
            &model.vit,
            &orig,
            &hf,
            TokenSelection::TopZ(mu),
            &mut memory,
        )?;
        println!("mu {mu}: keep {} of {} patches", out.selection.z, cfg.num_patches());
        for (b, idx) in out.selection.indices.iter().enumerate() {
            let scores: Vec<String> = idx
                .iter()
                .map(|&i| format!("{i}:{:.5}", out.summary.scores[b][i]))
                .collect();
            println!("  image {b}: {}", scores.join(" "));
        }
    }
    Ok(())
}
