//! Parses a manifest, makes an identity-disjoint split, writes its sidecar,
//! and draws a few P×K batches from the training identities.
//!
//! ```bash
//! cargo run -p hfreid --example split_and_sample
//! ```

use std::path::Path;

use hfreid::datapipe::{split_identities, BatchSpec, Manifest, PkSampler, SplitSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hfreid::Result<()> {
    let mut text = String::from("# path\tidentity\tspecies\n");
    for id in 0..10 {
        for shot in 0..(2 + id % 4) {
            text.push_str(&format!("seal_{id:02}/{shot}.png\tseal_{id:02}\tringed seal\n"));
        }
    }
    let manifest = Manifest::parse("seals", &text, Path::new("/data"))?;
    println!(
        "{} images, {} identities",
        manifest.records.len(),
        manifest.identities().len()
    );

    let split = split_identities(&manifest, 42)?;
    print!("{}", split.to_text());
    assert_eq!(SplitSpec::parse(&split.to_text())?, split);

    let items: Vec<(usize, String)> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| split.train.contains(&r.identity))
        .map(|(i, r)| (i, r.identity.clone()))
        .collect();
    let sampler = PkSampler::new(BatchSpec::new(3, 4)?, &items)?;
    println!("{} batches per epoch", sampler.batches_per_epoch());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for b in 0..2 {
        let batch = sampler.sample_batch(&mut rng);
        let names: Vec<String> = batch
            .iter()
            .map(|&(item, _)| {
                manifest.records[item]
                    .path
                    .file_name()
                    .unwrap()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        let ids: Vec<&str> = batch.iter().map(|&(_, l)| sampler.identities()[l].as_str()).collect();
        println!("batch {b}: {ids:?}\n         {names:?}");
    }
    Ok(())
}
