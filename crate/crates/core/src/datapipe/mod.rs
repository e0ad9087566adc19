//! Data plumbing: manifests, identity-disjoint splits, PK batch sampling,
//! paired spatial/frequency augmentation, and a procedural dataset generator.

mod augment;
mod manifest;
mod sampler;
mod split;
pub mod synth;

pub use augment::{augment_pair, augment_view, eval_input, normalize, AugmentConfig, AugmentedPair};
pub use manifest::{Manifest, Record};
pub use sampler::{BatchSpec, PkSampler};
pub use split::{split_identities, SplitSpec, TRAIN_FRACTION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for `(seed, a, b)`, e.g. `(seed, worker, epoch)` or
/// `(seed, epoch, item)`. Distinct pairs give independent streams as long as
/// `b < 2^32`.
pub fn derived_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_shl(32) ^ b);
    rng
}
