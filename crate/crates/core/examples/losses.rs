//! Evaluates the identity, batch-hard triplet and feature-equilibrium losses
//! on a tiny hand-made batch and checks one gradient by finite differences.
//!
//! ```bash
//! cargo run -p hfreid --example losses
//! ```

use hfreid::autograd::{SmoothL1Reduction, Tape};
use hfreid::objectives::{equilibrium_loss, id_loss, triplet_loss, Classifier};
use hfreid::params::ParamStore;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hfreid::Result<()> {
    let features = array![[1.0, 0.0], [0.2, 0.9], [0.0, 1.0], [0.8, 0.3]];
    let labels = [0, 0, 1, 1];

    let mut store = ParamStore::new();
    let classifier = Classifier::init(2, 2, false, &mut store, &mut ChaCha8Rng::seed_from_u64(0));

    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let id = id_loss(&mut tape, &store, &classifier, x, &labels, 0.0)?;
    let tri = triplet_loss(&mut tape, x, &labels, 0.3)?;
    println!(
        "identity loss {:.4} (ln 2 = {:.4} for a near-zero classifier)",
        tape.scalar(id),
        2f64.ln()
    );
    println!("triplet loss  {:.4}", tape.scalar(tri));

    let shifted = tape.constant(&features + 0.5);
    let eq = equilibrium_loss(&mut tape, x, shifted, 2, SmoothL1Reduction::BatchSumTokenMeanDimMean)?;
    // each element contributes 0.5 * 0.5^2; mean over tokens and dims, sum over 2 samples
    println!("equilibrium   {:.4} (expected 0.25)", tape.scalar(eq));

    // gradient of the triplet loss w.r.t. one feature, analytic vs numeric
    let mut tape = Tape::new();
    let p = store.add("probe", features.clone());
    let v = tape.param(p, store.get(p));
    let root = triplet_loss(&mut tape, v, &labels, 0.3)?;
    let analytic = tape.backward(root).param(p).map(|g| g[[1, 0]]).unwrap_or(0.0);
    let h = 1e-6;
    let at = |delta: f64| -> hfreid::Result<f64> {
        let mut f = features.clone();
        f[[1, 0]] += delta;
        let mut t = Tape::new();
        let v = t.constant(f);
        let r = triplet_loss(&mut t, v, &labels, 0.3)?;
        Ok(t.scalar(r))
    };
    let numeric = (at(h)? - at(-h)?) / (2.0 * h);
    println!("d triplet / d x[1,0]: analytic {analytic:.6}, numeric {numeric:.6}");
    Ok(())
}
