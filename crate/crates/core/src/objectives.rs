//! Training objectives: identity cross-entropy, batch-hard triplet, the
//! smooth-L1 feature equilibrium term, and their weighted total.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, SmoothL1Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamStore};

pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Bias-free linear identity classifier shared by both streams, with an
/// optional batch-norm neck in front of it. The neck only feeds the
/// classifier; the triplet term and retrieval use the raw feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    id: usize,
    classes: usize,
    neck: Option<(usize, usize)>,
}

impl Classifier {
    pub fn init<R: Rng + ?Sized>(dim: usize, classes: usize, neck: bool, store: &mut ParamStore, rng: &mut R) -> Self {
        let neck = neck.then(|| {
            (
                store.add("classifier.neck.weight", Mat::ones((1, dim))),
                store.add("classifier.neck.bias", Mat::zeros((1, dim))),
            )
        });
        let id = store.add("classifier.weight", trunc_normal(dim, classes, 0.01, rng));
        Classifier { id, classes, neck }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let id = store
            .id("classifier.weight")
            .ok_or_else(|| Error::Config("missing parameter classifier.weight".into()))?;
        let neck = match (store.id("classifier.neck.weight"), store.id("classifier.neck.bias")) {
            (Some(g), Some(b)) => Some((g, b)),
            (None, None) => None,
            _ => return Err(Error::Config("classifier neck is missing its weight or bias".into())),
        };
        Ok(Classifier {
            id,
            classes: store.get(id).ncols(),
            neck,
        })
    }

    pub fn has_neck(&self) -> bool {
        self.neck.is_some()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn param_id(&self) -> usize {
        self.id
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Var {
        let features = match self.neck {
            Some((g, b)) => {
                let (g, b) = (tape.param(g, store.get(g)), tape.param(b, store.get(b)));
                tape.batch_norm(features, g, b)
            }
            None => features,
        };
        let w = tape.param(self.id, store.get(self.id));
        tape.matmul(features, w)
    }
}

/// Mean cross-entropy of the classifier's logits.
pub fn id_loss(
    tape: &mut Tape,
    store: &ParamStore,
    classifier: &Classifier,
    features: Var,
    labels: &[usize],
    smoothing: f64,
) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classifier.classes) {
        return Err(Error::Input(format!(
            "label {bad} outside {} classes",
            classifier.classes
        )));
    }
    if tape.value(features).nrows() != labels.len() {
        return Err(Error::Shape("feature rows and labels differ".into()));
    }
    let logits = classifier.logits(tape, store, features);
    Ok(tape.cross_entropy(logits, labels, smoothing))
}

/// Checks that a batch has at least two identities and one identity with
/// two or more samples.
pub fn check_pk_structure(labels: &[usize]) -> Result<()> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 || counts.values().all(|&c| c < 2) {
        return Err(Error::Protocol(format!(
            "triplet batch needs >= 2 identities and a repeated identity (got {} ids over {} samples)",
            counts.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Batch-hard triplet loss averaged over anchors that have a positive.
pub fn triplet_loss(tape: &mut Tape, features: Var, labels: &[usize], margin: f64) -> Result<Var> {
    check_pk_structure(labels)?;
    if tape.value(features).nrows() != labels.len() {
        return Err(Error::Shape("feature rows and labels differ".into()));
    }
    tape.batch_hard_triplet(features, labels, margin)
        .ok_or_else(|| Error::Protocol("no anchor with both a positive and a negative".into()))
}

/// Smooth-L1 discrepancy between original and high-frequency token features,
/// both `(batch·Z)×D` with matching token order.
pub fn equilibrium_loss(
    tape: &mut Tape,
    f_o: Var,
    f_h: Var,
    batch: usize,
    reduction: SmoothL1Reduction,
) -> Result<Var> {
    let (a, b) = (tape.value(f_o).dim(), tape.value(f_h).dim());
    if a != b || batch == 0 || a.0 % batch != 0 {
        return Err(Error::Shape(format!(
            "equilibrium inputs {a:?} vs {b:?} for batch {batch}"
        )));
    }
    Ok(tape.smooth_l1(f_o, f_h, batch, reduction))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub margin: f64,
    pub label_smoothing: f64,
    pub reduction: SmoothL1Reduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: DEFAULT_LAMBDA,
            margin: DEFAULT_MARGIN,
            label_smoothing: 0.0,
            reduction: SmoothL1Reduction::BatchSumTokenMeanDimMean,
        }
    }
}

/// Per-term loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub id_o: f64,
    pub tri_o: f64,
    pub id_h: f64,
    pub tri_h: f64,
    pub equilibrium: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Second-stream features entering the loss.
#[derive(Debug, Clone, Copy)]
pub struct HighFrequencyFeatures {
    pub c_h: Var,
    pub f_o: Var,
    pub f_h: Var,
}

/// `id(c_o) + tri(c_o) + id(c_h) + tri(c_h) + lambda·L_F`.
///
/// With `hf = None` only the original-stream terms are used (single-stream
/// baseline). Returns the root node to differentiate and the breakdown.
pub fn total_loss(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ObjectiveConfig,
    classifier: &Classifier,
    c_o: Var,
    hf: Option<HighFrequencyFeatures>,
    labels: &[usize],
) -> Result<(Var, LossBreakdown)> {
    let id_o = id_loss(tape, store, classifier, c_o, labels, config.label_smoothing)?;
    let tri_o = triplet_loss(tape, c_o, labels, config.margin)?;
    let mut terms = vec![(id_o, 1.0), (tri_o, 1.0)];
    let mut br = LossBreakdown {
        id_o: tape.scalar(id_o),
        tri_o: tape.scalar(tri_o),
        lambda: config.lambda,
        ..Default::default()
    };
    if let Some(h) = hf {
        let id_h = id_loss(tape, store, classifier, h.c_h, labels, config.label_smoothing)?;
        let tri_h = triplet_loss(tape, h.c_h, labels, config.margin)?;
        let eq = equilibrium_loss(tape, h.f_o, h.f_h, labels.len(), config.reduction)?;
        terms.extend([(id_h, 1.0), (tri_h, 1.0), (eq, config.lambda)]);
        br.id_h = tape.scalar(id_h);
        br.tri_h = tape.scalar(tri_h);
        br.equilibrium = tape.scalar(eq);
    }
    let root = tape.weighted_sum(&terms);
    br.total = tape.scalar(root);
    if !br.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: {br:?}")));
    }
    Ok((root, br))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mat;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classifier_with(store: &mut ParamStore, w: Mat) -> Classifier {
        let classes = w.ncols();
        let id = store.add("classifier.weight", w);
        Classifier {
            id,
            classes,
            neck: None,
        }
    }

    #[test]
    fn id_loss_cases() {
        let mut store = ParamStore::new();
        let clf = classifier_with(&mut store, Mat::eye(2));
        let mut tape = Tape::new();
        let x = tape.constant(array![[2.0, 0.0], [0.0, 2.0]]);
        let l = id_loss(&mut tape, &store, &clf, x, &[0, 1], 0.0).unwrap();
        assert!((tape.scalar(l) - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((tape.scalar(l) - 0.1269).abs() < 1e-4);

        let mut store = ParamStore::new();
        let clf = classifier_with(&mut store, Mat::zeros((2, 5)));
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 3.0]]);
        let l = id_loss(&mut tape, &store, &clf, x, &[3], 0.0).unwrap();
        assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            id_loss(&mut tape, &store, &clf, x, &[5], 0.0),
            Err(Error::Input(_))
        ));

        let mut store = ParamStore::new();
        let clf = classifier_with(&mut store, Mat::eye(2) * 100.0);
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 0.0]]);
        let l = id_loss(&mut tape, &store, &clf, x, &[0], 0.0).unwrap();
        assert!(tape.scalar(l) < 1e-12);
    }

    #[test]
    fn triplet_cases() {
        let mut tape = Tape::new();
        let same = tape.constant(Mat::ones((4, 3)));
        let l = triplet_loss(&mut tape, same, &[0, 0, 1, 1], 0.3).unwrap();
        assert!((tape.scalar(l) - 0.3).abs() < 1e-12);

        let line = tape.constant(array![[0.0], [1.0], [10.0], [11.0]]);
        let l = triplet_loss(&mut tape, line, &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let bad = tape.constant(Mat::zeros((3, 2)));
        assert!(matches!(
            triplet_loss(&mut tape, bad, &[0, 1, 2], 0.3),
            Err(Error::Protocol(_))
        ));
        assert!(triplet_loss(&mut tape, bad, &[0, 0, 0], 0.3).is_err());
    }

    #[test]
    fn triplet_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = trunc_normal(6, 4, 1.0, &mut rng);
        let shifted = &x + &array![[3.0, -1.0, 0.5, 7.0]];
        let labels = [0, 0, 1, 1, 2, 2];
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(shifted);
        let la = triplet_loss(&mut tape, a, &labels, 0.3).unwrap();
        let lb = triplet_loss(&mut tape, b, &labels, 0.3).unwrap();
        assert!((tape.scalar(la) - tape.scalar(lb)).abs() < 1e-12);
    }

    fn eq_scalar(d: f64) -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant(array![[0.0]]);
        let b = tape.constant(array![[d]]);
        let l = equilibrium_loss(&mut tape, a, b, 1, SmoothL1Reduction::BatchSumTokenMeanDimMean).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn equilibrium_closed_forms() {
        assert_eq!(eq_scalar(0.5), 0.125);
        assert_eq!(eq_scalar(2.0), 1.5);
        assert_eq!(eq_scalar(1.0), 0.5);
        assert_eq!(eq_scalar(-2.0), 1.5);
        let mut tape = Tape::new();
        let a = tape.constant(array![[0.0], [0.0]]);
        let b = tape.constant(array![[0.5], [3.0]]);
        let l = equilibrium_loss(&mut tape, a, b, 1, SmoothL1Reduction::BatchSumTokenMeanDimMean).unwrap();
        assert_eq!(tape.scalar(l), 1.3125);
        let c = tape.constant(Mat::zeros((3, 1)));
        assert!(matches!(
            equilibrium_loss(&mut tape, a, c, 1, SmoothL1Reduction::Mean),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn equilibrium_token_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fo = trunc_normal(6, 3, 2.0, &mut rng);
        let fh = trunc_normal(6, 3, 2.0, &mut rng);
        let perm = [2usize, 0, 1, 5, 3, 4];
        let p = |m: &Mat| Mat::from_shape_fn(m.dim(), |(r, c)| m[[perm[r], c]]);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(fo.clone()), tape.constant(fh.clone()));
        let (pa, pb) = (tape.constant(p(&fo)), tape.constant(p(&fh)));
        let l1 = equilibrium_loss(&mut tape, a, b, 2, SmoothL1Reduction::BatchSumTokenMeanDimMean).unwrap();
        let l2 = equilibrium_loss(&mut tape, pa, pb, 2, SmoothL1Reduction::BatchSumTokenMeanDimMean).unwrap();
        assert!((tape.scalar(l1) - tape.scalar(l2)).abs() < 1e-12);
    }

    #[test]
    fn total_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let clf = Classifier::init(4, 3, false, &mut store, &mut rng);
        let labels = [0, 0, 1, 1, 2, 2];
        let mut tape = Tape::new();
        let c_o = tape.constant(trunc_normal(6, 4, 1.0, &mut rng));
        let c_h = tape.constant(trunc_normal(6, 4, 1.0, &mut rng));
        let f_o = tape.constant(trunc_normal(12, 4, 1.0, &mut rng));
        let f_h = tape.constant(trunc_normal(12, 4, 1.0, &mut rng));
        let cfg = ObjectiveConfig::default();
        let hf = HighFrequencyFeatures { c_h, f_o, f_h };
        let (_, br) = total_loss(&mut tape, &store, &cfg, &clf, c_o, Some(hf), &labels).unwrap();
        let sum = br.id_o + br.tri_o + br.id_h + br.tri_h + br.lambda * br.equilibrium;
        assert!((br.total - sum).abs() < 1e-9);
        assert!(br.equilibrium > 0.0);

        let zero = ObjectiveConfig { lambda: 0.0, ..cfg };
        let (_, b0) = total_loss(&mut tape, &store, &zero, &clf, c_o, Some(hf), &labels).unwrap();
        assert_eq!(b0.total, b0.id_o + b0.tri_o + b0.id_h + b0.tri_h);

        let same = HighFrequencyFeatures { c_h, f_o, f_h: f_o };
        let (_, bs) = total_loss(&mut tape, &store, &cfg, &clf, c_o, Some(same), &labels).unwrap();
        assert_eq!(bs.equilibrium, 0.0);
        assert_eq!(bs.total, bs.id_o + bs.tri_o + bs.id_h + bs.tri_h);
        assert_eq!(cfg.lambda, 0.1);
    }
}
