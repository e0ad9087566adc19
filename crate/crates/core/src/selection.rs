//! Object-aware selection of high-frequency tokens.
//!
//! The original stream's final-layer class attention, averaged over heads,
//! ranks the patches. The top `Z = round(mu·n)` indices pick which
//! high-frequency patch tokens enter the second pass. Ranking is discrete:
//! gradients flow through token values only.

use crate::autograd::{Mat, Tape, Var};
use crate::backbone::{class_attention, ClassToken, EncoderOutput, TokenBatch, Vit};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::probe;

/// Head-averaged class-to-patch attention of the final layer, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSummary {
    pub scores: Vec<Vec<f64>>,
    pub layer_index: usize,
}

/// Per-sample selected patch indices, highest score first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionIndex {
    pub indices: Vec<Vec<usize>>,
    pub z: usize,
    /// Stored as parts-per-million so the type stays `Eq`.
    mu_ppm: u64,
}

impl SelectionIndex {
    pub fn mu(&self) -> f64 {
        self.mu_ppm as f64 / 1e6
    }

    /// Every patch in natural order, for the unselected high-frequency stream.
    pub fn all(batch: usize, num_patches: usize) -> Self {
        SelectionIndex {
            indices: vec![(0..num_patches).collect(); batch],
            z: num_patches,
            mu_ppm: 1_000_000,
        }
    }
}

/// Holds the selection computed by the original-stream pass until the
/// high-frequency pass of the same step consumes it.
#[derive(Debug, Default)]
pub struct DynamicMemory {
    slot: Option<SelectionIndex>,
}

impl DynamicMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&mut self, sel: SelectionIndex) -> Result<()> {
        if self.slot.is_some() {
            return Err(Error::Protocol("dynamic memory already populated this step".into()));
        }
        self.slot = Some(sel);
        Ok(())
    }

    pub fn take(&mut self) -> Result<SelectionIndex> {
        self.slot
            .take()
            .ok_or_else(|| Error::Protocol("dynamic memory is empty".into()))
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_none()
    }
}

/// `round(mu·n)`; zero is rejected.
pub fn selection_size(mu: f64, num_patches: usize) -> Result<usize> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Parameter(format!("mu {mu} not in (0, 1]")));
    }
    let z = (mu * num_patches as f64).round() as usize;
    if z == 0 {
        return Err(Error::Parameter(format!(
            "mu {mu} selects no tokens out of {num_patches}"
        )));
    }
    Ok(z)
}

/// Averages the final layer's renormalised class attention over heads.
pub fn summarize_attention(out: &EncoderOutput, num_patches: usize) -> Result<AttentionSummary> {
    probe::hit(probe::Path::Selection);
    if !out.is_full_sequence(num_patches) {
        return Err(Error::Protocol(
            "attention summary needs a full original-stream sequence".into(),
        ));
    }
    let last = out.attention.len() - 1;
    let mut scores = vec![vec![0.0; num_patches]; out.batch];
    for head in 0..out.heads {
        for (acc, s) in scores.iter_mut().zip(class_attention(out, last, head)?) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
    }
    for row in &mut scores {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(AttentionSummary {
        scores,
        layer_index: last,
    })
}

/// Indices of the `Z` highest scores, descending, ties to the lower index.
pub fn top_z(scores: &[f64], z: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(z);
    idx
}

pub fn select_top_z(summary: &AttentionSummary, mu: f64) -> Result<SelectionIndex> {
    probe::hit(probe::Path::Selection);
    let n = summary.scores.first().map_or(0, Vec::len);
    let z = selection_size(mu, n)?;
    Ok(SelectionIndex {
        indices: summary.scores.iter().map(|s| top_z(s, z)).collect(),
        z,
        mu_ppm: (mu * 1e6).round() as u64,
    })
}

/// Builds the high-frequency subsequence: the high-frequency class token
/// followed by the selected patch tokens, which keep their own positional
/// embeddings.
pub fn gather_hf_tokens(tape: &mut Tape, hf: &TokenBatch, sel: &SelectionIndex) -> Result<TokenBatch> {
    probe::hit(probe::Path::Selection);
    let n = hf.seq - 1;
    if sel.indices.len() != hf.batch {
        return Err(Error::Shape(format!(
            "selection for {} samples, token batch of {}",
            sel.indices.len(),
            hf.batch
        )));
    }
    if hf.source_indices.iter().any(|s| !s.iter().copied().eq(0..n)) {
        return Err(Error::Protocol("high-frequency tokens must be a full sequence".into()));
    }
    let mut picks = Vec::with_capacity(hf.batch * (sel.z + 1));
    for (b, idx) in sel.indices.iter().enumerate() {
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("patch index {bad} >= {n}")));
        }
        picks.push((0, b * hf.seq));
        picks.extend(idx.iter().map(|&i| (0, b * hf.seq + 1 + i)));
    }
    let tokens = tape.rows(&[hf.tokens], &picks);
    Ok(TokenBatch {
        tokens,
        batch: hf.batch,
        seq: sel.z + 1,
        source_indices: sel.indices.clone(),
    })
}

/// How the high-frequency stream picks its patch tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenSelection {
    /// Top `round(mu·n)` by original-stream class attention.
    TopZ(f64),
    /// Every patch, natural order.
    All,
}

/// Everything produced by one two-stream forward pass.
#[derive(Debug, Clone)]
pub struct DualOutput {
    pub c_o: Var,
    pub c_h: Var,
    /// Original-stream final tokens at the selected positions, `(B·Z)×D`.
    pub f_o: Var,
    /// High-frequency final patch tokens, `(B·Z)×D`, same order as `f_o`.
    pub f_h: Var,
    pub selection: SelectionIndex,
    pub summary: AttentionSummary,
    pub original: EncoderOutput,
    pub high_frequency: EncoderOutput,
}

/// Original pass, selection through a [`DynamicMemory`], then the
/// high-frequency pass over the selected tokens.
///
/// `hf_encoder` is normally the same [`Vit`] as `encoder` (shared weights).
#[allow(clippy::too_many_arguments)]
pub fn dual_forward(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &Vit,
    hf_encoder: &Vit,
    orig_patches: &Mat,
    hf_patches: &Mat,
    selection: TokenSelection,
    memory: &mut DynamicMemory,
) -> Result<DualOutput> {
    if orig_patches.dim() != hf_patches.dim() {
        return Err(Error::Shape(format!(
            "stream inputs differ: {:?} vs {:?}",
            orig_patches.dim(),
            hf_patches.dim()
        )));
    }
    let n = encoder.config().num_patches();
    let orig_tokens = encoder.patchify(tape, store, orig_patches, ClassToken::Original)?;
    let original = encoder.encode(tape, store, &orig_tokens)?;
    let summary = summarize_attention(&original, n)?;
    let sel = match selection {
        TokenSelection::TopZ(mu) => select_top_z(&summary, mu)?,
        TokenSelection::All => SelectionIndex::all(original.batch, n),
    };
    memory.store(sel)?;

    let hf_full = hf_encoder.patchify(tape, store, hf_patches, ClassToken::HighFrequency)?;
    let sel = memory.take()?;
    let hf_tokens = gather_hf_tokens(tape, &hf_full, &sel)?;
    let high_frequency = hf_encoder.encode(tape, store, &hf_tokens)?;

    let batch = original.batch;
    let mut o_picks = Vec::with_capacity(batch * sel.z);
    let mut h_picks = Vec::with_capacity(batch * sel.z);
    for (b, idx) in sel.indices.iter().enumerate() {
        for (t, &i) in idx.iter().enumerate() {
            o_picks.push((0, b * original.seq + 1 + i));
            h_picks.push((0, b * high_frequency.seq + 1 + t));
        }
    }
    let f_o = tape.rows(&[original.tokens], &o_picks);
    let f_h = tape.rows(&[high_frequency.tokens], &h_picks);
    Ok(DualOutput {
        c_o: original.class_feature,
        c_h: high_frequency.class_feature,
        f_o,
        f_h,
        selection: sel,
        summary,
        original,
        high_frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{extract_patches, VitConfig, CHANNELS};
    use crate::params::trunc_normal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fake_output(heads: usize, rows: &[Vec<f64>]) -> EncoderOutput {
        // one layer, one sample; each head's class row given explicitly
        let n = rows[0].len() - 1;
        let attention = vec![rows
            .iter()
            .map(|r| {
                let mut m = Mat::zeros((n + 1, n + 1));
                m.row_mut(0).assign(&ndarray::Array1::from(r.clone()));
                m
            })
            .collect()];
        EncoderOutput {
            tokens: Var::from_index_for_tests(0),
            class_feature: Var::from_index_for_tests(0),
            attention,
            batch: 1,
            seq: n + 1,
            heads,
            source_indices: vec![(0..n).collect()],
        }
    }

    #[test]
    fn head_average_hand_case() {
        let out = fake_output(2, &[vec![0.0, 0.7, 0.3], vec![0.0, 0.1, 0.9]]);
        let s = summarize_attention(&out, 2).unwrap();
        assert!((s.scores[0][0] - 0.4).abs() < 1e-12);
        assert!((s.scores[0][1] - 0.6).abs() < 1e-12);
        let one = fake_output(1, &[vec![0.5, 0.25, 0.25]]);
        assert_eq!(summarize_attention(&one, 2).unwrap().scores[0], vec![0.5, 0.5]);
    }

    #[test]
    fn summary_rejects_subsequence() {
        let mut out = fake_output(1, &[vec![0.0, 0.5, 0.5]]);
        out.source_indices = vec![vec![1, 0]];
        assert!(matches!(summarize_attention(&out, 2), Err(Error::Protocol(_))));
    }

    #[test]
    fn top_z_hand_case() {
        let summary = AttentionSummary {
            scores: vec![vec![0.1, 0.4, 0.3, 0.2]],
            layer_index: 0,
        };
        let sel = select_top_z(&summary, 0.5).unwrap();
        assert_eq!(sel.indices, vec![vec![1, 2]]);
        let all = select_top_z(&summary, 1.0).unwrap();
        assert_eq!(all.indices, vec![vec![1, 2, 3, 0]]);
        assert!(select_top_z(&summary, 0.1).is_err());
        assert!(select_top_z(&summary, 0.0).is_err());
        assert_eq!(selection_size(0.5, 256).unwrap(), 128);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(top_z(&[0.2, 0.3, 0.3, 0.2], 3), vec![1, 2, 0]);
    }

    #[test]
    fn memory_protocol() {
        let mut m = DynamicMemory::new();
        assert!(m.take().is_err());
        m.store(SelectionIndex::all(1, 2)).unwrap();
        assert!(m.store(SelectionIndex::all(1, 2)).is_err());
        assert_eq!(m.take().unwrap(), SelectionIndex::all(1, 2));
        assert!(m.is_empty());
    }

    #[test]
    fn gather_picks_rows() {
        let mut tape = Tape::new();
        let t = tape.constant(Mat::from_shape_fn((5, 2), |(r, _)| r as f64));
        let tb = TokenBatch {
            tokens: t,
            batch: 1,
            seq: 5,
            source_indices: vec![vec![0, 1, 2, 3]],
        };
        let sel = SelectionIndex {
            indices: vec![vec![1, 2]],
            z: 2,
            mu_ppm: 500_000,
        };
        let out = gather_hf_tokens(&mut tape, &tb, &sel).unwrap();
        assert_eq!(out.seq, 3);
        let v = tape.value(out.tokens);
        assert_eq!(v.column(0).to_vec(), vec![0.0, 2.0, 3.0]);
        let bad = SelectionIndex {
            indices: vec![vec![4]],
            z: 1,
            mu_ppm: 250_000,
        };
        assert!(gather_hf_tokens(&mut tape, &tb, &bad).is_err());
    }

    fn tiny() -> VitConfig {
        VitConfig {
            image_height: 16,
            image_width: 16,
            patch_size: 4,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2.0,
        }
    }

    #[test]
    fn dual_forward_shapes_and_identity() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        // same class token for both streams so identical inputs give identical features
        let cls = store.id("cls_token").unwrap();
        let cls_hf = store.id("cls_token_hf").unwrap();
        *store.get_mut(cls_hf) = store.get(cls).clone();
        let img: Vec<f64> = (0..16 * 16 * CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let patches = extract_patches(&cfg, &[img]).unwrap();
        let mut tape = Tape::new();
        let mut mem = DynamicMemory::new();
        let out = dual_forward(
            &mut tape,
            &store,
            &vit,
            &vit,
            &patches,
            &patches,
            TokenSelection::TopZ(1.0),
            &mut mem,
        )
        .unwrap();
        assert!(mem.is_empty());
        assert_eq!(tape.value(out.c_o).dim(), (1, 8));
        assert_eq!(tape.value(out.f_h).dim(), (16, 8));
        let (a, b) = (tape.value(out.c_o), tape.value(out.c_h));
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        let (fo, fh) = (tape.value(out.f_o), tape.value(out.f_h));
        assert!(fo.iter().zip(fh.iter()).all(|(x, y)| (x - y).abs() < 1e-9));

        let mut tape = Tape::new();
        let half = dual_forward(
            &mut tape,
            &store,
            &vit,
            &vit,
            &patches,
            &patches,
            TokenSelection::TopZ(0.5),
            &mut mem,
        )
        .unwrap();
        assert_eq!(tape.value(half.f_o).dim(), (8, 8));
        assert_eq!(half.high_frequency.seq, 9);
        assert_eq!(half.selection.indices[0], top_z(&half.summary.scores[0], 8));
    }

    #[test]
    fn both_streams_reach_the_weights() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        let patches = trunc_normal(16, cfg.patch_dim(), 1.0, &mut rng);
        let hf = trunc_normal(16, cfg.patch_dim(), 1.0, &mut rng);
        for use_hf in [false, true] {
            let mut tape = Tape::new();
            let mut mem = DynamicMemory::new();
            let out = dual_forward(
                &mut tape,
                &store,
                &vit,
                &vit,
                &patches,
                &hf,
                TokenSelection::TopZ(0.5),
                &mut mem,
            )
            .unwrap();
            let target = if use_hf { out.c_h } else { out.c_o };
            let w = tape.constant(trunc_normal(8, 1, 1.0, &mut rng));
            let root = tape.matmul(target, w);
            let g = tape.backward(root);
            let qkv = store.id("blocks.0.attn.qkv.weight").unwrap();
            assert!(g.param(qkv).unwrap().iter().any(|v| v.abs() > 0.0));
            let cls_id = store.id(if use_hf { "cls_token_hf" } else { "cls_token" }).unwrap();
            assert!(g.param(cls_id).unwrap().iter().any(|v| v.abs() > 0.0));
        }
    }
}
