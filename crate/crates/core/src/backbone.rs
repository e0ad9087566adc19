//! Compact Vision Transformer encoder.
//!
//! Pre-norm blocks (LayerNorm → multi-head attention → residual, LayerNorm →
//! GELU MLP → residual), a learned class token, learned positional
//! embeddings and a final LayerNorm. Both input streams run through the
//! same weights; the high-frequency stream gets its own class token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamStore};

pub const CHANNELS: usize = 3;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl VitConfig {
    /// 64×64 input, 8×8 patches, D=128, 4 layers, 4 heads.
    pub fn desk() -> Self {
        VitConfig {
            image_height: 64,
            image_width: 64,
            patch_size: 8,
            embed_dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
        }
    }

    /// Small model for CPU experiments: 64×64 input, 8×8 patches, D=32, 2 layers.
    pub fn toy() -> Self {
        VitConfig {
            image_height: 64,
            image_width: 64,
            patch_size: 8,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 2.0,
        }
    }

    /// ViT-Base at 256×256 with 16×16 patches.
    pub fn base() -> Self {
        VitConfig {
            image_height: 256,
            image_width: 256,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_height % p != 0 || self.image_width % p != 0 {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by patch size {p}",
                self.image_height, self.image_width
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 || self.mlp_ratio <= 0.0 {
            return Err(Error::Config("depth and mlp ratio must be positive".into()));
        }
        Ok(())
    }

    /// Patch grid as (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    pub fn hidden_dim(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

/// Which learned class token starts the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassToken {
    Original,
    HighFrequency,
}

/// Parameter layout of one encoder inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Vit {
    config: VitConfig,
    patch_w: usize,
    patch_b: usize,
    cls: usize,
    cls_hf: usize,
    pos: usize,
    blocks: Vec<Block>,
    norm_g: usize,
    norm_b: usize,
}

/// A stacked batch of token sequences, `batch·seq` rows of width D.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Var,
    pub batch: usize,
    pub seq: usize,
    /// Original patch index of every non-class token, per sample.
    pub source_indices: Vec<Vec<usize>>,
}

/// Result of [`Vit::encode`].
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Final-layer (normalised) tokens, `batch·seq` rows.
    pub tokens: Var,
    /// Class-token features, `batch` rows.
    pub class_feature: Var,
    /// Attention probabilities per layer, indexed `[layer][sample * heads + head]`,
    /// each `seq×seq`.
    pub attention: Vec<Vec<Mat>>,
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub source_indices: Vec<Vec<usize>>,
}

impl EncoderOutput {
    /// True when the sequence covers every patch of the image in order.
    pub fn is_full_sequence(&self, num_patches: usize) -> bool {
        self.seq == num_patches + 1 && self.source_indices.iter().all(|s| s.iter().copied().eq(0..num_patches))
    }
}

/// Rearranges normalised HWC images into a `(batch·n) × (P·P·C)` patch matrix.
/// Patches are numbered row-major over the patch grid; within a patch the
/// layout is row, column, channel.
pub fn extract_patches(config: &VitConfig, images: &[Vec<f64>]) -> Result<Mat> {
    let (h, w, p) = (config.image_height, config.image_width, config.patch_size);
    let (gr, gc) = config.grid();
    let n = gr * gc;
    let mut out = Mat::zeros((images.len() * n, config.patch_dim()));
    for (b, img) in images.iter().enumerate() {
        if img.len() != h * w * CHANNELS {
            return Err(Error::Shape(format!(
                "image {b} has {} values, expected {}x{}x{CHANNELS}",
                img.len(),
                h,
                w
            )));
        }
        for pr in 0..gr {
            for pc in 0..gc {
                let mut row = out.row_mut(b * n + pr * gc + pc);
                let mut k = 0;
                for y in pr * p..(pr + 1) * p {
                    let start = (y * w + pc * p) * CHANNELS;
                    for &v in &img[start..start + p * CHANNELS] {
                        row[k] = v;
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_finite(m: &Mat, layer: usize) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activation in layer {layer}")));
    }
    Ok(())
}

impl Vit {
    /// Registers freshly initialised weights (prefixed with `prefix`) in `store`.
    pub fn init<R: Rng + ?Sized>(config: VitConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let hid = config.hidden_dim();
        let n = config.num_patches();
        let mut add = |name: &str, m: Mat| store.add(format!("{prefix}{name}"), m);
        let patch_w = add("patch.weight", trunc_normal(config.patch_dim(), d, INIT_STD, rng));
        let patch_b = add("patch.bias", Mat::zeros((1, d)));
        let cls = add("cls_token", trunc_normal(1, d, INIT_STD, rng));
        let cls_hf = add("cls_token_hf", trunc_normal(1, d, INIT_STD, rng));
        let pos = add("pos_embed", trunc_normal(n + 1, d, INIT_STD, rng));
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let mut add = |name: &str, m: Mat| store.add(format!("{prefix}blocks.{l}.{name}"), m);
            blocks.push(Block {
                ln1_g: add("norm1.weight", Mat::ones((1, d))),
                ln1_b: add("norm1.bias", Mat::zeros((1, d))),
                qkv_w: add("attn.qkv.weight", trunc_normal(d, 3 * d, INIT_STD, rng)),
                qkv_b: add("attn.qkv.bias", Mat::zeros((1, 3 * d))),
                proj_w: add("attn.proj.weight", trunc_normal(d, d, INIT_STD, rng)),
                proj_b: add("attn.proj.bias", Mat::zeros((1, d))),
                ln2_g: add("norm2.weight", Mat::ones((1, d))),
                ln2_b: add("norm2.bias", Mat::zeros((1, d))),
                fc1_w: add("mlp.fc1.weight", trunc_normal(d, hid, INIT_STD, rng)),
                fc1_b: add("mlp.fc1.bias", Mat::zeros((1, hid))),
                fc2_w: add("mlp.fc2.weight", trunc_normal(hid, d, INIT_STD, rng)),
                fc2_b: add("mlp.fc2.bias", Mat::zeros((1, d))),
            });
        }
        let mut add = |name: &str, m: Mat| store.add(format!("{prefix}{name}"), m);
        let norm_g = add("norm.weight", Mat::ones((1, d)));
        let norm_b = add("norm.bias", Mat::zeros((1, d)));
        Ok(Vit {
            config,
            patch_w,
            patch_b,
            cls,
            cls_hf,
            pos,
            blocks,
            norm_g,
            norm_b,
        })
    }

    /// Rebuilds the layout for weights already present in `store`.
    pub fn bind(config: VitConfig, prefix: &str, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let id = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let b = |n: &str| id(format!("{prefix}blocks.{l}.{n}"));
            blocks.push(Block {
                ln1_g: b("norm1.weight")?,
                ln1_b: b("norm1.bias")?,
                qkv_w: b("attn.qkv.weight")?,
                qkv_b: b("attn.qkv.bias")?,
                proj_w: b("attn.proj.weight")?,
                proj_b: b("attn.proj.bias")?,
                ln2_g: b("norm2.weight")?,
                ln2_b: b("norm2.bias")?,
                fc1_w: b("mlp.fc1.weight")?,
                fc1_b: b("mlp.fc1.bias")?,
                fc2_w: b("mlp.fc2.weight")?,
                fc2_b: b("mlp.fc2.bias")?,
            });
        }
        let vit = Vit {
            config,
            patch_w: id(format!("{prefix}patch.weight"))?,
            patch_b: id(format!("{prefix}patch.bias"))?,
            cls: id(format!("{prefix}cls_token"))?,
            cls_hf: id(format!("{prefix}cls_token_hf"))?,
            pos: id(format!("{prefix}pos_embed"))?,
            blocks,
            norm_g: id(format!("{prefix}norm.weight"))?,
            norm_b: id(format!("{prefix}norm.bias"))?,
        };
        if store.get(vit.pos).dim() != (config.num_patches() + 1, config.embed_dim) {
            return Err(Error::Shape("positional embedding does not match config".into()));
        }
        Ok(vit)
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    /// Embeds a patch matrix from [`extract_patches`] into full sequences:
    /// class token first, positional embeddings added.
    pub fn patchify(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        patches: &Mat,
        class_token: ClassToken,
    ) -> Result<TokenBatch> {
        let n = self.config.num_patches();
        if patches.ncols() != self.config.patch_dim() || patches.nrows() % n != 0 {
            return Err(Error::Shape(format!(
                "patch matrix {:?} does not match {} patches of width {}",
                patches.dim(),
                n,
                self.config.patch_dim()
            )));
        }
        let batch = patches.nrows() / n;
        let x = tape.constant(patches.clone());
        let w = tape.param(self.patch_w, store.get(self.patch_w));
        let b = tape.param(self.patch_b, store.get(self.patch_b));
        let proj = tape.matmul(x, w);
        let emb = tape.add_row(proj, b);
        let pos = tape.param(self.pos, store.get(self.pos));
        let pos_patch = tape.rows(&[pos], &(1..=n).map(|i| (0, i)).collect::<Vec<_>>());
        let emb = tape.add_tiled(emb, pos_patch);
        let cls_id = match class_token {
            ClassToken::Original => self.cls,
            ClassToken::HighFrequency => self.cls_hf,
        };
        let cls = tape.param(cls_id, store.get(cls_id));
        let pos0 = tape.rows(&[pos], &[(0, 0)]);
        let cls = tape.add(cls, pos0);
        let mut picks = Vec::with_capacity(batch * (n + 1));
        for s in 0..batch {
            picks.push((0, 0));
            picks.extend((0..n).map(|i| (1, s * n + i)));
        }
        let tokens = tape.rows(&[cls, emb], &picks);
        Ok(TokenBatch {
            tokens,
            batch,
            seq: n + 1,
            source_indices: vec![(0..n).collect(); batch],
        })
    }

    /// Runs the transformer stack over any sequence length ≥ 1.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, input: &TokenBatch) -> Result<EncoderOutput> {
        let (rows, d) = tape.value(input.tokens).dim();
        if rows != input.batch * input.seq || d != self.config.embed_dim || input.seq == 0 {
            return Err(Error::Shape(format!(
                "token batch {rows}x{d} vs {} sequences of {}",
                input.batch, input.seq
            )));
        }
        let mut x = input.tokens;
        let mut attention = Vec::with_capacity(self.blocks.len());
        let p = |tape: &mut Tape, id: usize| tape.param(id, store.get(id));
        for (l, blk) in self.blocks.iter().enumerate() {
            let (g1, b1) = (p(tape, blk.ln1_g), p(tape, blk.ln1_b));
            let h = tape.layer_norm(x, g1, b1);
            let (wq, bq) = (p(tape, blk.qkv_w), p(tape, blk.qkv_b));
            let qkv = tape.matmul(h, wq);
            let qkv = tape.add_row(qkv, bq);
            let att = tape.attention(qkv, input.seq, self.config.heads);
            attention.push(tape.attention_probs(att).expect("attention node").to_vec());
            let (wp, bp) = (p(tape, blk.proj_w), p(tape, blk.proj_b));
            let proj = tape.matmul(att, wp);
            let proj = tape.add_row(proj, bp);
            x = tape.add(x, proj);
            let (g2, b2) = (p(tape, blk.ln2_g), p(tape, blk.ln2_b));
            let h = tape.layer_norm(x, g2, b2);
            let (w1, c1) = (p(tape, blk.fc1_w), p(tape, blk.fc1_b));
            let h = tape.matmul(h, w1);
            let h = tape.add_row(h, c1);
            let h = tape.gelu(h);
            let (w2, c2) = (p(tape, blk.fc2_w), p(tape, blk.fc2_b));
            let h = tape.matmul(h, w2);
            let h = tape.add_row(h, c2);
            x = tape.add(x, h);
            check_finite(tape.value(x), l)?;
        }
        let (gn, bn) = (p(tape, self.norm_g), p(tape, self.norm_b));
        let tokens = tape.layer_norm(x, gn, bn);
        let picks: Vec<(usize, usize)> = (0..input.batch).map(|b| (0, b * input.seq)).collect();
        let class_feature = tape.rows(&[tokens], &picks);
        Ok(EncoderOutput {
            tokens,
            class_feature,
            attention,
            batch: input.batch,
            seq: input.seq,
            heads: self.config.heads,
            source_indices: input.source_indices.clone(),
        })
    }
}

/// Class-token attention over the patch positions at `(layer, head)`,
/// one vector per sample. The class token's attention to itself is dropped
/// and the remainder renormalised to sum to one.
pub fn class_attention(out: &EncoderOutput, layer: usize, head: usize) -> Result<Vec<Vec<f64>>> {
    if layer >= out.attention.len() || head >= out.heads {
        return Err(Error::Parameter(format!(
            "layer {layer} / head {head} out of range ({} layers, {} heads)",
            out.attention.len(),
            out.heads
        )));
    }
    Ok((0..out.batch)
        .map(|b| {
            let p = &out.attention[layer][b * out.heads + head];
            renormalized_patch_scores(p.row(0).iter().copied())
        })
        .collect())
}

/// Drops the first entry of a class-query attention row and renormalises the rest.
pub fn renormalized_patch_scores(row: impl Iterator<Item = f64>) -> Vec<f64> {
    let patches: Vec<f64> = row.skip(1).collect();
    let sum: f64 = patches.iter().sum();
    if sum > 0.0 {
        patches.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / patches.len() as f64; patches.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::softmax_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> VitConfig {
        VitConfig {
            image_height: 16,
            image_width: 16,
            patch_size: 8,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2.0,
        }
    }

    fn random_images(rng: &mut ChaCha8Rng, cfg: &VitConfig, b: usize) -> Vec<Vec<f64>> {
        (0..b)
            .map(|_| {
                (0..cfg.image_height * cfg.image_width * CHANNELS)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn sequence_lengths() {
        assert_eq!(VitConfig::base().num_patches() + 1, 257);
        assert_eq!(VitConfig::toy().num_patches() + 1, 65);
        let bad = VitConfig {
            image_height: 60,
            ..VitConfig::toy()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_image_embeds_to_bias() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        *store.get_mut(vit.patch_b) = Mat::from_elem((1, 8), 0.3);
        *store.get_mut(vit.pos) = Mat::zeros((5, 8));
        let patches = extract_patches(&cfg, &[vec![0.0; 16 * 16 * 3]]).unwrap();
        let mut tape = Tape::new();
        let tb = vit.patchify(&mut tape, &store, &patches, ClassToken::Original).unwrap();
        assert_eq!(tb.seq, 5);
        let t = tape.value(tb.tokens);
        for r in 1..5 {
            assert!(t.row(r).iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn patch_layout_row_major() {
        let cfg = small();
        let img: Vec<f64> = (0..16 * 16 * 3).map(|i| i as f64).collect();
        let p = extract_patches(&cfg, &[img]).unwrap();
        assert_eq!(p.dim(), (4, 192));
        // patch 1 is the top-right 8×8 block: first value at pixel (0, 8)
        assert_eq!(p[[1, 0]], (8 * 3) as f64);
        // patch 2 starts at pixel (8, 0)
        assert_eq!(p[[2, 0]], (8 * 16 * 3) as f64);
    }

    #[test]
    fn attention_rows_and_class_feature() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        let imgs = random_images(&mut rng, &cfg, 3);
        let mut tape = Tape::new();
        let tb = vit
            .patchify(
                &mut tape,
                &store,
                &extract_patches(&cfg, &imgs).unwrap(),
                ClassToken::Original,
            )
            .unwrap();
        let out = vit.encode(&mut tape, &store, &tb).unwrap();
        for layer in &out.attention {
            for p in layer {
                for row in p.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-5);
                }
            }
        }
        let toks = tape.value(out.tokens);
        let cf = tape.value(out.class_feature);
        for b in 0..3 {
            assert_eq!(cf.row(b), toks.row(b * out.seq));
        }
        for s in class_attention(&out, 1, 1).unwrap() {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(class_attention(&out, 2, 0).is_err());
        assert!(class_attention(&out, 0, 2).is_err());
    }

    #[test]
    fn class_attention_hand_case() {
        let mut logits = Mat::from_shape_vec((1, 5), vec![2.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        softmax_rows(&mut logits);
        let s = renormalized_patch_scores(logits.row(0).iter().copied());
        for v in s {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn class_token_only_sequence() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let t = tape.constant(trunc_normal(2, 8, 1.0, &mut rng));
        let tb = TokenBatch {
            tokens: t,
            batch: 2,
            seq: 1,
            source_indices: vec![vec![]; 2],
        };
        let out = vit.encode(&mut tape, &store, &tb).unwrap();
        for layer in &out.attention {
            for p in layer {
                assert_eq!(p.dim(), (1, 1));
                assert_eq!(p[[0, 0]], 1.0);
            }
        }
    }

    #[test]
    fn permuting_patches_keeps_class_feature() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        let imgs = random_images(&mut rng, &cfg, 1);
        let patches = extract_patches(&cfg, &imgs).unwrap();
        let mut tape = Tape::new();
        let tb = vit.patchify(&mut tape, &store, &patches, ClassToken::Original).unwrap();
        let base = vit.encode(&mut tape, &store, &tb).unwrap();
        let perm = [0usize, 3, 1, 4, 2];
        let shuffled = tape.rows(&[tb.tokens], &perm.iter().map(|&r| (0, r)).collect::<Vec<_>>());
        let tb2 = TokenBatch {
            tokens: shuffled,
            batch: 1,
            seq: 5,
            source_indices: vec![vec![2, 0, 3, 1]],
        };
        let out = vit.encode(&mut tape, &store, &tb2).unwrap();
        let a = tape.value(base.class_feature);
        let b = tape.value(out.class_feature);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(base.is_full_sequence(4));
        assert!(!out.is_full_sequence(4));
    }

    #[test]
    fn duplicated_samples_do_not_interact() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let vit = Vit::init(cfg, "", &mut store, &mut rng).unwrap();
        let imgs = random_images(&mut rng, &cfg, 2);
        let run = |imgs: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let tb = vit
                .patchify(
                    &mut tape,
                    &store,
                    &extract_patches(&cfg, imgs).unwrap(),
                    ClassToken::Original,
                )
                .unwrap();
            let out = vit.encode(&mut tape, &store, &tb).unwrap();
            tape.value(out.class_feature).clone()
        };
        let single = run(&imgs[..1]);
        let doubled = run(&[imgs[0].clone(), imgs[0].clone(), imgs[1].clone()]);
        assert_eq!(single.row(0), doubled.row(0));
        assert_eq!(single.row(0), doubled.row(1));
    }

    #[test]
    fn bind_recovers_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let vit = Vit::init(small(), "m.", &mut store, &mut rng).unwrap();
        assert_eq!(Vit::bind(small(), "m.", &store).unwrap(), vit);
        assert!(Vit::bind(small(), "x.", &store).is_err());
    }
}
