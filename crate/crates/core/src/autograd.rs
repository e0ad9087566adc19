//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a row-major 2-D matrix. Operations record
//! whatever they need for the backward pass, and [`Tape::backward`] walks the
//! recorded nodes in reverse. The op set is exactly what the transformer,
//! token selection and the training objectives need; it is not a general
//! tensor library.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

const LAYER_NORM_EPS: f64 = 1e-6;
const BATCH_NORM_EPS: f64 = 1e-5;
/// Squared distances below this are clamped before the square root.
const DIST_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}

/// Reduction applied by [`Tape::smooth_l1`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothL1Reduction {
    /// Sum over batch, mean over tokens, mean over feature dimension.
    BatchSumTokenMeanDimMean,
    /// Sum over batch, mean over tokens, sum over feature dimension.
    BatchSumTokenMeanDimSum,
    /// Mean over every element.
    Mean,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        qkv: Var,
        seq: usize,
        heads: usize,
        probs: Vec<Mat>,
    },
    Rows {
        sources: Vec<Var>,
        picks: Vec<(usize, usize)>,
    },
    CrossEntropy {
        logits: Var,
        grad: Mat,
    },
    Triplet {
        x: Var,
        grad: Mat,
    },
    SmoothL1 {
        a: Var,
        b: Var,
        grad: Mat,
    },
    WeightedSum(Vec<(Var, f64)>),
}

/// Records a computation for later differentiation.
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
    params: HashMap<usize, Var>,
}

/// Gradients of a scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for parameter `id`, if the parameter took part in the computation.
    pub fn param(&self, id: usize) -> Option<&Mat> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Row-wise numerically stable softmax, in place.
pub fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for parameter `id`. Repeated calls with the same id return the
    /// same node so that shared weights accumulate a single gradient.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x + b` where `b` is a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let out = self.value(x) + &self.value(b).row(0);
        self.push(out, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `x + y` where `x` stacks `k` blocks with the shape of `y`.
    pub fn add_tiled(&mut self, x: Var, y: Var) -> Var {
        let xv = self.value(x);
        let yv = self.value(y);
        let block = yv.nrows();
        assert!(block > 0 && xv.nrows() % block == 0, "add_tiled: rows not a multiple");
        let mut out = xv.clone();
        for mut chunk in out.axis_chunks_iter_mut(Axis(0), block) {
            chunk += yv;
        }
        self.push(out, Op::AddTiled(x, y))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x) * k;
        self.push(out, Op::Scale(x, k))
    }

    /// Row-wise layer normalisation with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Column-wise normalisation over the batch (rows) using the batch's own
    /// statistics, with learned gain and bias rows.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.nrows() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.ncols());
        for mut col in xhat.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + BATCH_NORM_EPS).sqrt();
            col.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` stacks `batch` sequences of `seq` rows; its columns are the
    /// concatenated query, key and value projections, each split evenly
    /// across `heads`. Returns the per-head context concatenated along columns.
    pub fn attention(&mut self, qkv: Var, seq: usize, heads: usize) -> Var {
        let q = self.value(qkv);
        let (rows, cols) = q.dim();
        assert!(cols % 3 == 0, "attention: qkv width not divisible by 3");
        let dim = cols / 3;
        assert!(dim % heads == 0, "attention: dim not divisible by heads");
        assert!(rows % seq == 0, "attention: rows not a multiple of seq");
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let batch = rows / seq;
        let mut out = Mat::zeros((rows, dim));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let qh = q.slice(s![r.clone(), h * hd..(h + 1) * hd]);
                let kh = q.slice(s![r.clone(), dim + h * hd..dim + (h + 1) * hd]);
                let vh = q.slice(s![r.clone(), 2 * dim + h * hd..2 * dim + (h + 1) * hd]);
                let mut p = qh.dot(&kh.t()) * scale;
                softmax_rows(&mut p);
                out.slice_mut(s![r.clone(), h * hd..(h + 1) * hd]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { qkv, seq, heads, probs })
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node,
    /// indexed `[sample * heads + head]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat]> {
        match &self.ops[v.0] {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Builds a matrix whose i-th row is row `picks[i].1` of `sources[picks[i].0]`.
    pub fn rows(&mut self, sources: &[Var], picks: &[(usize, usize)]) -> Var {
        let cols = self.value(sources[0]).ncols();
        let mut out = Mat::zeros((picks.len(), cols));
        for (i, &(src, row)) in picks.iter().enumerate() {
            let m = self.value(sources[src]);
            assert_eq!(m.ncols(), cols, "rows: column mismatch");
            out.row_mut(i).assign(&m.row(row));
        }
        self.push(
            out,
            Op::Rows {
                sources: sources.to_vec(),
                picks: picks.to_vec(),
            },
        )
    }

    /// Mean softmax cross-entropy with optional label smoothing.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: f64) -> Var {
        let lv = self.value(logits);
        let (n, k) = lv.dim();
        assert_eq!(n, labels.len(), "cross_entropy: label count");
        let mut p = lv.clone();
        softmax_rows(&mut p);
        let mut loss = 0.0;
        let mut grad = p.clone();
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..k {
                let target = if c == y { 1.0 - smoothing } else { 0.0 } + smoothing / k as f64;
                if target > 0.0 {
                    loss -= target * (row[c] - lse);
                }
                grad[[i, c]] -= target;
            }
        }
        grad /= n as f64;
        self.push(
            Mat::from_elem((1, 1), loss / n as f64),
            Op::CrossEntropy { logits, grad },
        )
    }

    /// Batch-hard triplet loss with Euclidean distance.
    ///
    /// Anchors without both a positive and a negative in the batch are
    /// ignored; returns `None` when no anchor qualifies.
    pub fn batch_hard_triplet(&mut self, x: Var, labels: &[usize], margin: f64) -> Option<Var> {
        let xv = self.value(x);
        let n = xv.nrows();
        assert_eq!(n, labels.len(), "triplet: label count");
        let dist = pairwise_distances(xv.view());
        let mut anchors = Vec::new();
        for i in 0..n {
            let mut pos: Option<usize> = None;
            let mut neg: Option<usize> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if labels[j] == labels[i] {
                    if pos.is_none_or(|p| dist[[i, j]] > dist[[i, p]]) {
                        pos = Some(j);
                    }
                } else if neg.is_none_or(|q| dist[[i, j]] < dist[[i, q]]) {
                    neg = Some(j);
                }
            }
            if let (Some(p), Some(q)) = (pos, neg) {
                anchors.push((i, p, q));
            }
        }
        if anchors.is_empty() {
            return None;
        }
        let count = anchors.len() as f64;
        let mut loss = 0.0;
        let mut grad = Mat::zeros(xv.dim());
        for &(a, p, q) in &anchors {
            let h = dist[[a, p]] - dist[[a, q]] + margin;
            if h <= 0.0 {
                continue;
            }
            loss += h;
            for (j, sign) in [(p, 1.0), (q, -1.0)] {
                let sq = (&xv.row(a) - &xv.row(j)).mapv(|v| v * v).sum();
                if sq < DIST_CLAMP {
                    continue;
                }
                let g = (&xv.row(a) - &xv.row(j)) * (sign / (sq.sqrt() * count));
                let mut ra = grad.row_mut(a);
                ra += &g;
                let mut rj = grad.row_mut(j);
                rj -= &g;
            }
        }
        Some(self.push(Mat::from_elem((1, 1), loss / count), Op::Triplet { x, grad }))
    }

    /// Smooth-L1 discrepancy between two `(batch·tokens)×dim` matrices.
    pub fn smooth_l1(&mut self, a: Var, b: Var, batch: usize, reduction: SmoothL1Reduction) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.dim(), bv.dim(), "smooth_l1: shape mismatch");
        let (rows, dim) = av.dim();
        assert!(
            batch > 0 && rows % batch == 0,
            "smooth_l1: rows not a multiple of batch"
        );
        let tokens = rows / batch;
        let weight = match reduction {
            SmoothL1Reduction::BatchSumTokenMeanDimMean => 1.0 / (tokens * dim) as f64,
            SmoothL1Reduction::BatchSumTokenMeanDimSum => 1.0 / tokens as f64,
            SmoothL1Reduction::Mean => 1.0 / (rows * dim) as f64,
        };
        let diff = av - bv;
        // Sum per token row first so the reduction order matches the definition.
        let mut loss = 0.0;
        for b in 0..batch {
            let mut per_sample = 0.0;
            for t in 0..tokens {
                let row = diff.row(b * tokens + t);
                per_sample += row.iter().map(|&d| smooth_l1(d)).sum::<f64>();
            }
            loss += per_sample * weight;
        }
        let grad = diff.mapv(|d| smooth_l1_grad(d) * weight);
        self.push(Mat::from_elem((1, 1), loss), Op::SmoothL1 { a, b, grad })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        self.push(Mat::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()))
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.values.len()];
        grads[root.0] = Some(Mat::ones(self.values[root.0].dim()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        }
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.dot(&self.values[b.0].t());
                let gb = self.values[a.0].t().dot(g);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::AddRow(x, b) => {
                acc(grads, *x, g.clone());
                acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddTiled(x, y) => {
                let block = self.values[y.0].nrows();
                let mut gy = Mat::zeros(self.values[y.0].dim());
                for chunk in g.axis_chunks_iter(Axis(0), block) {
                    gy += &chunk;
                }
                acc(grads, *x, g.clone());
                acc(grads, *y, gy);
            }
            Op::Scale(x, k) => acc(grads, *x, g * *k),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.values[gamma.0].row(0);
                acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let d = xhat.ncols() as f64;
                let gx_hat = g * &gam;
                let mut gx = Mat::zeros(xhat.dim());
                for (r, mut out) in gx.rows_mut().into_iter().enumerate() {
                    let gh = gx_hat.row(r);
                    let xh = xhat.row(r);
                    let mean_g = gh.sum() / d;
                    let mean_gx = gh.dot(&xh) / d;
                    for c in 0..out.len() {
                        out[c] = inv_std[r] * (gh[c] - mean_g - xh[c] * mean_gx);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let n = xhat.nrows() as f64;
                let gx_hat = g * &self.values[gamma.0].row(0);
                let mut gx = Mat::zeros(xhat.dim());
                for (c, mut out) in gx.columns_mut().into_iter().enumerate() {
                    let gh = gx_hat.column(c);
                    let xh = xhat.column(c);
                    let mean_g = gh.sum() / n;
                    let mean_gx = gh.dot(&xh) / n;
                    for r in 0..out.len() {
                        out[r] = inv_std[c] * (gh[r] - mean_g - xh[r] * mean_gx);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = ndarray::Zip::from(g)
                    .and(&self.values[x.0])
                    .map_collect(|&gv, &xv| gv * gelu_grad(xv));
                acc(grads, *x, gx);
            }
            Op::Attention { qkv, seq, heads, probs } => {
                let qv = &self.values[qkv.0];
                let dim = qv.ncols() / 3;
                let hd = dim / heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let batch = qv.nrows() / seq;
                let mut gq = Mat::zeros(qv.dim());
                for b in 0..batch {
                    let r = b * seq..(b + 1) * seq;
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let qc = h * hd..(h + 1) * hd;
                        let kc = dim + h * hd..dim + (h + 1) * hd;
                        let vc = 2 * dim + h * hd..2 * dim + (h + 1) * hd;
                        let go = g.slice(s![r.clone(), qc.clone()]);
                        let qh = qv.slice(s![r.clone(), qc.clone()]);
                        let kh = qv.slice(s![r.clone(), kc.clone()]);
                        let vh = qv.slice(s![r.clone(), vc.clone()]);
                        let gp = go.dot(&vh.t());
                        let gv = p.t().dot(&go);
                        let mut gs = p * &gp;
                        for (mut row, prow) in gs.rows_mut().into_iter().zip(p.rows()) {
                            let dotp: f64 = row.sum();
                            for (v, &pv) in row.iter_mut().zip(prow.iter()) {
                                *v -= pv * dotp;
                            }
                        }
                        gs *= scale;
                        let gqh = gs.dot(&kh);
                        let gkh = gs.t().dot(&qh);
                        gq.slice_mut(s![r.clone(), qc]).assign(&gqh);
                        gq.slice_mut(s![r.clone(), kc]).assign(&gkh);
                        gq.slice_mut(s![r.clone(), vc]).assign(&gv);
                    }
                }
                acc(grads, *qkv, gq);
            }
            Op::Rows { sources, picks } => {
                let mut parts: Vec<Mat> = sources.iter().map(|s| Mat::zeros(self.values[s.0].dim())).collect();
                for (i, &(src, row)) in picks.iter().enumerate() {
                    let mut target = parts[src].row_mut(row);
                    target += &g.row(i);
                }
                for (s, part) in sources.iter().zip(parts) {
                    acc(grads, *s, part);
                }
            }
            Op::CrossEntropy { logits, grad } => acc(grads, *logits, grad * g[[0, 0]]),
            Op::Triplet { x, grad } => acc(grads, *x, grad * g[[0, 0]]),
            Op::SmoothL1 { a, b, grad } => {
                acc(grads, *a, grad * g[[0, 0]]);
                acc(grads, *b, grad * -g[[0, 0]]);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(grads, v, Mat::from_elem((1, 1), w * g[[0, 0]]));
                }
            }
        }
    }
}

/// Euclidean distance matrix between the rows of `x`, with the squared
/// distance clamped at a tiny floor before the square root.
pub fn pairwise_distances(x: ArrayView2<f64>) -> Mat {
    let n = x.nrows();
    let mut d = Mat::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = sq.max(DIST_CLAMP).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}
