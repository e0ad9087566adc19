use std::f64::consts::PI;

use crate::autograd::{Gradients, Mat};
use crate::params::ParamStore;

/// Learning rate for `epoch` of `epochs`: optional linear warmup, then
/// `lr0 · ½ · (1 + cos(π·e/E))` counted from the end of warmup.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize, warmup: usize) -> f64 {
    if epoch < warmup {
        return lr0 * (epoch + 1) as f64 / warmup as f64;
    }
    let span = (epochs - warmup) as f64;
    let e = (epoch - warmup) as f64;
    lr0 * 0.5 * (1.0 + (PI * e / span).cos())
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
/// Optionally rescales the raw gradient so its global L2 norm is at most `max_grad_norm`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    velocity: Vec<Option<Mat>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, num_params: usize) -> Self {
        Sgd {
            momentum,
            weight_decay,
            max_grad_norm: None,
            velocity: vec![None; num_params],
        }
    }

    pub fn with_clip(mut self, max_grad_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    /// Global L2 norm of the gradients `store`'s parameters received.
    pub fn grad_norm(store: &ParamStore, grads: &Gradients) -> f64 {
        (0..store.len())
            .filter_map(|id| grads.param(id))
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Updates every parameter that received a gradient; untouched ones are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = Self::grad_norm(store, grads);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for id in 0..store.len() {
            let Some(g) = grads.param(id) else { continue };
            let w = store.get_mut(id);
            let mut d = if scale == 1.0 { g.clone() } else { g * scale };
            if self.weight_decay != 0.0 {
                d.scaled_add(self.weight_decay, w);
            }
            let v = match &mut self.velocity[id] {
                Some(v) => {
                    v.mapv_inplace(|x| x * self.momentum);
                    *v += &d;
                    v
                }
                slot => slot.insert(d),
            };
            w.scaled_add(-lr, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{SmoothL1Reduction, Tape};
    use ndarray::array;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.001, 0, 150, 0), 0.001);
        assert!(cosine_lr(0.001, 150, 150, 0).abs() < 1e-18);
        assert!((cosine_lr(0.001, 75, 150, 0) - 0.0005).abs() < 1e-15);
        assert!((cosine_lr(1.0, 0, 10, 2) - 0.5).abs() < 1e-15);
        assert_eq!(cosine_lr(1.0, 2, 10, 2), 1.0);
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[3.0, 4.0]]);
        let mut tape = Tape::new();
        let x = tape.param(id, store.get(id));
        let zero = tape.constant(array![[0.0, 0.0]]);
        // grad = sign(w) = (1, 1) above the smooth-L1 knee, norm sqrt(2)
        let loss = tape.smooth_l1(x, zero, 1, SmoothL1Reduction::BatchSumTokenMeanDimSum);
        let grads = tape.backward(loss);
        assert!((Sgd::grad_norm(&store, &grads) - 2f64.sqrt()).abs() < 1e-12);
        let mut opt = Sgd::new(0.0, 0.0, 1).with_clip(Some(1.0));
        opt.step(&mut store, &grads, 1.0);
        let h = 1.0 / 2f64.sqrt();
        assert!((store.get(id)[[0, 0]] - (3.0 - h)).abs() < 1e-12);
        assert!((store.get(id)[[0, 1]] - (4.0 - h)).abs() < 1e-12);
    }

    #[test]
    fn momentum_matches_hand_rollout() {
        // loss = w^2 / 2, so grad = w
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0]]);
        let mut opt = Sgd::new(0.9, 0.1, 1);
        let (mut w, mut v) = (1.0f64, 0.0f64);
        for _ in 0..5 {
            let mut tape = Tape::new();
            let x = tape.param(id, store.get(id));
            let zero = tape.constant(array![[0.0]]);
            let half = tape.smooth_l1(x, zero, 1, SmoothL1Reduction::Mean);
            let grads = tape.backward(half);
            opt.step(&mut store, &grads, 0.1);
            // smooth-L1 below 1 is d^2/2 with gradient d
            v = 0.9 * v + (w + 0.1 * w);
            w -= 0.1 * v;
            assert!((store.get(id)[[0, 0]] - w).abs() < 1e-15);
        }
    }
}
