//! Toy reference trainer: SGD with momentum on the latent projection and
//! both heads over frozen backbone features.
//!
//! The backbone keeps its seeded weights; its normalizations are fitted to
//! the training windows first. Used to produce fixtures, not a training API.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{gelu, gelu_grad, sigmoid, FloatModel, Linear};
use crate::error::{param, Result};
use crate::num::Scalar;
use crate::policy::argmax;
use crate::signal::Window;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// L2 penalty on the trained weights.
    pub weight_decay: f64,
    /// Windows used to fit the normalization statistics.
    pub norm_windows: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 200, lr: 0.1, momentum: 0.9, batch: 64, weight_decay: 1e-3, norm_windows: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

struct Velocity {
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Velocity {
    fn of<T>(l: &Linear<T>) -> Self {
        Velocity { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] }
    }

    fn step<T: Scalar>(&mut self, l: &mut Linear<T>, gw: &[f64], gb: &[f64], lr: f64, mu: f64) {
        for ((p, v), g) in l.w.iter_mut().zip(&mut self.w).zip(gw) {
            *v = mu * *v + g;
            *p -= T::lit(lr * *v);
        }
        for ((p, v), g) in l.b.iter_mut().zip(&mut self.b).zip(gb) {
            *v = mu * *v + g;
            *p -= T::lit(lr * *v);
        }
    }
}

/// Trains `model` in place on labelled, standardized windows.
pub fn train_toy<T: Scalar>(model: &mut FloatModel<T>, windows: &[Window<T>], cfg: &TrainConfig) -> Result<TrainReport> {
    if windows.is_empty() || cfg.steps == 0 || cfg.batch == 0 {
        return param("training needs windows, steps and a batch size");
    }
    if !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) || !(cfg.weight_decay >= 0.0) {
        return param("learning rate must be positive and momentum in [0, 1)");
    }
    let k = model.cfg.n_classes;
    if windows.iter().any(|w| w.label >= k) {
        return param("label outside the head's classes");
    }
    model.fit_norms(&windows[..cfg.norm_windows.clamp(1, windows.len())])?;
    let feats: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            let p = model.pooled(w)?;
            Ok(model.pool_norm.apply_rows(&p).iter().map(|v| v.as_f64()).collect())
        })
        .collect::<Result<_>>()?;

    let (d, dl) = (model.cfg.d0, model.cfg.d_lat);
    let mut vel = [Velocity::of(&model.latent), Velocity::of(&model.head), Velocity::of(&model.abstain)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut cursor = order.len();
    let f64s = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();

    for _ in 0..cfg.steps {
        let wl = f64s(&model.latent.w);
        let bl = f64s(&model.latent.b);
        let wh = f64s(&model.head.w);
        let bh = f64s(&model.head.b);
        let wa = f64s(&model.abstain.w);
        let ba = model.abstain.b[0].as_f64();
        let mut g = [
            (vec![0.0; wl.len()], vec![0.0; dl]),
            (vec![0.0; wh.len()], vec![0.0; k]),
            (vec![0.0; dl], vec![0.0; 1]),
        ];
        let mut loss = 0.0;
        let batch = cfg.batch.min(order.len());
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let x = &feats[i];
            let pre: Vec<f64> = (0..dl).map(|o| wl[o * d..(o + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bl[o]).collect();
            let z: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
            let logits: Vec<f64> = (0..k).map(|j| wh[j * dl..(j + 1) * dl].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + bh[j]).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let y = windows[i].label;
            loss += -(exps[y] / total).ln();
            let mut dz = vec![0.0; dl];
            for j in 0..k {
                let dl_j = exps[j] / total - if j == y { 1.0 } else { 0.0 };
                g[1].1[j] += dl_j;
                for c in 0..dl {
                    g[1].0[j * dl + c] += dl_j * z[c];
                    dz[c] += dl_j * wh[j * dl + c];
                }
            }
            let correct = if argmax(&logits) == y { 1.0 } else { 0.0 };
            let u = sigmoid(wa.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + ba);
            let du = u - correct;
            g[2].1[0] += du;
            for c in 0..dl {
                g[2].0[c] += du * z[c];
            }
            for o in 0..dl {
                let dp = dz[o] * gelu_grad(pre[o]);
                g[0].1[o] += dp;
                for c in 0..d {
                    g[0].0[o * d + c] += dp * x[c];
                }
            }
        }
        let scale = 1.0 / batch as f64;
        for ((gw, gb), w) in g.iter_mut().zip([&wl, &wh, &wa]) {
            gw.iter_mut().zip(w.iter()).for_each(|(v, w)| *v = *v * scale + cfg.weight_decay * w);
            gb.iter_mut().for_each(|v| *v *= scale);
        }
        losses.push(loss * scale);
        vel[0].step(&mut model.latent, &g[0].0, &g[0].1, cfg.lr, cfg.momentum);
        vel[1].step(&mut model.head, &g[1].0, &g[1].1, cfg.lr, cfg.momentum);
        vel[2].step(&mut model.abstain, &g[2].0, &g[2].1, cfg.lr, cfg.momentum);
    }

    let correct = windows
        .iter()
        .zip(&feats)
        .filter(|(w, x)| {
            let xs: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
            argmax(&model.readout_normalized(&xs, &mut |_, _| {}).logits) == w.label
        })
        .count();
    Ok(TrainReport { losses, train_accuracy: correct as f64 / windows.len() as f64 })
}
