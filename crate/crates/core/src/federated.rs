//! Multi-site update primitives: norm clipping, Gaussian perturbation and
//! quality-weighted aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::num::Scalar;

/// Floor added to a site's ECE before inverting it.
pub const ECE_FLOOR: f64 = 1e-3;

/// Noise multipliers used by the toy rounds.
pub const SIGMA_DEFAULTS: [f64; 3] = [0.5, 0.7, 1.0];

pub const DEFAULT_CLIP: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteUpdate<T> {
    pub site_id: String,
    pub delta: Vec<T>,
    pub val_macro_f1: f64,
    pub val_ece: f64,
}

pub fn l2_norm<T: Scalar>(u: &[T]) -> T {
    u.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// `u * min(1, c / |u|)`.
pub fn clip_update<T: Scalar>(u: &[T], c: T) -> Result<Vec<T>> {
    if !(c > T::zero()) {
        return param("clip norm must be positive");
    }
    let norm = l2_norm(u);
    if norm <= c {
        return Ok(u.to_vec());
    }
    let s = c / norm;
    Ok(u.iter().map(|x| *x * s).collect())
}

/// Adds i.i.d. `N(0, (sigma c)^2)` noise per coordinate.
pub fn privatize<T: Scalar>(u: &[T], sigma: T, c: T, seed: u64) -> Result<Vec<T>> {
    if sigma < T::zero() || !(c > T::zero()) {
        return param("noise multiplier must be non-negative and clip norm positive");
    }
    if sigma == T::zero() {
        return Ok(u.to_vec());
    }
    let std = (sigma * c).as_f64();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(u
        .iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x + T::lit(std * z)
        })
        .collect())
}

/// Normalized weights `f1_s / (ece_s + ECE_FLOOR)`.
pub fn site_weights<T>(updates: &[SiteUpdate<T>]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return param("aggregation needs at least one update");
    }
    if updates.iter().any(|u| !(u.val_macro_f1 >= 0.0) || !(u.val_ece >= 0.0)) {
        return param("site quality scores must be non-negative");
    }
    let raw: Vec<f64> = updates.iter().map(|u| u.val_macro_f1 / (u.val_ece + ECE_FLOOR)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        // every site scored zero F1: fall back to a plain mean
        return Ok(vec![1.0 / updates.len() as f64; updates.len()]);
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Weighted combination of site deltas.
pub fn aggregate<T: Scalar>(updates: &[SiteUpdate<T>]) -> Result<Vec<T>> {
    let weights = site_weights(updates)?;
    let n = updates[0].delta.len();
    if updates.iter().any(|u| u.delta.len() != n) {
        return param("site updates differ in length");
    }
    let mut out = vec![T::zero(); n];
    for (u, w) in updates.iter().zip(&weights) {
        let w = T::lit(*w);
        for (o, x) in out.iter_mut().zip(&u.delta) {
            *o += w * *x;
        }
    }
    Ok(out)
}
