//! Pretraining and calibration losses with analytic gradients.

use crate::error::{param, Result};
use crate::num::Scalar;

/// Masked spectral modelling: mean L1 over the masked index set.
///
/// Returns the value and its gradient with respect to `x_hat`
/// (`sign(x_hat - x) / |Ω|` on Ω, zero elsewhere and at ties).
pub fn loss_msm<T: Scalar>(x: &[T], x_hat: &[T], mask: &[usize]) -> Result<(T, Vec<T>)> {
    if x.len() != x_hat.len() {
        return param("reconstruction shape mismatch");
    }
    let mut omega = mask.to_vec();
    omega.sort_unstable();
    omega.dedup();
    if omega.is_empty() {
        return param("mask must be non-empty");
    }
    if omega.last().is_some_and(|&i| i >= x.len()) {
        return param("mask index out of range");
    }
    let n = T::from_usize_lossy(omega.len());
    let mut grad = vec![T::zero(); x.len()];
    let mut total = T::zero();
    for &i in &omega {
        let d = x_hat[i] - x[i];
        total += d.abs();
        grad[i] = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((total / n, grad))
}

/// Result of [`loss_phase`].
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseLoss<T> {
    pub value: T,
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
    /// Increments dropped because an endpoint had zero magnitude.
    pub masked: usize,
}

fn wrap_pi<T: Scalar>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut y = x % two_pi;
    if y > T::PI() {
        y -= two_pi;
    } else if y <= -T::PI() {
        y += two_pi;
    }
    y
}

/// Phase-consistency loss between two latent sequences laid out as
/// `(time, channel, {re, im})`: the per-channel variance over time of the
/// difference of wrapped phase increments, averaged over channels.
///
/// Wrapping each increment into `(-π, π]` is the per-channel unwrap with a
/// jump threshold of π followed by differencing.
pub fn loss_phase<T: Scalar>(z_a: &[T], z_b: &[T], n_t: usize, n_s: usize) -> Result<PhaseLoss<T>> {
    if z_a.len() != z_b.len() || z_a.len() != n_t * n_s * 2 {
        return param("latent sequences must share shape (time, channel, 2)");
    }
    if n_t < 2 || n_s == 0 {
        return param("need at least two time steps and one channel");
    }
    let at = |z: &[T], t: usize, s: usize| (z[(t * n_s + s) * 2], z[(t * n_s + s) * 2 + 1]);
    let mut grad_a = vec![T::zero(); z_a.len()];
    let mut grad_b = vec![T::zero(); z_b.len()];
    let mut masked = 0;
    let mut value = T::zero();
    let inv_s = T::one() / T::from_usize_lossy(n_s);
    for s in 0..n_s {
        // d_t and the time steps it involves
        let mut incs: Vec<(usize, T)> = Vec::with_capacity(n_t - 1);
        for t in 0..n_t - 1 {
            let pts = [at(z_a, t, s), at(z_a, t + 1, s), at(z_b, t, s), at(z_b, t + 1, s)];
            if pts.iter().any(|&(re, im)| re == T::zero() && im == T::zero()) {
                masked += 1;
                continue;
            }
            let ph: Vec<T> = pts.iter().map(|&(re, im)| im.atan2(re)).collect();
            let d = wrap_pi(ph[1] - ph[0]) - wrap_pi(ph[3] - ph[2]);
            incs.push((t, d));
        }
        if incs.is_empty() {
            continue;
        }
        let n = T::from_usize_lossy(incs.len());
        let mean = incs.iter().map(|x| x.1).sum::<T>() / n;
        let var = incs.iter().map(|x| (x.1 - mean).powi(2)).sum::<T>() / n;
        value += var * inv_s;
        for &(t, d) in &incs {
            // dVar/dd_t = 2 (d_t - mean) / n
            let g = (d - mean) * T::lit(2.0) / n * inv_s;
            for (z, grad, sign) in [(z_a, &mut grad_a, T::one()), (z_b, &mut grad_b, -T::one())] {
                for (tt, w) in [(t + 1, T::one()), (t, -T::one())] {
                    let (re, im) = at(z, tt, s);
                    let r2 = re * re + im * im;
                    let k = (tt * n_s + s) * 2;
                    // dφ/dre = -im / r², dφ/dim = re / r²
                    grad[k] += g * sign * w * (-im / r2);
                    grad[k + 1] += g * sign * w * (re / r2);
                }
            }
        }
    }
    Ok(PhaseLoss { value, grad_a, grad_b, masked })
}

/// Result of [`loss_nce`].
#[derive(Clone, Debug, PartialEq)]
pub struct NceLoss<T> {
    pub value: T,
    pub grad_p: Vec<T>,
    pub grad_t: Vec<T>,
    pub grad_negatives: Vec<Vec<T>>,
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// InfoNCE of the positive `t` against `negatives`, with cosine similarity
/// scaled by `1 / tau_c`.
pub fn loss_nce<T: Scalar>(p: &[T], t: &[T], negatives: &[Vec<T>], tau_c: T) -> Result<NceLoss<T>> {
    if tau_c <= T::zero() {
        return param("contrastive temperature must be positive");
    }
    let d = p.len();
    if t.len() != d || negatives.iter().any(|n| n.len() != d) {
        return param("embedding dimensions differ");
    }
    let cands: Vec<&[T]> = std::iter::once(t).chain(negatives.iter().map(Vec::as_slice)).collect();
    let np = norm(p);
    if np == T::zero() || cands.iter().any(|c| norm(c) == T::zero()) {
        return param("zero embedding vector");
    }
    let cos: Vec<T> = cands.iter().map(|c| dot(p, c) / (np * norm(c))).collect();
    let logits: Vec<T> = cos.iter().map(|&c| c / tau_c).collect();
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let z: T = logits.iter().map(|&l| (l - m).exp()).sum();
    let value = -(logits[0] - m - z.ln());
    let probs: Vec<T> = logits.iter().map(|&l| (l - m).exp() / z).collect();

    let mut grad_p = vec![T::zero(); d];
    let mut grads_c: Vec<Vec<T>> = Vec::with_capacity(cands.len());
    for (j, c) in cands.iter().enumerate() {
        let g = (probs[j] - if j == 0 { T::one() } else { T::zero() }) / tau_c;
        let nc = norm(c);
        // ∂cos/∂p = c / (|p||c|) - cos p / |p|², symmetric for c
        for i in 0..d {
            grad_p[i] += g * (c[i] / (np * nc) - cos[j] * p[i] / (np * np));
        }
        grads_c.push((0..d).map(|i| g * (p[i] / (np * nc) - cos[j] * c[i] / (nc * nc))).collect());
    }
    let grad_t = grads_c.remove(0);
    Ok(NceLoss { value, grad_p, grad_t, grad_negatives: grads_c })
}

/// Component values of the pretraining objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PretrainParts<T> {
    pub msm: T,
    pub phase: T,
    pub nce: T,
}

/// `λ1 L_msm + λ2 L_phase + λ3 L_nce`; weights must be non-negative.
pub fn loss_pretrain<T: Scalar>(parts: PretrainParts<T>, lambda: [T; 3]) -> T {
    debug_assert!(lambda.iter().all(|&l| l >= T::zero()));
    lambda[0] * parts.msm + lambda[1] * parts.phase + lambda[2] * parts.nce
}

/// Mean temperature-scaled cross-entropy and its derivative in `T`:
/// `dV/dT = mean((E_p[f] - f_y) / T²)` with `p = softmax(f / T)`.
pub fn loss_calibrated_ce<T: Scalar>(logits: &[Vec<T>], labels: &[usize], temperature: T) -> Result<(T, T)> {
    if !(temperature > T::zero()) {
        return param("temperature must be positive");
    }
    if logits.is_empty() || logits.len() != labels.len() {
        return param("logits and labels must be non-empty and aligned");
    }
    let mut value = T::zero();
    let mut grad = T::zero();
    for (row, &y) in logits.iter().zip(labels) {
        if y >= row.len() {
            return param("label out of range");
        }
        let scaled: Vec<T> = row.iter().map(|&f| f / temperature).collect();
        let m = scaled.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z: T = scaled.iter().map(|&s| (s - m).exp()).sum();
        value += m + z.ln() - scaled[y];
        let expected: T = row.iter().zip(&scaled).map(|(&f, &s)| f * (s - m).exp() / z).sum();
        grad += (row[y] - expected) / (temperature * temperature);
    }
    let n = T::from_usize_lossy(labels.len());
    Ok((value / n, grad / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msm_single_scalar() {
        let (v, g) = loss_msm(&[0.0f64], &[2.0], &[0]).unwrap();
        assert_eq!((v, g[0]), (2.0, 1.0));
        assert_eq!(loss_msm(&[1.0f64, 2.0], &[1.0, 2.0], &[0, 1]).unwrap().0, 0.0);
        assert!(loss_msm(&[1.0f64], &[1.0], &[]).is_err());
    }

    #[test]
    fn phase_loss_ignores_global_rotation() {
        let z: Vec<f64> = (0..5 * 3 * 2).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0 + 0.1).collect();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rot: Vec<f64> = z
            .chunks(2)
            .flat_map(|p| [p[0] * c - p[1] * s, p[0] * s + p[1] * c])
            .collect();
        assert!(loss_phase(&z, &z, 5, 3).unwrap().value.abs() < 1e-24);
        assert!(loss_phase(&z, &rot, 5, 3).unwrap().value.abs() < 1e-20);
    }

    #[test]
    fn phase_loss_masks_zero_entries() {
        let mut z = vec![1.0f64; 4 * 2 * 2];
        z[2] = 0.0;
        z[3] = 0.0;
        let r = loss_phase(&z, &z, 4, 2).unwrap();
        assert_eq!(r.masked, 1);
    }

    #[test]
    fn nce_identical_negative_is_log_two() {
        let t = vec![0.3f64, -1.0, 2.0];
        let p = vec![1.0f64, 0.5, 0.2];
        let r = loss_nce(&p, &t, std::slice::from_ref(&t), 0.1).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-15);
        assert!(loss_nce(&p, &[0.0; 3], &[], 0.1).is_err());
    }

    #[test]
    fn nce_limit_to_zero() {
        let p = vec![1.0f64, 0.0, 0.0];
        let negs = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(loss_nce(&p, &p, &negs, 0.01).unwrap().value < 1e-40);
    }

    #[test]
    fn pretrain_weighting() {
        let parts = PretrainParts { msm: 0.5f64, phase: 0.2, nce: 1.0 };
        assert!((loss_pretrain(parts, [1.0, 0.3, 0.7]) - 1.26).abs() < 1e-15);
        assert_eq!(loss_pretrain(parts, [1.0, 0.0, 0.0]), 0.5);
        assert_eq!(loss_pretrain(PretrainParts::default(), [1.0f64, 0.3, 0.7]), 0.0);
    }

    #[test]
    fn calibrated_ce_cases() {
        let logits = vec![vec![1.5f64; 4]; 3];
        for t in [0.3, 1.0, 4.0] {
            assert!((loss_calibrated_ce(&logits, &[0, 2, 3], t).unwrap().0 - 4f64.ln()).abs() < 1e-14);
        }
        let logits = vec![vec![2.0f64, 0.5, -1.0]];
        let (v, _) = loss_calibrated_ce(&logits, &[1], 1.0).unwrap();
        let z: f64 = logits[0].iter().map(|x| x.exp()).sum();
        assert!((v - (z.ln() - 0.5)).abs() < 1e-14);
        assert!(loss_calibrated_ce(&logits, &[1], 0.0).is_err());
    }
}
