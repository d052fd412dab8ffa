//! Float reference encoder.
//!
//! A convolutional stem (1x1 projection of re/im to `d0` channels, then a
//! depthwise `k_t x k_f` convolution over time x subcarrier and GELU), `N`
//! blocks of {local time attention, grouped subcarrier attention, SwiGLU
//! feed-forward}, each pre-normalized by a per-channel affine map fitted
//! from data, then mean pooling, a latent projection with GELU and the
//! classification and abstain heads.
//!
//! Activations are position-major: `h[(t * n_s + s) * d + c]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::num::Scalar;
use crate::signal::Window;

/// Initial gain of the residual-branch output projections; small values
/// start every block close to the identity.
pub const RESIDUAL_GAIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub d0: usize,
    pub d_lat: usize,
    pub n_classes: usize,
    /// Local time-attention span: frames `t - w_t/2 ..= t + w_t/2 - 1`.
    pub w_t: usize,
    /// Subcarrier attention group size.
    pub group: usize,
    /// Depthwise stem kernel extent along time.
    pub kernel_t: usize,
    /// Depthwise stem kernel extent along subcarriers.
    pub kernel_f: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { n_blocks: 2, d0: 16, d_lat: 32, n_classes: 5, w_t: 16, group: 8, kernel_t: 7, kernel_f: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=64).contains(&self.d0) {
            return param(format!("d0 = {} outside 8..=64", self.d0));
        }
        if !(1..=4).contains(&self.n_blocks) {
            return param(format!("{} blocks outside 1..=4", self.n_blocks));
        }
        if self.d_lat == 0 || self.n_classes < 2 {
            return param("latent must be non-empty and the head needs two classes");
        }
        if self.w_t == 0 || self.group == 0 {
            return param("attention spans must be positive");
        }
        if self.kernel_t.is_multiple_of(2) || self.kernel_f.is_multiple_of(2) || self.kernel_t > 9 || self.kernel_f > 9 {
            return param("stem kernel extents must be odd and at most 9");
        }
        Ok(())
    }

    pub fn kernel_taps(&self) -> usize {
        self.kernel_t * self.kernel_f
    }

    pub fn hidden(&self) -> usize {
        2 * self.d0
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + T::lit(0.044715) * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear { n_in, n_out, w: vec![T::zero(); n_in * n_out], b: vec![T::zero(); n_out] }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(n_in)`, zero bias.
    pub fn random(n_in: usize, n_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let sd = gain / (n_in as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| T::lit(sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
            .collect();
        Linear { n_in, n_out, w, b: vec![T::zero(); n_out] }
    }

    pub fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            *y = row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.b[o];
        }
    }

    /// Applies the map to every `n_in`-wide row of `x`.
    pub fn apply_rows(&self, x: &[T]) -> Vec<T> {
        let rows = x.len() / self.n_in;
        let mut out = vec![T::zero(); rows * self.n_out];
        for r in 0..rows {
            self.apply(&x[r * self.n_in..(r + 1) * self.n_in], &mut out[r * self.n_out..(r + 1) * self.n_out]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }
}

/// Per-channel `gamma * x + beta`, standing in for layer normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn identity(d: usize) -> Self {
        Affine { gamma: vec![T::one(); d], beta: vec![T::zero(); d] }
    }

    pub fn apply_rows(&self, x: &[T]) -> Vec<T> {
        let d = self.gamma.len();
        x.iter().enumerate().map(|(i, &v)| self.gamma[i % d] * v + self.beta[i % d]).collect()
    }

    /// Standardizes each channel of the rows in `samples`.
    pub fn fit(d: usize, samples: &[&[T]]) -> Self {
        let mut sum = vec![0f64; d];
        let mut sq = vec![0f64; d];
        let mut n = 0usize;
        for s in samples {
            for (i, v) in s.iter().enumerate() {
                let v = v.as_f64();
                sum[i % d] += v;
                sq[i % d] += v * v;
            }
            n += s.len() / d;
        }
        let n = n.max(1) as f64;
        let mut a = Affine::identity(d);
        for c in 0..d {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            let g = 1.0 / (var + 1e-5).sqrt();
            a.gamma[c] = T::lit(g);
            a.beta[c] = T::lit(-mean * g);
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Time,
    Subcarrier,
}

/// Positions a query attends to, as `(start, count, stride)` over the
/// flattened `t * n_s + s` index.
pub fn neighbors(axis: Axis, cfg: &ModelConfig, n_t: usize, n_s: usize, t: usize, s: usize) -> (usize, usize, usize) {
    match axis {
        Axis::Time => {
            let lo = t.saturating_sub(cfg.w_t / 2);
            let hi = (t + cfg.w_t - cfg.w_t / 2).min(n_t);
            (lo * n_s + s, hi - lo, n_s)
        }
        Axis::Subcarrier => {
            let lo = s / cfg.group * cfg.group;
            let hi = (lo + cfg.group).min(n_s);
            (t * n_s + lo, hi - lo, 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Scalar> Attention<T> {
    fn random(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            q: Linear::random(d, d, 1.0, rng),
            k: Linear::random(d, d, 1.0, rng),
            v: Linear::random(d, d, 1.0, rng),
            o: Linear::random(d, d, RESIDUAL_GAIN, rng),
        }
    }

    /// Softmax attention of every position over its `axis` neighbours,
    /// before the output projection.
    pub fn mix(&self, axis: Axis, cfg: &ModelConfig, q: &[T], k: &[T], v: &[T], n_t: usize, n_s: usize) -> Vec<T> {
        let d = self.q.n_out;
        let inv = T::one() / T::from_usize_lossy(d).sqrt();
        let mut out = vec![T::zero(); n_t * n_s * d];
        let mut scores = Vec::new();
        for t in 0..n_t {
            for s in 0..n_s {
                let p = t * n_s + s;
                let (start, count, stride) = neighbors(axis, cfg, n_t, n_s, t, s);
                let qp = &q[p * d..(p + 1) * d];
                scores.clear();
                scores.extend((0..count).map(|j| {
                    let kp = &k[(start + j * stride) * d..][..d];
                    qp.iter().zip(kp).map(|(&a, &b)| a * b).sum::<T>() * inv
                }));
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    total += *sc;
                }
                let op = &mut out[p * d..(p + 1) * d];
                for (j, &e) in scores.iter().enumerate() {
                    let vp = &v[(start + j * stride) * d..][..d];
                    for (o, &x) in op.iter_mut().zip(vp) {
                        *o += e / total * x;
                    }
                }
            }
        }
        out
    }

    /// Projections, mixing and output projection of already-normalized rows.
    pub fn forward(&self, axis: Axis, cfg: &ModelConfig, x: &[T], n_t: usize, n_s: usize) -> Vec<T> {
        let (q, k, v) = (self.q.apply_rows(x), self.k.apply_rows(x), self.v.apply_rows(x));
        self.o.apply_rows(&self.mix(axis, cfg, &q, &k, &v, n_t, n_s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block<T> {
    pub norms: [Affine<T>; 3],
    pub time: Attention<T>,
    pub freq: Attention<T>,
    pub gate: Linear<T>,
    pub up: Linear<T>,
    pub down: Linear<T>,
}

/// The three residual sublayers of a block, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    Time,
    Subcarrier,
    Ffn,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Time, Part::Subcarrier, Part::Ffn];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Named activation sites, observed during calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tap {
    Input,
    StemProj,
    StemConv,
    /// Residual stream after the stem and after every sublayer.
    Residual,
    Norm(usize, Part),
    Query(usize, Part),
    Key(usize, Part),
    Value(usize, Part),
    Gate(usize),
    Up(usize),
    Swish(usize),
    Product(usize),
    PoolNorm,
    LatentPre,
    Latent,
    AbstainPre,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward<T> {
    pub logits: Vec<T>,
    pub u_raw: T,
    /// Pooled pre-head latent.
    pub latent: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatModel<T> {
    pub cfg: ModelConfig,
    pub stem_proj: Linear<T>,
    /// `d0 x kernel_t x kernel_f`, time-major within a channel.
    pub stem_dw: Vec<T>,
    pub stem_bias: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub pool_norm: Affine<T>,
    pub latent: Linear<T>,
    pub head: Linear<T>,
    pub abstain: Linear<T>,
}

pub type Observer<'a, T> = &'a mut dyn FnMut(Tap, &[T]);

fn ignore<T>(_: Tap, _: &[T]) {}

impl<T: Scalar> FloatModel<T> {
    /// Seeded random weights with identity normalizations.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d0;
        let stem_proj = Linear::random(2, d, 1.0, &mut rng);
        let stem_dw = Linear::<T>::random(cfg.kernel_taps(), d, 1.0, &mut rng).w;
        let blocks = (0..cfg.n_blocks)
            .map(|_| Block {
                norms: [Affine::identity(d), Affine::identity(d), Affine::identity(d)],
                time: Attention::random(d, &mut rng),
                freq: Attention::random(d, &mut rng),
                gate: Linear::random(d, cfg.hidden(), 1.0, &mut rng),
                up: Linear::random(d, cfg.hidden(), 1.0, &mut rng),
                down: Linear::random(cfg.hidden(), d, RESIDUAL_GAIN, &mut rng),
            })
            .collect();
        Ok(FloatModel {
            cfg,
            stem_proj,
            stem_dw,
            stem_bias: vec![T::zero(); d],
            blocks,
            pool_norm: Affine::identity(d),
            latent: Linear::random(d, cfg.d_lat, 1.0, &mut rng),
            head: Linear::random(cfg.d_lat, cfg.n_classes, 0.1, &mut rng),
            abstain: Linear::random(cfg.d_lat, 1, 0.1, &mut rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        let d = self.cfg.d0;
        let linears = self.blocks.iter().flat_map(|b| {
            [&b.time.q, &b.time.k, &b.time.v, &b.time.o, &b.freq.q, &b.freq.k, &b.freq.v, &b.freq.o, &b.gate, &b.up, &b.down]
        });
        let finite = linears.chain([&self.stem_proj, &self.latent, &self.head, &self.abstain]).all(Linear::is_finite)
            && self.stem_dw.iter().chain(&self.stem_bias).all(|v| v.is_finite());
        if !finite {
            return param("model weights must be finite");
        }
        if self.blocks.len() != self.cfg.n_blocks
            || self.stem_dw.len() != d * self.cfg.kernel_taps()
            || self.head.n_in != self.cfg.d_lat
            || self.head.n_out != self.cfg.n_classes
        {
            return param("model tensors disagree with the configuration");
        }
        Ok(())
    }

    fn check_window(&self, w: &Window<T>) -> Result<()> {
        if w.n_s() == 0 || w.data().len() != w.n_t() * w.n_s() * 2 {
            return param("window shape mismatch");
        }
        Ok(())
    }

    pub fn forward(&self, w: &Window<T>) -> Result<Forward<T>> {
        self.forward_observed(w, &mut ignore)
    }

    pub fn forward_observed(&self, w: &Window<T>, obs: Observer<'_, T>) -> Result<Forward<T>> {
        self.check_window(w)?;
        let (n_t, n_s) = (w.n_t(), w.n_s());
        let mut h = self.stem(w, obs);
        for b in 0..self.blocks.len() {
            for part in Part::ALL {
                self.sublayer(b, part, &mut h, n_t, n_s, obs);
            }
        }
        Ok(self.readout(&self.pool(&h), obs))
    }

    pub fn stem(&self, w: &Window<T>, obs: Observer<'_, T>) -> Vec<T> {
        obs(Tap::Input, w.data());
        let (n_t, n_s, d) = (w.n_t(), w.n_s(), self.cfg.d0);
        let (kf, taps) = (self.cfg.kernel_f, self.cfg.kernel_taps());
        let proj = self.stem_proj.apply_rows(w.data());
        obs(Tap::StemProj, &proj);
        let (rt, rf) = ((self.cfg.kernel_t / 2) as isize, (kf / 2) as isize);
        let mut conv = vec![T::zero(); n_t * n_s * d];
        for t in 0..n_t {
            for s in 0..n_s {
                let out = &mut conv[(t * n_s + s) * d..][..d];
                out.copy_from_slice(&self.stem_bias);
                for dt in -rt..=rt {
                    let tt = t as isize + dt;
                    if tt < 0 || tt >= n_t as isize {
                        continue;
                    }
                    for ds in -rf..=rf {
                        let ss = s as isize + ds;
                        if ss < 0 || ss >= n_s as isize {
                            continue;
                        }
                        let tap = ((dt + rt) as usize) * kf + (ds + rf) as usize;
                        let src = &proj[(tt as usize * n_s + ss as usize) * d..][..d];
                        for c in 0..d {
                            out[c] += self.stem_dw[c * taps + tap] * src[c];
                        }
                    }
                }
            }
        }
        obs(Tap::StemConv, &conv);
        let h: Vec<T> = conv.into_iter().map(gelu).collect();
        obs(Tap::Residual, &h);
        h
    }

    /// One pre-normalized residual sublayer, in place.
    pub fn sublayer(&self, b: usize, part: Part, h: &mut [T], n_t: usize, n_s: usize, obs: Observer<'_, T>) {
        let blk = &self.blocks[b];
        let n = blk.norms[part.index()].apply_rows(h);
        obs(Tap::Norm(b, part), &n);
        let y = match part {
            Part::Time | Part::Subcarrier => {
                let (attn, axis) = if part == Part::Time { (&blk.time, Axis::Time) } else { (&blk.freq, Axis::Subcarrier) };
                let (q, k, v) = (attn.q.apply_rows(&n), attn.k.apply_rows(&n), attn.v.apply_rows(&n));
                obs(Tap::Query(b, part), &q);
                obs(Tap::Key(b, part), &k);
                obs(Tap::Value(b, part), &v);
                attn.o.apply_rows(&attn.mix(axis, &self.cfg, &q, &k, &v, n_t, n_s))
            }
            Part::Ffn => {
                let g = blk.gate.apply_rows(&n);
                let u = blk.up.apply_rows(&n);
                obs(Tap::Gate(b), &g);
                obs(Tap::Up(b), &u);
                let sw: Vec<T> = g.into_iter().map(silu).collect();
                obs(Tap::Swish(b), &sw);
                let p: Vec<T> = sw.iter().zip(&u).map(|(&a, &b)| a * b).collect();
                obs(Tap::Product(b), &p);
                blk.down.apply_rows(&p)
            }
        };
        for (x, y) in h.iter_mut().zip(y) {
            *x += y;
        }
        obs(Tap::Residual, h);
    }

    /// Mean over all positions.
    pub fn pool(&self, h: &[T]) -> Vec<T> {
        let d = self.cfg.d0;
        let n = T::from_usize_lossy(h.len() / d);
        let mut p = vec![T::zero(); d];
        for (i, &v) in h.iter().enumerate() {
            p[i % d] += v;
        }
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Pool normalization, latent projection and both heads.
    pub fn readout(&self, pooled: &[T], obs: Observer<'_, T>) -> Forward<T> {
        let pn = self.pool_norm.apply_rows(pooled);
        obs(Tap::PoolNorm, &pn);
        self.readout_normalized(&pn, obs)
    }

    /// [`Self::readout`] from already pool-normalized features.
    pub fn readout_normalized(&self, pn: &[T], obs: Observer<'_, T>) -> Forward<T> {
        let mut pre = vec![T::zero(); self.cfg.d_lat];
        self.latent.apply(pn, &mut pre);
        obs(Tap::LatentPre, &pre);
        let latent: Vec<T> = pre.into_iter().map(gelu).collect();
        obs(Tap::Latent, &latent);
        let mut logits = vec![T::zero(); self.cfg.n_classes];
        self.head.apply(&latent, &mut logits);
        let mut u = [T::zero()];
        self.abstain.apply(&latent, &mut u);
        obs(Tap::AbstainPre, &u);
        Forward { logits, u_raw: u[0], latent }
    }

    /// Pooled backbone features (before the pool normalization).
    pub fn pooled(&self, w: &Window<T>) -> Result<Vec<T>> {
        self.check_window(w)?;
        let mut h = self.stem(w, &mut ignore);
        for b in 0..self.blocks.len() {
            for part in Part::ALL {
                self.sublayer(b, part, &mut h, w.n_t(), w.n_s(), &mut ignore);
            }
        }
        Ok(self.pool(&h))
    }

    /// Rescales the stem convolution, then fits every normalization affine
    /// (and the pool normalization) to standardize its input over
    /// `windows`, layer by layer.
    pub fn fit_norms(&mut self, windows: &[Window<T>]) -> Result<()> {
        if windows.is_empty() {
            return param("normalization statistics need at least one window");
        }
        windows.iter().try_for_each(|w| self.check_window(w))?;
        let d = self.cfg.d0;
        let taps = self.cfg.kernel_taps();
        let mut conv: Vec<Vec<T>> = Vec::with_capacity(windows.len());
        for w in windows {
            self.stem(w, &mut |tap, v| {
                if tap == Tap::StemConv {
                    conv.push(v.to_vec())
                }
            });
        }
        let views: Vec<&[T]> = conv.iter().map(Vec::as_slice).collect();
        let unit = Affine::fit(d, &views);
        for c in 0..d {
            let g = unit.gamma[c];
            self.stem_dw[c * taps..(c + 1) * taps].iter_mut().for_each(|w| *w *= g);
            self.stem_bias[c] = self.stem_bias[c] * g + unit.beta[c];
        }
        let mut states: Vec<Vec<T>> = windows.iter().map(|w| self.stem(w, &mut ignore)).collect();
        for b in 0..self.blocks.len() {
            for part in Part::ALL {
                let views: Vec<&[T]> = states.iter().map(Vec::as_slice).collect();
                self.blocks[b].norms[part.index()] = Affine::fit(d, &views);
                for (h, w) in states.iter_mut().zip(windows) {
                    self.sublayer(b, part, h, w.n_t(), w.n_s(), &mut ignore);
                }
            }
        }
        let pooled: Vec<Vec<T>> = states.iter().map(|h| self.pool(h)).collect();
        let views: Vec<&[T]> = pooled.iter().map(Vec::as_slice).collect();
        self.pool_norm = Affine::fit(d, &views);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(seed: u64, n_s: usize) -> Window<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..64 * n_s * 2).map(|_| StandardNormal.sample(&mut rng)).collect();
        Window::new(data, 64, n_s, 0, "A", 0).unwrap()
    }

    #[test]
    fn zero_window_with_zero_head_ties_at_class_zero() {
        let mut m = FloatModel::<f64>::new(ModelConfig::default(), 1).unwrap();
        m.head = Linear::zeros(32, 5);
        let out = m.forward(&Window::zeros(64, 30).unwrap()).unwrap();
        assert!(out.logits.iter().all(|&l| l == out.logits[0]));
        assert_eq!(crate::policy::argmax(&out.logits), 0);
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let m = FloatModel::<f64>::new(ModelConfig::default(), 3).unwrap();
        let w = window(5, 30);
        let a = m.forward(&w).unwrap();
        assert_eq!(a, m.forward(&w).unwrap());
        assert!(a.logits.iter().all(|l| l.is_finite()));
        assert_eq!(a.latent.len(), 32);
    }

    #[test]
    fn grouped_attention_is_equivariant_within_a_group() {
        let cfg = ModelConfig::default();
        let m = FloatModel::<f64>::new(cfg, 11).unwrap();
        let (n_t, n_s, d) = (64, 16, cfg.d0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..n_t * n_s * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
        let permuted = |v: &[f64]| {
            let mut out = v.to_vec();
            for t in 0..n_t {
                for (dst, &src) in perm.iter().enumerate() {
                    out[(t * n_s + dst) * d..][..d].copy_from_slice(&v[(t * n_s + src) * d..][..d]);
                }
            }
            out
        };
        let attn = &m.blocks[0].freq;
        let y = attn.forward(Axis::Subcarrier, &cfg, &x, n_t, n_s);
        let y_perm = attn.forward(Axis::Subcarrier, &cfg, &permuted(&x), n_t, n_s);
        for (a, b) in permuted(&y).iter().zip(&y_perm) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn time_neighbourhood_is_clipped_at_the_edges() {
        let cfg = ModelConfig::default();
        assert_eq!(neighbors(Axis::Time, &cfg, 64, 30, 0, 2), (2, 8, 30));
        assert_eq!(neighbors(Axis::Time, &cfg, 64, 30, 20, 0), (12 * 30, 16, 30));
        assert_eq!(neighbors(Axis::Time, &cfg, 64, 30, 63, 0), (55 * 30, 9, 30));
        assert_eq!(neighbors(Axis::Subcarrier, &cfg, 64, 30, 1, 29), (30 + 24, 6, 1));
    }

    #[test]
    fn fitted_norms_standardize_their_inputs() {
        let mut m = FloatModel::<f64>::new(ModelConfig::default(), 4).unwrap();
        let ws: Vec<_> = (0..4).map(|i| window(i, 30)).collect();
        m.fit_norms(&ws).unwrap();
        let mut seen = Vec::new();
        for w in &ws {
            m.forward_observed(w, &mut |tap, v| {
                if tap == Tap::Norm(1, Part::Ffn) {
                    seen.extend_from_slice(v)
                }
            })
            .unwrap();
        }
        let d = 16;
        for c in 0..d {
            let xs: Vec<f64> = seen.iter().skip(c).step_by(d).copied().collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-3, "channel {c}: {mean} {var}");
        }
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
