//! 8-bit fixed-point twin of the float encoder.
//!
//! Weights are symmetric per-tensor int8, accumulators are `i32`, and every
//! rescale is a `(mult, 31)` multiply-shift in `i128` with round-half-up.
//! Nonlinearities are 256-entry tables indexed by the int8 code (`a + 128`);
//! SiLU is a 33-knot piecewise-linear table. After the input is quantized
//! everything is integer arithmetic, so outputs are bit-identical on every
//! platform. Out-of-range results saturate and are counted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{gelu, neighbors, sigmoid, silu, Affine, Axis, FloatModel, Linear, ModelConfig, Part, Tap};
use crate::error::{param, Error, Result};
use crate::num::Scalar;
use crate::policy::argmax;
use crate::signal::Window;
use crate::zkp::circuit::Head;
use crate::zkp::field::Felt;

pub const BITS: u32 = 8;
pub const SHIFT: u32 = 31;
/// Softmax exponent table covers score differences in `[-EXP_RANGE, 0]`.
pub const EXP_RANGE: f64 = 8.0;
/// Value of `exp(0)` in the exponent table.
pub const EXP_ONE: i32 = 255;
pub const SILU_KNOTS: usize = 33;
/// Largest admissible table error as a fraction of the output range.
pub const LUT_ERROR_BOUND: f64 = 0.01;
/// Output scale of the abstain score: `u_q / 128`.
pub const ABSTAIN_ONE: i32 = 128;
/// Fractional bits kept in the pooled mean.
pub const POOL_FRAC: u32 = 16;

const TABLE: usize = 1 << BITS;

/// Grid step of a `bits`-bit table spanning `[lo, hi]`.
pub fn table_step(lo: f64, hi: f64, bits: u32) -> f64 {
    (hi - lo) / (1u64 << bits) as f64
}

/// Symmetric scale mapping `max_abs` to code 127.
pub fn scale_for(max_abs: f64) -> f64 {
    max_abs / 127.0
}

/// `round(x / d)`, ties up, for `d > 0`.
pub fn div_round(n: i64, d: i64) -> i64 {
    (2 * n + d).div_euclid(2 * d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub mult: i64,
}

impl Requant {
    pub fn new(m: f64) -> Result<Self> {
        let mult = (m * (1u64 << SHIFT) as f64).round();
        if !mult.is_finite() || mult.abs() >= 2f64.powi(62) {
            return Err(Error::Quantization(format!("rescale factor {m} not representable")));
        }
        Ok(Requant { mult: mult as i64 })
    }

    #[inline]
    pub fn apply(self, acc: i64, offset: i64) -> i64 {
        self.apply_frac(acc, offset, 0)
    }

    /// Rescales a value carrying `frac` extra fractional bits.
    #[inline]
    pub fn apply_frac(self, acc: i64, offset: i64, frac: u32) -> i64 {
        let shift = SHIFT + frac;
        let v = acc as i128 * self.mult as i128 + ((offset as i128) << frac) + (1i128 << (shift - 1));
        (v >> shift) as i64
    }
}

/// Saturation counters and table-visit masks collected by a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub saturations: u64,
    /// Per table, which codes were looked up. Only filled when enabled.
    pub visits: Option<Vec<Vec<bool>>>,
}

impl Diagnostics {
    pub fn tracking(n_tables: usize) -> Self {
        Diagnostics { saturations: 0, visits: Some(vec![vec![false; TABLE]; n_tables]) }
    }

    #[inline]
    fn sat8(&mut self, v: i64) -> i8 {
        if v > 127 {
            self.saturations += 1;
            127
        } else if v < -128 {
            self.saturations += 1;
            -128
        } else {
            v as i8
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLinear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<i8>,
    /// At the accumulator scale `w_scale * in_scale`.
    pub bias: Vec<i32>,
    pub rq: Requant,
    pub w_scale: f64,
}

fn quantize_weights(w: &[f64]) -> (Vec<i8>, f64) {
    let max = w.iter().fold(0f64, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { scale_for(max) } else { 1.0 };
    (w.iter().map(|v| (v / scale).round().clamp(-127.0, 127.0) as i8).collect(), scale)
}

fn to_i32(v: f64) -> Result<i32> {
    let r = v.round();
    if !(r.abs() < i32::MAX as f64 / 4.0) {
        return Err(Error::Quantization(format!("bias {v} overflows the accumulator")));
    }
    Ok(r as i32)
}

impl QLinear {
    pub fn quantize<T: Scalar>(l: &Linear<T>, in_scale: f64, out_scale: f64) -> Result<Self> {
        let w: Vec<f64> = l.w.iter().map(|v| v.as_f64()).collect();
        let (wq, w_scale) = quantize_weights(&w);
        let acc_scale = w_scale * in_scale;
        let bias = l.b.iter().map(|b| to_i32(b.as_f64() / acc_scale)).collect::<Result<_>>()?;
        Ok(QLinear { n_in: l.n_in, n_out: l.n_out, w: wq, bias, rq: Requant::new(acc_scale / out_scale)?, w_scale })
    }

    #[inline]
    pub fn acc(&self, x: &[i8], o: usize) -> i64 {
        let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
        row.iter().zip(x).map(|(&w, &v)| w as i32 * v as i32).sum::<i32>() as i64 + self.bias[o] as i64
    }

    pub fn apply_rows(&self, x: &[i8], diag: &mut Diagnostics) -> Vec<i8> {
        let rows = x.len() / self.n_in;
        let mut out = Vec::with_capacity(rows * self.n_out);
        for r in 0..rows {
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            for o in 0..self.n_out {
                out.push(diag.sat8(self.rq.apply(self.acc(xr, o), 0)));
            }
        }
        out
    }
}

/// Per-channel fixed-point affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAffine {
    pub mult: Vec<i64>,
    pub offset: Vec<i64>,
}

impl QAffine {
    pub fn quantize<T: Scalar>(a: &Affine<T>, in_scale: f64, out_scale: f64) -> Result<Self> {
        let one = (1u64 << SHIFT) as f64;
        let mut mult = Vec::new();
        let mut offset = Vec::new();
        for (g, b) in a.gamma.iter().zip(&a.beta) {
            mult.push(Requant::new(g.as_f64() * in_scale / out_scale)?.mult);
            let o = (b.as_f64() / out_scale * one).round();
            if !(o.abs() < 2f64.powi(62)) {
                return Err(Error::Quantization("affine offset not representable".into()));
            }
            offset.push(o as i64);
        }
        Ok(QAffine { mult, offset })
    }

    pub fn apply_rows(&self, x: &[i8], diag: &mut Diagnostics) -> Vec<i8> {
        let d = self.mult.len();
        x.iter()
            .enumerate()
            .map(|(i, &v)| diag.sat8(Requant { mult: self.mult[i % d] }.apply(v as i64, self.offset[i % d])))
            .collect()
    }
}

/// Which float function a table approximates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LutKind {
    Identity,
    Gelu,
    Silu,
    /// `exp(min(x, 0))`
    Exp,
    Sigmoid,
}

impl LutKind {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            LutKind::Identity => x,
            LutKind::Gelu => gelu(x),
            LutKind::Silu => silu(x),
            LutKind::Exp => x.min(0.0).exp(),
            LutKind::Sigmoid => sigmoid(x),
        }
    }
}

/// 256-entry table over the int8 input grid `code * in_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    pub kind: LutKind,
    pub in_step: f64,
    pub out_scale: f64,
    pub table: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutReport {
    pub name: String,
    pub max_error: f64,
    pub range: f64,
    /// `max_error / range`
    pub relative: f64,
    pub visited: usize,
}

impl Lut {
    pub fn input(&self, idx: usize) -> f64 {
        (idx as f64 - 128.0) * self.in_step
    }

    /// Exact table: each entry is the rounded function value, clamped to
    /// `[lo, hi]`.
    pub fn build(kind: LutKind, in_step: f64, out_scale: f64, lo: i32, hi: i32) -> Self {
        let table = (0..TABLE)
            .map(|i| ((kind.eval((i as f64 - 128.0) * in_step) / out_scale).round() as i64).clamp(lo as i64, hi as i64) as i32)
            .collect();
        Lut { kind, in_step, out_scale, table }
    }

    /// Piecewise-linear table through `knots` equally spaced exact points.
    pub fn piecewise(kind: LutKind, in_step: f64, out_scale: f64, knots: usize, lo: i32, hi: i32) -> Self {
        let span = (TABLE / (knots - 1)) as f64;
        let table = (0..TABLE)
            .map(|i| {
                let j = ((i as f64 / span).floor() as usize).min(knots - 2);
                let (x0, x1) = (j as f64 * span, (j + 1) as f64 * span);
                let f = |x: f64| kind.eval((x - 128.0) * in_step);
                let y = f(x0) + (f(x1) - f(x0)) * (i as f64 - x0) / (x1 - x0);
                ((y / out_scale).round() as i64).clamp(lo as i64, hi as i64) as i32
            })
            .collect();
        Lut { kind, in_step, out_scale, table }
    }

    #[inline]
    pub fn lookup(&self, code: i8) -> i32 {
        self.table[(code as i32 + 128) as usize]
    }

    /// Symmetric output scale covering `kind` over the whole input grid.
    pub fn covering_scale(kind: LutKind, in_step: f64) -> f64 {
        let max = (0..TABLE).map(|i| kind.eval((i as f64 - 128.0) * in_step).abs()).fold(0.0, f64::max);
        scale_for(max)
    }

    /// Output range of the function over the table's input domain.
    pub fn range(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..TABLE * 16 {
            let v = self.kind.eval((i as f64 / 16.0 - 128.0) * self.in_step);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }

    /// Largest `|table - f|` over the visited grid inputs.
    pub fn max_error(&self, visited: &[bool]) -> f64 {
        (0..TABLE)
            .filter(|&i| visited[i])
            .map(|i| (self.table[i] as f64 * self.out_scale - self.kind.eval(self.input(i))).abs())
            .fold(0.0, f64::max)
    }

    pub fn report(&self, name: &str, visited: &[bool]) -> LutReport {
        let max_error = self.max_error(visited);
        let range = self.range();
        LutReport {
            name: name.to_string(),
            max_error,
            range,
            relative: if range > 0.0 { max_error / range } else { 0.0 },
            visited: visited.iter().filter(|v| **v).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAttention {
    pub q: QLinear,
    pub k: QLinear,
    pub v: QLinear,
    /// Score difference to exponent-table code.
    pub score: Requant,
    pub o: QLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QBlock {
    pub norms: Vec<QAffine>,
    pub time: QAttention,
    pub freq: QAttention,
    pub gate: QLinear,
    pub up: QLinear,
    pub product: Requant,
    pub down: QLinear,
}

/// Table slots in [`QuantizedModel::luts`].
pub mod lut_id {
    pub const STEM_GELU: usize = 0;
    pub const EXP: usize = 1;
    pub const LATENT_GELU: usize = 2;
    pub const SIGMOID: usize = 3;
    pub const fn swish(block: usize) -> usize {
        4 + block
    }
}

pub fn lut_name(id: usize) -> String {
    match id {
        lut_id::STEM_GELU => "stem.gelu".into(),
        lut_id::EXP => "attention.exp".into(),
        lut_id::LATENT_GELU => "latent.gelu".into(),
        lut_id::SIGMOID => "abstain.sigmoid".into(),
        b => format!("block{}.swish", b - 4),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantMeta {
    pub calib_windows: usize,
    /// Fraction of calibration windows where float and fixed-point argmax agree.
    pub argmax_agreement: f64,
    /// Largest `|dequant(logits_q) - logits|` over the calibration windows.
    pub logit_bound: f64,
    pub luts: Vec<LutReport>,
    pub calib_saturations: u64,
}

/// Classification head in the exact integer form the circuit recomputes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QHead {
    pub head: Head,
    pub logit_scale: f64,
    pub abstain: QLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QBackbone {
    pub cfg: ModelConfig,
    pub input_scale: f64,
    pub stem_proj: QLinear,
    /// `n_in = kernel_t * kernel_f`, one row per channel.
    pub stem_dw: QLinear,
    pub blocks: Vec<QBlock>,
    pub pool_norm: QAffine,
    pub latent: QLinear,
    /// Scale of the latent codes fed to the head.
    pub latent_scale: f64,
    pub luts: Vec<Lut>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub backbone: QBackbone,
    pub head: QHead,
    pub meta: QuantMeta,
    pub(crate) hashes: super::serial::ModelHashes,
}

/// Fixed-point latent with its provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub z: Vec<i32>,
    pub t_win: u64,
    pub model_hash: Felt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantOutput {
    pub logits_q: Vec<i32>,
    /// Abstain-head score in units of 1/128.
    pub u_q: u32,
    pub latent: LatentSummary,
    pub saturations: u64,
}

impl QBackbone {
    fn lut(&self, id: usize, code: i8, diag: &mut Diagnostics) -> i32 {
        if let Some(v) = diag.visits.as_mut() {
            v[id][(code as i32 + 128) as usize] = true;
        }
        self.luts[id].lookup(code)
    }

    fn quantize_input<T: Scalar>(&self, w: &Window<T>, diag: &mut Diagnostics) -> Vec<i8> {
        w.data()
            .iter()
            .map(|x| {
                let v = (x.as_f64() / self.input_scale).round();
                diag.sat8(v.clamp(-1e9, 1e9) as i64)
            })
            .collect()
    }

    fn stem(&self, x: &[i8], n_t: usize, n_s: usize, diag: &mut Diagnostics) -> Vec<i8> {
        let d = self.cfg.d0;
        let (kf, taps) = (self.cfg.kernel_f, self.cfg.kernel_taps());
        let proj = self.stem_proj.apply_rows(x, diag);
        let (rt, rf) = ((self.cfg.kernel_t / 2) as isize, (kf / 2) as isize);
        let dw = &self.stem_dw;
        let mut h = vec![0i8; n_t * n_s * d];
        for t in 0..n_t {
            for s in 0..n_s {
                for c in 0..d {
                    let mut acc = dw.bias[c] as i64;
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
                            acc += dw.w[c * taps + tap] as i64 * proj[(tt as usize * n_s + ss as usize) * d + c] as i64;
                        }
                    }
                    let code = diag.sat8(dw.rq.apply(acc, 0));
                    h[(t * n_s + s) * d + c] = self.lut(lut_id::STEM_GELU, code, diag) as i8;
                }
            }
        }
        h
    }

    fn attention(&self, a: &QAttention, axis: Axis, n: &[i8], n_t: usize, n_s: usize, diag: &mut Diagnostics) -> Vec<i8> {
        let d = self.cfg.d0;
        let (q, k, v) = (a.q.apply_rows(n, diag), a.k.apply_rows(n, diag), a.v.apply_rows(n, diag));
        let mut mixed = vec![0i8; n.len()];
        let mut scores: Vec<i64> = Vec::new();
        let mut num = vec![0i64; d];
        for t in 0..n_t {
            for s in 0..n_s {
                let p = t * n_s + s;
                let (start, count, stride) = neighbors(axis, &self.cfg, n_t, n_s, t, s);
                let qp = &q[p * d..(p + 1) * d];
                scores.clear();
                scores.extend((0..count).map(|j| {
                    let kp = &k[(start + j * stride) * d..][..d];
                    qp.iter().zip(kp).map(|(&a, &b)| a as i32 * b as i32).sum::<i32>() as i64
                }));
                let max = *scores.iter().max().expect("non-empty neighbourhood");
                num.iter_mut().for_each(|x| *x = 0);
                let mut total = 0i64;
                for (j, &sc) in scores.iter().enumerate() {
                    let code = a.score.apply(sc - max, 0).clamp(-128, 0) as i8;
                    let e = self.lut(lut_id::EXP, code, diag) as i64;
                    total += e;
                    let vp = &v[(start + j * stride) * d..][..d];
                    for (acc, &x) in num.iter_mut().zip(vp) {
                        *acc += e * x as i64;
                    }
                }
                for (c, &acc) in num.iter().enumerate() {
                    mixed[p * d + c] = div_round(acc, total) as i8;
                }
            }
        }
        a.o.apply_rows(&mixed, diag)
    }

    fn sublayer(&self, b: usize, part: Part, h: &mut [i8], n_t: usize, n_s: usize, diag: &mut Diagnostics) {
        let blk = &self.blocks[b];
        let n = blk.norms[part.index()].apply_rows(h, diag);
        let y = match part {
            Part::Time => self.attention(&blk.time, Axis::Time, &n, n_t, n_s, diag),
            Part::Subcarrier => self.attention(&blk.freq, Axis::Subcarrier, &n, n_t, n_s, diag),
            Part::Ffn => {
                let g = blk.gate.apply_rows(&n, diag);
                let u = blk.up.apply_rows(&n, diag);
                let p: Vec<i8> = g
                    .iter()
                    .zip(&u)
                    .map(|(&g, &u)| {
                        let sw = self.lut(lut_id::swish(b), g, diag) as i64;
                        diag.sat8(blk.product.apply(sw * u as i64, 0))
                    })
                    .collect();
                blk.down.apply_rows(&p, diag)
            }
        };
        for (x, y) in h.iter_mut().zip(y) {
            *x = diag.sat8(*x as i64 + y as i64);
        }
    }

    /// Integer backbone up to the latent codes.
    pub fn latent<T: Scalar>(&self, w: &Window<T>, diag: &mut Diagnostics) -> Result<Vec<i8>> {
        if w.n_s() == 0 || w.data().len() != w.n_t() * w.n_s() * 2 {
            return param("window shape mismatch");
        }
        let (n_t, n_s, d) = (w.n_t(), w.n_s(), self.cfg.d0);
        let x = self.quantize_input(w, diag);
        let mut h = self.stem(&x, n_t, n_s, diag);
        for b in 0..self.blocks.len() {
            for part in Part::ALL {
                self.sublayer(b, part, &mut h, n_t, n_s, diag);
            }
        }
        let positions = (n_t * n_s) as i64;
        let mut sums = vec![0i64; d];
        for (i, &v) in h.iter().enumerate() {
            sums[i % d] += v as i64;
        }
        let pn: Vec<i8> = sums
            .iter()
            .enumerate()
            .map(|(c, &s)| {
                let mean = div_round(s << POOL_FRAC, positions);
                let rq = Requant { mult: self.pool_norm.mult[c] };
                diag.sat8(rq.apply_frac(mean, self.pool_norm.offset[c], POOL_FRAC))
            })
            .collect();
        let pre = self.latent.apply_rows(&pn, diag);
        Ok(pre.iter().map(|&c| self.lut(lut_id::LATENT_GELU, c, diag) as i8).collect())
    }
}

impl QHead {
    fn abstain_score(&self, backbone: &QBackbone, z: &[i8], diag: &mut Diagnostics) -> u32 {
        let code = diag.sat8(self.abstain.rq.apply(self.abstain.acc(z, 0), 0));
        backbone.lut(lut_id::SIGMOID, code, diag).clamp(0, ABSTAIN_ONE) as u32
    }
}

impl QuantizedModel {
    pub fn cfg(&self) -> &ModelConfig {
        &self.backbone.cfg
    }

    pub fn h_theta(&self) -> Felt {
        self.hashes.h_theta
    }

    pub fn forward_with<T: Scalar>(&self, w: &Window<T>, diag: &mut Diagnostics) -> Result<QuantOutput> {
        let z = self.backbone.latent(w, diag)?;
        let z32: Vec<i32> = z.iter().map(|&v| v as i32).collect();
        let logits_q = self.head.head.logits(&z32);
        let u_q = self.head.abstain_score(&self.backbone, &z, diag);
        Ok(QuantOutput {
            logits_q,
            u_q,
            latent: LatentSummary { z: z32, t_win: w.t_win, model_hash: self.h_theta() },
            saturations: diag.saturations,
        })
    }

    /// Dequantized logits.
    pub fn dequantize(&self, logits_q: &[i32]) -> Vec<f64> {
        logits_q.iter().map(|&l| l as f64 * self.head.logit_scale).collect()
    }
}

pub fn forward_quantized<T: Scalar>(qm: &QuantizedModel, w: &Window<T>) -> Result<QuantOutput> {
    qm.forward_with(w, &mut Diagnostics::default())
}

/// Largest absolute value seen at each tap.
fn observe_ranges<T: Scalar>(m: &FloatModel<T>, calib: &[Window<T>]) -> Result<BTreeMap<Tap, f64>> {
    let mut ranges: BTreeMap<Tap, f64> = BTreeMap::new();
    for w in calib {
        m.forward_observed(w, &mut |tap, vals| {
            let r = ranges.entry(tap).or_insert(0.0);
            *r = vals.iter().fold(*r, |acc, v| acc.max(v.as_f64().abs()));
        })?;
    }
    Ok(ranges)
}

/// Quantizes `m` to `bits`-bit fixed point with activation ranges taken
/// from `calib`, then certifies every table against the bound and records
/// float/fixed agreement on the same windows.
pub fn quantize_model<T: Scalar>(m: &FloatModel<T>, bits: u32, calib: &[Window<T>]) -> Result<QuantizedModel> {
    if bits != BITS {
        return param(format!("only {BITS}-bit quantization is supported"));
    }
    if calib.is_empty() {
        return param("calibration set is empty");
    }
    m.validate()?;
    let ranges = observe_ranges(m, calib)?;
    let scale = |tap: Tap| -> Result<f64> {
        let r = ranges.get(&tap).copied().unwrap_or(0.0);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Quantization(format!("zero activation spread at {tap:?}")));
        }
        Ok(scale_for(r))
    };
    let cfg = m.cfg;
    let s_in = scale(Tap::Input)?;
    let s_proj = scale(Tap::StemProj)?;
    let s_conv = scale(Tap::StemConv)?;
    let s_res = scale(Tap::Residual)?.max(Lut::covering_scale(LutKind::Gelu, s_conv));
    let dw = Linear { n_in: cfg.kernel_taps(), n_out: cfg.d0, w: m.stem_dw.clone(), b: m.stem_bias.clone() };

    let exp_step = EXP_RANGE / 128.0;
    let mut luts = vec![
        Lut::build(LutKind::Gelu, s_conv, s_res, -128, 127),
        Lut::build(LutKind::Exp, exp_step, 1.0 / EXP_ONE as f64, 0, EXP_ONE),
    ];
    let mut blocks = Vec::new();
    let mut swish = Vec::new();
    for (b, blk) in m.blocks.iter().enumerate() {
        let mut norms = Vec::new();
        let mut attn = Vec::new();
        for part in Part::ALL {
            let s_n = scale(Tap::Norm(b, part))?;
            norms.push(QAffine::quantize(&blk.norms[part.index()], s_res, s_n)?);
            if part == Part::Ffn {
                continue;
            }
            let a = if part == Part::Time { &blk.time } else { &blk.freq };
            let (s_q, s_k, s_v) = (scale(Tap::Query(b, part))?, scale(Tap::Key(b, part))?, scale(Tap::Value(b, part))?);
            let inv_sqrt = 1.0 / (cfg.d0 as f64).sqrt();
            attn.push(QAttention {
                q: QLinear::quantize(&a.q, s_n, s_q)?,
                k: QLinear::quantize(&a.k, s_n, s_k)?,
                v: QLinear::quantize(&a.v, s_n, s_v)?,
                score: Requant::new(s_q * s_k * inv_sqrt / exp_step)?,
                o: QLinear::quantize(&a.o, s_v, s_res)?,
            });
        }
        let s_n3 = scale(Tap::Norm(b, Part::Ffn))?;
        let (s_g, s_u, s_p) = (scale(Tap::Gate(b))?, scale(Tap::Up(b))?, scale(Tap::Product(b))?);
        let s_sw = Lut::covering_scale(LutKind::Silu, s_g);
        swish.push(Lut::piecewise(LutKind::Silu, s_g, s_sw, SILU_KNOTS, -128, 127));
        let freq = attn.pop().expect("two attention parts");
        let time = attn.pop().expect("two attention parts");
        blocks.push(QBlock {
            norms,
            time,
            freq,
            gate: QLinear::quantize(&blk.gate, s_n3, s_g)?,
            up: QLinear::quantize(&blk.up, s_n3, s_u)?,
            product: Requant::new(s_sw * s_u / s_p)?,
            down: QLinear::quantize(&blk.down, s_p, s_res)?,
        });
    }
    let (s_pn, s_lp, s_ab) = (scale(Tap::PoolNorm)?, scale(Tap::LatentPre)?, scale(Tap::AbstainPre)?);
    scale(Tap::Latent)?;
    let s_z = Lut::covering_scale(LutKind::Gelu, s_lp);
    luts.push(Lut::build(LutKind::Gelu, s_lp, s_z, -128, 127));
    luts.push(Lut::build(LutKind::Sigmoid, s_ab, 1.0 / ABSTAIN_ONE as f64, 0, ABSTAIN_ONE));
    luts.extend(swish);

    let backbone = QBackbone {
        cfg,
        input_scale: s_in,
        stem_proj: QLinear::quantize(&m.stem_proj, s_in, s_proj)?,
        stem_dw: QLinear::quantize(&dw, s_proj, s_conv)?,
        blocks,
        pool_norm: QAffine::quantize(&m.pool_norm, s_res, s_pn)?,
        latent: QLinear::quantize(&m.latent, s_pn, s_lp)?,
        latent_scale: s_z,
        luts,
    };
    let hq = QLinear::quantize(&m.head, s_z, 1.0)?;
    let head = Head {
        n_classes: cfg.n_classes,
        d_lat: cfg.d_lat,
        weights: hq.w.iter().map(|&v| v as i32).collect(),
        bias: hq.bias.clone(),
    };
    head.validate()?;
    let qhead = QHead { head, logit_scale: hq.w_scale * s_z, abstain: QLinear::quantize(&m.abstain, s_z, s_ab)? };

    let mut qm = QuantizedModel {
        backbone,
        head: qhead,
        meta: QuantMeta { calib_windows: calib.len(), argmax_agreement: 0.0, logit_bound: 0.0, luts: Vec::new(), calib_saturations: 0 },
        hashes: Default::default(),
    };
    let mut diag = Diagnostics::tracking(qm.backbone.luts.len());
    let mut agree = 0usize;
    let mut bound = 0f64;
    for w in calib {
        let float = m.forward(w)?;
        let fixed = qm.forward_with(w, &mut diag)?;
        let deq = qm.dequantize(&fixed.logits_q);
        if argmax(&deq) == argmax(&float.logits) {
            agree += 1;
        }
        for (a, b) in deq.iter().zip(&float.logits) {
            bound = bound.max((a - b.as_f64()).abs());
        }
    }
    let visits = diag.visits.take().expect("tracking enabled");
    let reports: Vec<LutReport> = qm.backbone.luts.iter().enumerate().map(|(i, l)| l.report(&lut_name(i), &visits[i])).collect();
    if let Some(bad) = reports.iter().find(|r| r.relative > LUT_ERROR_BOUND) {
        return Err(Error::Quantization(format!(
            "table {} error {:.4} exceeds {LUT_ERROR_BOUND} of its range",
            bad.name, bad.relative
        )));
    }
    qm.meta = QuantMeta {
        calib_windows: calib.len(),
        argmax_agreement: agree as f64 / calib.len() as f64,
        logit_bound: bound,
        luts: reports,
        calib_saturations: diag.saturations,
    };
    qm.hashes = super::serial::hashes(&qm);
    Ok(qm)
}
