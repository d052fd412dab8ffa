//! Monotone margin-to-confidence lookup used by the verifiable path.
//!
//! The confidence of a window is `u(m) = 1 / (1 + (K - 1) exp(-m s / T))`
//! where `m` is the integer gap between the two largest quantized logits,
//! `s` the logit dequantization scale and `T` the fitted temperature. For
//! `K = 2` this is exactly the temperature-scaled max-softmax; for larger
//! `K` it is the max-softmax of the best-vs-runner-up pair with the
//! remaining classes pinned at the runner-up, a lower bound on it.
//!
//! `u_q = floor(128 u)` is tabulated as inclusive margin intervals
//! `[lo[v], hi[v]]`, one per `v in 0..=128`. The table, not the float
//! formula, defines `u_q`, so native inference and circuit agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::CONF_SCALE;

/// Largest representable margin (24-bit range checks in the circuit).
pub const MAX_MARGIN: u32 = (1 << 24) - 1;

/// `(lo, hi)` marking a confidence level no margin maps to.
pub const EMPTY_ENTRY: (u32, u32) = (MAX_MARGIN, 0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTable {
    pub n_classes: usize,
    pub temperature: f64,
    pub logit_scale: f64,
    pub lo: Vec<u32>,
    pub hi: Vec<u32>,
}

fn u_float(m: u32, n_classes: usize, scale_over_t: f64) -> f64 {
    1.0 / (1.0 + (n_classes as f64 - 1.0) * (-(m as f64) * scale_over_t).exp())
}

fn u_q_float(m: u32, n_classes: usize, scale_over_t: f64) -> u32 {
    ((CONF_SCALE as f64 * u_float(m, n_classes, scale_over_t)).floor() as u32).min(CONF_SCALE)
}

impl ConfidenceTable {
    pub fn build(n_classes: usize, temperature: f64, logit_scale: f64) -> Result<Self> {
        if n_classes < 2 || n_classes > CONF_SCALE as usize {
            return Err(Error::Parameter(format!("unsupported class count {n_classes}")));
        }
        if !(temperature > 0.0 && temperature.is_finite() && logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::Parameter("temperature and logit scale must be positive".into()));
        }
        let k = scale_over_t(logit_scale, temperature);
        let levels = CONF_SCALE as usize + 1;
        // first[v]: smallest margin with u_q >= v (MAX_MARGIN + 1 if none)
        let mut first = vec![0u32; levels + 1];
        for v in 1..levels {
            let (mut a, mut b) = (first[v - 1], MAX_MARGIN + 1);
            while a < b {
                let mid = a + (b - a) / 2;
                if u_q_float(mid, n_classes, k) >= v as u32 {
                    b = mid;
                } else {
                    a = mid + 1;
                }
            }
            let m = a;
            first[v] = m;
        }
        first[levels] = MAX_MARGIN + 1;
        let mut lo = Vec::with_capacity(levels);
        let mut hi = Vec::with_capacity(levels);
        for v in 0..levels {
            if first[v] < first[v + 1] && first[v] <= MAX_MARGIN {
                lo.push(first[v]);
                hi.push(first[v + 1] - 1);
            } else {
                lo.push(EMPTY_ENTRY.0);
                hi.push(EMPTY_ENTRY.1);
            }
        }
        Ok(ConfidenceTable { n_classes, temperature, logit_scale, lo, hi })
    }

    /// `u_q` for a non-negative integer margin.
    pub fn lookup(&self, margin: i64) -> Result<u32> {
        if margin < 0 || margin > MAX_MARGIN as i64 {
            return Err(Error::Encoding(format!("margin {margin} outside table range")));
        }
        let m = margin as u32;
        self.lo
            .iter()
            .zip(&self.hi)
            .position(|(&lo, &hi)| lo <= m && m <= hi)
            .map(|v| v as u32)
            .ok_or_else(|| Error::Encoding(format!("margin {margin} not covered")))
    }

    /// `(u_q, margin)` for a vector of quantized logits.
    pub fn confidence(&self, logits_q: &[i32]) -> Result<(u32, i64)> {
        let margin = top2_margin(logits_q)?;
        Ok((self.lookup(margin)?, margin))
    }

    /// Float confidence the table was built from.
    pub fn u_float(&self, margin: i64) -> f64 {
        u_float(margin.max(0) as u32, self.n_classes, scale_over_t(self.logit_scale, self.temperature))
    }
}

fn scale_over_t(logit_scale: f64, temperature: f64) -> f64 {
    logit_scale / temperature
}

/// Gap between the largest and second-largest entries.
pub fn top2_margin(logits: &[i32]) -> Result<i64> {
    if logits.len() < 2 {
        return Err(Error::Parameter("need at least two logits".into()));
    }
    let best = crate::policy::argmax(logits);
    let second = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, &x)| x)
        .max()
        .unwrap();
    Ok(logits[best] as i64 - second as i64)
}
