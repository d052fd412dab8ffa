//! Temperature fitting, calibration metrics, coverage-risk analysis and the
//! registered operating threshold.

pub mod surrogate;

use serde::{Deserialize, Serialize};

use crate::encoder::losses::loss_calibrated_ce;
use crate::error::{param, Error, Result};
use crate::num::Scalar;
use crate::policy::to_fixed;
use crate::zkp::sponge::hash_bytes;
use crate::zkp::Felt;

pub use surrogate::ConfidenceTable;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ECE_BINS: usize = 15;

/// Search interval for `log T`.
pub const LOG_T_RANGE: (f64, f64) = (-3.0, 3.0);

/// Mean temperature-scaled negative log-likelihood.
pub fn nll<T: Scalar>(logits: &[Vec<T>], labels: &[usize], temperature: T) -> Result<T> {
    loss_calibrated_ce(logits, labels, temperature).map(|(v, _)| v)
}

/// Temperature minimizing the NLL over `log T in [-3, 3]`, by golden-section
/// search (the NLL is unimodal in `log T`).
pub fn fit_temperature<T: Scalar>(logits: &[Vec<T>], labels: &[usize]) -> Result<T> {
    if logits.is_empty() || logits.len() != labels.len() {
        return param("logits and labels must be non-empty and aligned");
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return param("temperature fitting needs at least two classes present");
    }
    let f = |s: f64| -> Result<f64> { Ok(nll(logits, labels, T::lit(s.exp()))?.as_f64()) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG_T_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    // endpoints and T = 1 guard against flat or boundary optima
    let mut best = ((a + b) / 2.0, f((a + b) / 2.0)?);
    for s in [LOG_T_RANGE.0, LOG_T_RANGE.1, 0.0] {
        let v = f(s)?;
        if v < best.1 {
            best = (s, v);
        }
    }
    Ok(T::lit(best.0.exp()))
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax_rows<T: Scalar>(logits: &[Vec<T>], temperature: T) -> Vec<Vec<T>> {
    logits
        .iter()
        .map(|row| {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b / temperature));
            let e: Vec<T> = row.iter().map(|&z| (z / temperature - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Temperature-scaled max-softmax confidence per row.
pub fn max_softmax<T: Scalar>(logits: &[Vec<T>], temperature: T) -> Vec<T> {
    softmax_rows(logits, temperature)
        .into_iter()
        .map(|p| p.into_iter().fold(T::zero(), T::max))
        .collect()
}

/// Energy score `-T log Σ exp(z / T)`; lower means more in-distribution.
pub fn energy_score<T: Scalar>(logits: &[T], temperature: T) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b / temperature));
    let s: T = logits.iter().map(|&z| (z / temperature - m).exp()).sum();
    -temperature * (m + s.ln())
}

/// Probability that a random positive outscores a random negative (ties count half).
pub fn auroc<T: Scalar>(positive: &[T], negative: &[T]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return param("AUROC needs both positive and negative scores");
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|x| (x.as_f64(), true))
        .chain(negative.iter().map(|x| (x.as_f64(), false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum with averaged ranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Per-bin statistics of a reliability diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width bins on `[0, 1]`; the last bin is closed on the right.
pub fn reliability_bins<T: Scalar>(confidences: &[T], correct: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if confidences.is_empty() || confidences.len() != correct.len() {
        return param("ECE needs non-empty aligned inputs");
    }
    if bins == 0 {
        return param("bin count must be positive");
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0f64; bins];
    let mut acc = vec![0f64; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let c = c.as_f64();
        if !(0.0..=1.0).contains(&c) {
            return param(format!("confidence {c} outside [0, 1]"));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        acc[b] += ok as u8 as f64;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_confidence: conf[b] / n,
                accuracy: acc[b] / n,
            }
        })
        .collect())
}

/// Expected calibration error `Σ_b (n_b / N) |acc_b - conf_b|`.
pub fn ece<T: Scalar>(confidences: &[T], correct: &[bool], bins: usize) -> Result<f64> {
    let n = confidences.len() as f64;
    Ok(reliability_bins(confidences, correct, bins)?
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum())
}

/// Coverage `C(τ)` and selective risk `R(τ)`; `R = 0` when nothing is accepted.
pub fn coverage_risk<T: Scalar>(confidences: &[T], correct: &[bool], tau: T) -> (f64, f64) {
    let n = confidences.len();
    let mut accepted = 0usize;
    let mut errors = 0usize;
    for (&u, &ok) in confidences.iter().zip(correct) {
        if u >= tau {
            accepted += 1;
            errors += !ok as usize;
        }
    }
    if accepted == 0 || n == 0 {
        return (0.0, 0.0);
    }
    (accepted as f64 / n as f64, errors as f64 / accepted as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    /// Classes absent from both predictions and labels (scored 0).
    pub absent: Vec<usize>,
}

/// Macro-averaged F1 from a confusion count.
pub fn macro_f1_report(predictions: &[usize], labels: &[usize], n_classes: usize) -> F1Report {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            if p < n_classes {
                fp[p] += 1;
            }
            fn_[y] += 1;
        }
    }
    f1_from_counts(&tp, &fp, &fn_)
}

fn f1_from_counts(tp: &[usize], fp: &[usize], fn_: &[usize]) -> F1Report {
    let mut per_class = Vec::with_capacity(tp.len());
    let mut absent = Vec::new();
    for c in 0..tp.len() {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            absent.push(c);
            per_class.push(0.0);
        } else {
            per_class.push(2.0 * tp[c] as f64 / denom as f64);
        }
    }
    let macro_f1 = if per_class.is_empty() { 0.0 } else { per_class.iter().sum::<f64>() / per_class.len() as f64 };
    F1Report { macro_f1, per_class, absent }
}

pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    macro_f1_report(predictions, labels, n_classes).macro_f1
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub coverage: f64,
    pub risk: f64,
    pub f1: f64,
    pub utility: f64,
}

/// Coverage-risk curve over ascending thresholds; coverage is non-increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageRiskCurve {
    pub points: Vec<CurvePoint>,
}

impl CoverageRiskCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,coverage,risk,f1,utility\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{},{}\n", p.tau, p.coverage, p.risk, p.f1, p.utility));
        }
        s
    }
}

/// Threshold maximizing `U(τ) = F1(τ) - λ R(τ)` over the observed confidences
/// and 0, with F1 and R on the accepted subset, `U = 0` at zero coverage and
/// ties resolved toward the smallest τ.
///
/// Thresholds are swept from high to low so each sample enters the accepted
/// confusion counts once.
pub fn select_threshold<T: Scalar>(
    confidences: &[T],
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    lambda: f64,
) -> Result<(f64, CoverageRiskCurve)> {
    let n = confidences.len();
    if n != predictions.len() || n != labels.len() {
        return param("confidences, predictions and labels must align");
    }
    if lambda < 0.0 {
        return param("utility weight must be non-negative");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].as_f64().total_cmp(&confidences[a].as_f64()));
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut accepted = 0usize;
    let mut errors = 0usize;
    let mut points = Vec::new();
    let mut i = 0;
    let push = |points: &mut Vec<CurvePoint>, tau: f64, accepted: usize, errors: usize, tp: &[usize], fp: &[usize], fn_: &[usize]| {
        let (coverage, risk, f1, utility) = if accepted == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let f1 = f1_from_counts(tp, fp, fn_).macro_f1;
            let risk = errors as f64 / accepted as f64;
            (accepted as f64 / n as f64, risk, f1, f1 - lambda * risk)
        };
        points.push(CurvePoint { tau, coverage, risk, f1, utility });
    };
    while i < n {
        let tau = confidences[order[i]].as_f64();
        while i < n && confidences[order[i]].as_f64() == tau {
            let s = order[i];
            let (p, y) = (predictions[s], labels[s]);
            if y >= n_classes || p >= n_classes {
                return param("class index out of range");
            }
            accepted += 1;
            if p == y {
                tp[y] += 1;
            } else {
                errors += 1;
                fp[p] += 1;
                fn_[y] += 1;
            }
            i += 1;
        }
        push(&mut points, tau, accepted, errors, &tp, &fp, &fn_);
    }
    if points.last().is_none_or(|p| p.tau > 0.0) {
        push(&mut points, 0.0, accepted, errors, &tp, &fp, &fn_);
    }
    points.reverse();
    // ascending τ; strict improvement keeps the smallest τ among ties
    let mut best = 0;
    for (j, p) in points.iter().enumerate() {
        if p.utility > points[best].utility {
            best = j;
        }
    }
    let tau = points[best].tau;
    Ok((tau, CoverageRiskCurve { points }))
}

/// Frozen calibration outcome bound into statements through `tau_fp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    temperature: f64,
    tau_reg: f64,
    lambda: f64,
    ece_bins: usize,
    dataset_checksum: String,
    model_hash: Felt,
}

impl CalibrationProfile {
    pub fn new(
        temperature: f64,
        tau_reg: f64,
        lambda: f64,
        ece_bins: usize,
        dataset_checksum: impl Into<String>,
        model_hash: Felt,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return param("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&tau_reg) {
            return param("threshold must lie in [0, 1]");
        }
        if ece_bins == 0 || lambda < 0.0 {
            return param("invalid ECE bins or utility weight");
        }
        Ok(CalibrationProfile {
            temperature,
            tau_reg,
            lambda,
            ece_bins,
            dataset_checksum: dataset_checksum.into(),
            model_hash,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn tau_reg(&self) -> f64 {
        self.tau_reg
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ece_bins(&self) -> usize {
        self.ece_bins
    }

    pub fn dataset_checksum(&self) -> &str {
        &self.dataset_checksum
    }

    pub fn model_hash(&self) -> Felt {
        self.model_hash
    }

    /// Fixed-point threshold: `u_q < tau_fp` exactly when `u_q / 128 < tau_reg`.
    pub fn tau_fp(&self) -> u32 {
        to_fixed(self.tau_reg).expect("validated at construction")
    }

    /// A new profile with a different threshold (and therefore digest).
    pub fn with_threshold(&self, tau_reg: f64) -> Result<Self> {
        CalibrationProfile::new(
            self.temperature,
            tau_reg,
            self.lambda,
            self.ece_bins,
            self.dataset_checksum.clone(),
            self.model_hash,
        )
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn digest(&self) -> Felt {
        hash_bytes(self.canonical_json().as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: CalibrationProfile = serde_json::from_str(text)?;
        CalibrationProfile::new(p.temperature, p.tau_reg, p.lambda, p.ece_bins, p.dataset_checksum, p.model_hash)
            .map_err(|e| Error::Format(e.to_string()))
    }
}
