//! Synthetic CSI windows: generation, standardization, augmentations and
//! threat-model perturbations.
//!
//! Windows are `T x S x 2` tensors (frames, subcarriers, re/im) stored
//! row-major. Every operation is a pure function of its inputs and seed.

mod dataset;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::num::Scalar;

pub use dataset::{load_dataset, save_dataset, split_checksum, Dataset, Manifest, SplitMeta};

/// Window lengths the pipeline accepts.
pub const WINDOW_LENGTHS: [usize; 3] = [64, 96, 128];

/// Doppler bin of each class, 3 bins apart (cycles per window).
pub const DOPPLER_BINS: [usize; 10] = [2, 5, 8, 11, 14, 17, 20, 23, 26, 29];

pub const ZONES: [&str; 3] = ["A", "B", "C"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window<T> {
    data: Vec<T>,
    n_t: usize,
    n_s: usize,
    pub t_win: u64,
    pub zone: String,
    pub label: usize,
}

impl<T: Scalar> Window<T> {
    pub fn new(data: Vec<T>, n_t: usize, n_s: usize, t_win: u64, zone: impl Into<String>, label: usize) -> Result<Self> {
        if !WINDOW_LENGTHS.contains(&n_t) {
            return param(format!("window length {n_t} not in {WINDOW_LENGTHS:?}"));
        }
        if n_s == 0 || data.len() != n_t * n_s * 2 {
            return param(format!("data length {} does not match {n_t}x{n_s}x2", data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return param("window contains non-finite samples");
        }
        Ok(Window { data, n_t, n_s, t_win, zone: zone.into(), label })
    }

    pub fn zeros(n_t: usize, n_s: usize) -> Result<Self> {
        Window::new(vec![T::zero(); n_t * n_s * 2], n_t, n_s, 0, ZONES[0], 0)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    #[inline]
    pub fn index(&self, t: usize, s: usize) -> usize {
        (t * self.n_s + s) * 2
    }

    /// `(re, im)` at frame `t`, subcarrier `s`.
    #[inline]
    pub fn at(&self, t: usize, s: usize) -> (T, T) {
        let i = self.index(t, s);
        (self.data[i], self.data[i + 1])
    }

    /// Same metadata, new samples (shape and finiteness re-checked).
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Window::new(data, self.n_t, self.n_s, self.t_win, self.zone.clone(), self.label)
    }

    pub fn energy(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Window<U> {
        Window {
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
            n_t: self.n_t,
            n_s: self.n_s,
            t_win: self.t_win,
            zone: self.zone.clone(),
            label: self.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_windows: usize,
    pub n_t: usize,
    pub n_s: usize,
    pub n_classes: usize,
    pub n_paths: usize,
    /// `f64::INFINITY` disables noise (serialized as `null`, or omitted).
    #[serde(with = "snr_serde", default = "snr_serde::noiseless")]
    pub snr_db: f64,
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn noiseless() -> f64 {
        f64::INFINITY
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { seed: 7, n_windows: 400, n_t: 64, n_s: 30, n_classes: 5, n_paths: 4, snr_db: 10.0 }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_windows == 0 || self.n_s == 0 || self.n_paths == 0 {
            return param("dataset dimensions must be positive");
        }
        if !WINDOW_LENGTHS.contains(&self.n_t) {
            return param(format!("window length {} not in {WINDOW_LENGTHS:?}", self.n_t));
        }
        if self.n_classes < 2 || self.n_classes > DOPPLER_BINS.len() {
            return param(format!("class count must lie in 2..={}", DOPPLER_BINS.len()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return param("SNR must be a number or +inf");
        }
        Ok(())
    }
}

/// Independent per-purpose RNG stream derived from a seed.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates `n_windows` labelled windows. Class `k` moves half of the
/// multipath components (at least one) at Doppler bin `DOPPLER_BINS[k]`;
/// the remaining components are static.
pub fn generate_dataset<T: Scalar>(spec: &DatasetSpec) -> Result<Vec<Window<T>>> {
    spec.validate()?;
    let mut labels: Vec<usize> = (0..spec.n_windows).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng_for(spec.seed, 0));
    let n_moving = (spec.n_paths / 2).max(1);
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = rng_for(spec.seed, 1 + i as u64);
            let zone = ZONES[rng.random_range(0..ZONES.len())];
            let f = DOPPLER_BINS[label] as f64 / spec.n_t as f64;
            let paths: Vec<(f64, f64, f64, bool)> = (0..spec.n_paths)
                .map(|p| {
                    let moving = p < n_moving;
                    let amp = if moving { uniform(&mut rng, 0.6, 1.0) } else { uniform(&mut rng, 0.3, 1.0) };
                    let delay = uniform(&mut rng, 0.0, 0.1);
                    let phase = uniform(&mut rng, 0.0, std::f64::consts::TAU);
                    (amp, delay, phase, moving)
                })
                .collect();
            let mut data = vec![0f64; spec.n_t * spec.n_s * 2];
            for t in 0..spec.n_t {
                for s in 0..spec.n_s {
                    let (mut re, mut im) = (0.0, 0.0);
                    for &(amp, delay, phase, moving) in &paths {
                        let doppler = if moving { std::f64::consts::TAU * f * t as f64 } else { 0.0 };
                        let ang = phase + doppler - std::f64::consts::TAU * delay * s as f64;
                        re += amp * ang.cos();
                        im += amp * ang.sin();
                    }
                    data[(t * spec.n_s + s) * 2] = re;
                    data[(t * spec.n_s + s) * 2 + 1] = im;
                }
            }
            if spec.snr_db.is_finite() {
                let power = data.iter().map(|x| x * x).sum::<f64>() / (data.len() / 2) as f64;
                let sigma = (power / 10f64.powf(spec.snr_db / 10.0) / 2.0).sqrt();
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
                for x in data.iter_mut() {
                    *x += noise.sample(&mut rng);
                }
            }
            Window::new(data.into_iter().map(T::lit).collect(), spec.n_t, spec.n_s, i as u64, zone, label)
        })
        .collect()
}

/// Per-(subcarrier, channel) mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub n_s: usize,
    /// Indexed `s * 2 + channel`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Moments over every frame of every window (training split only).
    pub fn fit<T: Scalar>(windows: &[Window<T>]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return param("cannot fit statistics on no windows");
        };
        let n_s = first.n_s;
        if windows.iter().any(|w| w.n_s != n_s) {
            return param("windows disagree on subcarrier count");
        }
        let mut sum = vec![0f64; n_s * 2];
        let mut count = 0usize;
        for w in windows {
            for (i, x) in w.data.iter().enumerate() {
                sum[i % (n_s * 2)] += x.as_f64();
            }
            count += w.n_t;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0f64; n_s * 2];
        for w in windows {
            for (i, x) in w.data.iter().enumerate() {
                let d = x.as_f64() - mean[i % (n_s * 2)];
                var[i % (n_s * 2)] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        Ok(Standardization { n_s, mean, std })
    }
}

/// `(x - mean) / std` per subcarrier and channel.
pub fn standardize<T: Scalar>(w: &Window<T>, stats: &Standardization) -> Result<Window<T>> {
    if stats.n_s != w.n_s || stats.mean.len() != w.n_s * 2 || stats.std.len() != w.n_s * 2 {
        return param("statistics do not match the window's subcarriers");
    }
    if let Some(i) = stats.std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateStatistics(format!("zero std at subcarrier {}", i / 2)));
    }
    let k = w.n_s * 2;
    let data = w
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - T::lit(stats.mean[i % k])) / T::lit(stats.std[i % k]))
        .collect();
    w.with_data(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub mask_ratio: f64,
    pub phase_ramp_rad_per_frame: f64,
    pub reverb_kernel_len: usize,
    pub power_jitter_db: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { mask_ratio: 0.15, phase_ramp_rad_per_frame: 0.01, reverb_kernel_len: 7, power_jitter_db: 1.5 }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec { mask_ratio: 0.0, phase_ramp_rad_per_frame: 0.0, reverb_kernel_len: 0, power_jitter_db: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return param("mask ratio must lie in [0, 1]");
        }
        if self.reverb_kernel_len > 9 {
            return param("reverberation kernel longer than 9 taps");
        }
        if !self.phase_ramp_rad_per_frame.is_finite() || !self.power_jitter_db.is_finite() {
            return param("augmentation parameters must be finite");
        }
        Ok(())
    }
}

/// Exponentially decaying random reverberation taps; the direct path is 1.
pub fn reverb_taps(len: usize, seed: u64) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut rng = rng_for(seed, 0x7265_7665_7262);
    let decay = (len as f64 / 2.0).max(0.5);
    (0..len)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                let g: f64 = StandardNormal.sample(&mut rng);
                0.3 * g * (-(j as f64) / decay).exp()
            }
        })
        .collect()
}

/// Subcarriers zeroed by the spectral mask: `floor(ratio * S)` of them.
pub fn masked_subcarriers(n_s: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let count = (ratio * n_s as f64 + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n_s).collect();
    idx.shuffle(&mut rng_for(seed, 0x6d61_736b));
    let mut chosen = idx[..count.min(n_s)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Reverberation, phase ramp, power jitter, then spectral masking.
pub fn augment<T: Scalar>(w: &Window<T>, a: &AugmentSpec, seed: u64) -> Result<Window<T>> {
    a.validate()?;
    let (n_t, n_s) = (w.n_t, w.n_s);
    let mut data: Vec<f64> = w.data.iter().map(|x| x.as_f64()).collect();
    let taps = reverb_taps(a.reverb_kernel_len, seed);
    if taps.len() > 1 {
        let src = data.clone();
        for t in 0..n_t {
            for s in 0..n_s {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, h) in taps.iter().enumerate().take(t + 1) {
                    let k = ((t - j) * n_s + s) * 2;
                    re += h * src[k];
                    im += h * src[k + 1];
                }
                let k = (t * n_s + s) * 2;
                data[k] = re;
                data[k + 1] = im;
            }
        }
    }
    if a.phase_ramp_rad_per_frame != 0.0 {
        for t in 0..n_t {
            let (c, sn) = ((a.phase_ramp_rad_per_frame * t as f64).cos(), (a.phase_ramp_rad_per_frame * t as f64).sin());
            for s in 0..n_s {
                let k = (t * n_s + s) * 2;
                let (re, im) = (data[k], data[k + 1]);
                data[k] = re * c - im * sn;
                data[k + 1] = re * sn + im * c;
            }
        }
    }
    if a.power_jitter_db != 0.0 {
        let gain = 10f64.powf(a.power_jitter_db / 20.0);
        data.iter_mut().for_each(|x| *x *= gain);
    }
    for s in masked_subcarriers(n_s, a.mask_ratio, seed) {
        for t in 0..n_t {
            let k = (t * n_s + s) * 2;
            data[k] = 0.0;
            data[k + 1] = 0.0;
        }
    }
    w.with_data(data.into_iter().map(T::lit).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Actuation,
    JitterDrop,
    Drift,
    ReplayMosaic,
    Jamming,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 5] = [
        PerturbKind::Actuation,
        PerturbKind::JitterDrop,
        PerturbKind::Drift,
        PerturbKind::ReplayMosaic,
        PerturbKind::Jamming,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbKind::Actuation => "actuation",
            PerturbKind::JitterDrop => "jitter_drop",
            PerturbKind::Drift => "drift",
            PerturbKind::ReplayMosaic => "replay_mosaic",
            PerturbKind::Jamming => "jamming",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown perturbation kind {s:?}")))
    }
}

/// Drift slope at intensity 1, in radians per frame.
pub const DRIFT_RAD_PER_FRAME: f64 = 0.02;

/// Mixing weight of the archived window in a replay mosaic.
pub fn replay_alpha(intensity: f64) -> f64 {
    intensity.min(1.0) * 0.5
}

/// Fraction of frames dropped by `jitter_drop` for a uniform draw `u` in
/// `[0, 1)`: 10-30% at intensity 1, scaled linearly and capped at 90%.
pub fn drop_fraction(intensity: f64, u: f64) -> f64 {
    (intensity * (0.1 + 0.2 * u)).min(0.9)
}

/// Threat-model transform. `past` is the archived window mixed in by
/// [`PerturbKind::ReplayMosaic`] and ignored otherwise.
pub fn perturb<T: Scalar>(
    w: &Window<T>,
    kind: PerturbKind,
    intensity: f64,
    seed: u64,
    past: Option<&Window<T>>,
) -> Result<Window<T>> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return param("intensity must be finite and non-negative");
    }
    if intensity == 0.0 {
        return Ok(w.clone());
    }
    let (n_t, n_s) = (w.n_t, w.n_s);
    let mut rng = rng_for(seed, 0x7065_7274);
    let mut data: Vec<f64> = w.data.iter().map(|x| x.as_f64()).collect();
    let rms = (data.iter().map(|x| x * x).sum::<f64>() / data.len() as f64).sqrt().max(1e-12);
    match kind {
        PerturbKind::Actuation => {
            // slow structured interference: one cycle of a smooth waveform
            // per window with a smooth subcarrier profile
            let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt = rng.random_range(-0.2..0.2);
            for t in 0..n_t {
                let env = intensity * rms * (std::f64::consts::TAU * t as f64 / n_t as f64 + phase0).cos();
                for s in 0..n_s {
                    let th = tilt * s as f64;
                    let k = (t * n_s + s) * 2;
                    data[k] += env * th.cos();
                    data[k + 1] += env * th.sin();
                }
            }
        }
        PerturbKind::JitterDrop => {
            let frac = drop_fraction(intensity, rng.random::<f64>());
            let n_drop = ((frac * n_t as f64).round() as usize).min(n_t - 2);
            // endpoints are kept so every dropped frame has neighbours
            let mut frames: Vec<usize> = (1..n_t - 1).collect();
            frames.shuffle(&mut rng);
            let mut dropped = vec![false; n_t];
            for &t in &frames[..n_drop] {
                dropped[t] = true;
            }
            let src = data.clone();
            for t in 0..n_t {
                if !dropped[t] {
                    continue;
                }
                let prev = (0..t).rev().find(|&i| !dropped[i]).unwrap();
                let next = (t + 1..n_t).find(|&i| !dropped[i]).unwrap();
                let a = (t - prev) as f64 / (next - prev) as f64;
                for k in 0..n_s * 2 {
                    data[t * n_s * 2 + k] = (1.0 - a) * src[prev * n_s * 2 + k] + a * src[next * n_s * 2 + k];
                }
            }
        }
        PerturbKind::Drift => {
            let slope = intensity * DRIFT_RAD_PER_FRAME;
            for t in 0..n_t {
                let (c, sn) = ((slope * t as f64).cos(), (slope * t as f64).sin());
                for s in 0..n_s {
                    let k = (t * n_s + s) * 2;
                    let (re, im) = (data[k], data[k + 1]);
                    data[k] = re * c - im * sn;
                    data[k + 1] = re * sn + im * c;
                }
            }
        }
        PerturbKind::ReplayMosaic => {
            let Some(old) = past else {
                return param("replay mosaic needs an archived window");
            };
            if old.n_t != n_t || old.n_s != n_s {
                return param("archived window shape differs");
            }
            let alpha = replay_alpha(intensity);
            for (x, o) in data.iter_mut().zip(&old.data) {
                *x = (1.0 - alpha) * *x + alpha * o.as_f64();
            }
        }
        PerturbKind::Jamming => {
            let width = 3.min(n_s);
            let start = rng.random_range(0..=n_s - width);
            let noise = Normal::new(0.0, intensity * rms).map_err(|e| Error::Parameter(e.to_string()))?;
            let n_bursts = rng.random_range(1..=3);
            for _ in 0..n_bursts {
                let len = rng.random_range(n_t / 16..=n_t / 4);
                let t0 = rng.random_range(0..=n_t - len);
                for t in t0..t0 + len {
                    for s in start..start + width {
                        let k = (t * n_s + s) * 2;
                        data[k] += noise.sample(&mut rng);
                        data[k + 1] += noise.sample(&mut rng);
                    }
                }
            }
        }
    }
    w.with_data(data.into_iter().map(T::lit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec { seed: 7, n_windows: 100, n_t: 128, n_s: 30, n_classes: 5, n_paths: 4, snr_db: 10.0 }
    }

    #[test]
    fn classes_are_balanced_and_deterministic() {
        let a: Vec<Window<f64>> = generate_dataset(&spec()).unwrap();
        let b: Vec<Window<f64>> = generate_dataset(&spec()).unwrap();
        assert_eq!(a.len(), 100);
        for k in 0..5 {
            let n = a.iter().filter(|w| w.label == k).count();
            assert!((19..=21).contains(&n), "class {k}: {n}");
        }
        assert!(a.iter().zip(&b).all(|(x, y)| x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits())));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = spec();
        s.n_s = 0;
        assert!(generate_dataset::<f64>(&s).is_err());
        let mut s = spec();
        s.n_classes = 1;
        assert!(generate_dataset::<f64>(&s).is_err());
    }

    #[test]
    fn standardize_identity_and_constant_cases() {
        let w = Window::new(vec![3.0f64; 64 * 2 * 2], 64, 2, 0, "A", 0).unwrap();
        let stats = Standardization { n_s: 2, mean: vec![3.0; 4], std: vec![1.0; 4] };
        assert!(standardize(&w, &stats).unwrap().data().iter().all(|&x| x == 0.0));
        let zero_std = Standardization { n_s: 2, mean: vec![0.0; 4], std: vec![1.0, 0.0, 1.0, 1.0] };
        assert!(matches!(standardize(&w, &zero_std), Err(Error::DegenerateStatistics(_))));
    }

    #[test]
    fn mask_count_uses_floor() {
        assert_eq!(masked_subcarriers(30, 0.2, 1).len(), 6);
        assert_eq!(masked_subcarriers(30, 0.15, 1).len(), 4);
        assert!(masked_subcarriers(30, 0.0, 1).is_empty());
    }

    #[test]
    fn defaults_inside_documented_ranges() {
        let a = AugmentSpec::default();
        assert!((0.10..=0.20).contains(&a.mask_ratio));
        assert!(a.phase_ramp_rad_per_frame.abs() <= 0.02);
        assert!((5..=9).contains(&a.reverb_kernel_len));
        assert!(a.power_jitter_db.abs() <= 3.0);
    }

    #[test]
    fn unknown_perturbation_kind() {
        assert!("teleport".parse::<PerturbKind>().is_err());
        assert_eq!("replay_mosaic".parse::<PerturbKind>().unwrap(), PerturbKind::ReplayMosaic);
    }
}
