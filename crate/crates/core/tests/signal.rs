//! Synthetic CSI generation, standardization, augmentation and threat
//! transforms against direct numerical oracles.

use proptest::prelude::*;
use zksense::signal::{
    augment, generate_dataset, load_dataset, masked_subcarriers, perturb, replay_alpha, save_dataset, standardize,
    AugmentSpec, Dataset, DatasetSpec, PerturbKind, Standardization, Window,
};

fn spec(seed: u64, n: usize, snr_db: f64) -> DatasetSpec {
    DatasetSpec { seed, n_windows: n, n_t: 128, n_s: 30, n_classes: 5, n_paths: 4, snr_db }
}

/// Mean over subcarriers of the DFT magnitude along time.
fn doppler_profile(w: &Window<f64>) -> Vec<f64> {
    let (n_t, n_s) = (w.n_t(), w.n_s());
    (0..n_t / 2)
        .map(|f| {
            let mut total = 0.0;
            for s in 0..n_s {
                let (mut re, mut im) = (0.0, 0.0);
                for t in 0..n_t {
                    let (a, b) = w.at(t, s);
                    let ang = -std::f64::consts::TAU * (f * t) as f64 / n_t as f64;
                    re += a * ang.cos() - b * ang.sin();
                    im += a * ang.sin() + b * ang.cos();
                }
                total += (re * re + im * im).sqrt();
            }
            total / n_s as f64
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn noiseless_classes_are_separable_by_nearest_centroid() {
    let train: Vec<Window<f64>> = generate_dataset(&spec(11, 100, f64::INFINITY)).unwrap();
    let held_out: Vec<Window<f64>> = generate_dataset(&spec(12, 50, f64::INFINITY)).unwrap();
    let mut centroids = vec![vec![0.0; 64]; 5];
    let mut counts = [0usize; 5];
    for w in &train {
        for (c, p) in centroids[w.label].iter_mut().zip(doppler_profile(w)) {
            *c += p;
        }
        counts[w.label] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|x| *x /= n as f64);
    }
    let correct = held_out
        .iter()
        .filter(|w| {
            let p = doppler_profile(w);
            let best = (0..5).min_by(|&a, &b| dist(&p, &centroids[a]).total_cmp(&dist(&p, &centroids[b]))).unwrap();
            best == w.label
        })
        .count();
    assert_eq!(correct, 50);
}

#[test]
fn generation_is_balanced_and_bit_identical() {
    let a: Vec<Window<f64>> = generate_dataset(&spec(7, 100, 10.0)).unwrap();
    let b: Vec<Window<f64>> = generate_dataset(&spec(7, 100, 10.0)).unwrap();
    assert_eq!(a, b);
    for k in 0..5 {
        assert_eq!(a.iter().filter(|w| w.label == k).count(), 20);
    }
    let c: Vec<Window<f64>> = generate_dataset(&spec(8, 100, 10.0)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn self_standardized_window_has_zero_mean_and_unit_std() {
    let w = &generate_dataset::<f64>(&spec(3, 5, 10.0)).unwrap()[2];
    let stats = Standardization::fit(std::slice::from_ref(w)).unwrap();
    let z = standardize(w, &stats).unwrap();
    let k = w.n_s() * 2;
    for col in 0..k {
        let xs: Vec<f64> = z.data().iter().skip(col).step_by(k).copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-9);
    }
    assert_eq!((z.t_win, z.label, &z.zone), (w.t_win, w.label, &w.zone));
}

#[test]
fn zero_std_is_degenerate() {
    let w = Window::new(vec![1.0f64; 64 * 2 * 2], 64, 2, 0, "A", 0).unwrap();
    let stats = Standardization::fit(std::slice::from_ref(&w)).unwrap();
    assert!(matches!(standardize(&w, &stats), Err(zksense::Error::DegenerateStatistics(_))));
}

fn phase(w: &Window<f64>, t: usize, s: usize) -> f64 {
    let (re, im) = w.at(t, s);
    im.atan2(re)
}

fn wrap(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

#[test]
fn phase_ramp_shifts_every_increment() {
    let w = &generate_dataset::<f64>(&spec(5, 3, 20.0)).unwrap()[0];
    let a = AugmentSpec { phase_ramp_rad_per_frame: 0.02, ..AugmentSpec::identity() };
    let out = augment(w, &a, 9).unwrap();
    for s in 0..w.n_s() {
        for t in 0..w.n_t() - 1 {
            let before = wrap(phase(w, t + 1, s) - phase(w, t, s));
            let after = wrap(phase(&out, t + 1, s) - phase(&out, t, s));
            assert!((wrap(after - before) - 0.02).abs() < 1e-9);
        }
    }
}

#[test]
fn mask_zeroes_floor_ratio_subcarriers() {
    let w = &generate_dataset::<f64>(&spec(5, 3, 20.0)).unwrap()[1];
    let a = AugmentSpec { mask_ratio: 0.2, ..AugmentSpec::identity() };
    let out = augment(w, &a, 4).unwrap();
    let zeroed = (0..w.n_s()).filter(|&s| (0..w.n_t()).all(|t| out.at(t, s) == (0.0, 0.0))).count();
    assert_eq!(zeroed, 6);
    assert_eq!(masked_subcarriers(30, 0.2, 4).len(), 6);
}

#[test]
fn power_jitter_scales_energy() {
    let w = &generate_dataset::<f64>(&spec(5, 3, 20.0)).unwrap()[2];
    let a = AugmentSpec { power_jitter_db: 3.0, ..AugmentSpec::identity() };
    let out = augment(w, &a, 1).unwrap();
    let ratio = out.energy() / w.energy();
    assert!((ratio / 10f64.powf(0.3) - 1.0).abs() < 1e-9);
}

#[test]
fn jitter_drop_interpolates_ten_to_thirty_percent() {
    let windows: Vec<Window<f64>> = generate_dataset(&spec(21, 20, 10.0)).unwrap();
    for (i, w) in windows.iter().enumerate() {
        let out = perturb(w, PerturbKind::JitterDrop, 1.0, 100 + i as u64, None).unwrap();
        let changed = (0..w.n_t())
            .filter(|&t| (0..w.n_s()).any(|s| out.at(t, s) != w.at(t, s)))
            .count();
        let frac = changed as f64 / w.n_t() as f64;
        assert!((0.09..=0.31).contains(&frac), "window {i}: {frac}");
    }
}

#[test]
fn replay_mixing_weight_is_recoverable() {
    let ws: Vec<Window<f64>> = generate_dataset(&spec(31, 2, 10.0)).unwrap();
    for intensity in [0.3, 0.8, 1.0] {
        let out = perturb(&ws[0], PerturbKind::ReplayMosaic, intensity, 5, Some(&ws[1])).unwrap();
        // least squares for out - w = alpha (old - w)
        let (mut num, mut den) = (0.0, 0.0);
        for ((o, x), p) in out.data().iter().zip(ws[0].data()).zip(ws[1].data()) {
            num += (o - x) * (p - x);
            den += (p - x) * (p - x);
        }
        assert!((num / den - replay_alpha(intensity)).abs() < 1e-12);
    }
    assert!(perturb(&ws[0], PerturbKind::ReplayMosaic, 1.0, 5, None).is_err());
}

#[test]
fn dataset_round_trips_and_detects_corruption() {
    let ds = Dataset::generate(&DatasetSpec { n_windows: 30, ..DatasetSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(dir.path(), &ds).unwrap();
    assert_eq!(manifest, ds.manifest());
    let (back, m2) = load_dataset(dir.path()).unwrap();
    assert_eq!(back.splits, ds.splits);
    assert_eq!(m2.checksum(), manifest.checksum());
    let bytes = std::fs::read(dir.path().join("test.bin")).unwrap();
    assert_eq!(&bytes[..4], b"ZKS1");
    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    std::fs::write(dir.path().join("test.bin"), &bad).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(zksense::Error::Format(_))));
}

proptest! {
    #[test]
    fn transforms_are_deterministic_and_shape_preserving(seed in 0u64..200, kind in 0usize..5, intensity in 0.0f64..2.0) {
        let ws: Vec<Window<f64>> = generate_dataset(&DatasetSpec { seed, n_windows: 2, ..DatasetSpec::default() }).unwrap();
        let kind = PerturbKind::ALL[kind];
        let a = perturb(&ws[0], kind, intensity, seed, Some(&ws[1])).unwrap();
        let b = perturb(&ws[0], kind, intensity, seed, Some(&ws[1])).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!((a.n_t(), a.n_s()), (ws[0].n_t(), ws[0].n_s()));
        let id = perturb(&ws[0], kind, 0.0, seed, Some(&ws[1])).unwrap();
        prop_assert_eq!(&id, &ws[0]);
        let aug = augment(&ws[0], &AugmentSpec::default(), seed).unwrap();
        prop_assert_eq!(&aug, &augment(&ws[0], &AugmentSpec::default(), seed).unwrap());
        prop_assert_eq!(&augment(&ws[0], &AugmentSpec::identity(), seed).unwrap(), &ws[0]);
    }
}
