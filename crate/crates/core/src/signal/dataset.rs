//! On-disk dataset layout: `manifest.json` plus one binary file per split.
//!
//! Split files start with a 16-byte header (`"ZKS1"`, then `T`, `S` and the
//! window count as little-endian `u32`) followed by the windows as
//! little-endian `f32`, row-major `T x S x 2`. Per-window metadata and the
//! SHA-256 of every split file live in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_dataset, perturb, DatasetSpec, PerturbKind, Standardization, Window};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ZKS1";
const HEADER_LEN: usize = 16;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Split names in generation order.
pub const SPLITS: [&str; 4] = ["train", "val", "test", "shifted"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub file: String,
    pub count: usize,
    pub sha256: String,
    pub labels: Vec<usize>,
    pub zones: Vec<String>,
    pub t_wins: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub stats: Standardization,
    pub splits: BTreeMap<String, SplitMeta>,
}

impl Manifest {
    /// Digest over the split checksums, used as calibration provenance.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, meta) in &self.splits {
            h.update(name.as_bytes());
            h.update(meta.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// Fitted on the training split only.
    pub stats: Standardization,
    pub splits: BTreeMap<String, Vec<Window<f32>>>,
}

impl Dataset {
    /// Generates and splits 60/20/20 into train/val/test; the `shifted`
    /// split is the test split under drift and jamming.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let windows: Vec<Window<f64>> = generate_dataset(spec)?;
        let n = windows.len();
        let n_train = n * 3 / 5;
        let n_val = n / 5;
        let mut splits = BTreeMap::new();
        let train = windows[..n_train].to_vec();
        let val = windows[n_train..n_train + n_val].to_vec();
        let test = windows[n_train + n_val..].to_vec();
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::Parameter("dataset too small to split".into()));
        }
        let stats = Standardization::fit(&train)?;
        let shifted = test
            .iter()
            .map(|w| {
                let seed = spec.seed ^ w.t_win.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let drifted = perturb(w, PerturbKind::Drift, 1.5, seed, None)?;
                perturb(&drifted, PerturbKind::Jamming, 1.5, seed.rotate_left(17), None)
            })
            .collect::<Result<Vec<_>>>()?;
        for (name, split) in SPLITS.iter().zip([train, val, test, shifted]) {
            splits.insert(name.to_string(), split.iter().map(Window::cast).collect());
        }
        Ok(Dataset { spec: spec.clone(), stats, splits })
    }

    pub fn split(&self, name: &str) -> Result<&[Window<f32>]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("split {name}")))
    }
}

fn encode_split(windows: &[Window<f32>], n_t: usize, n_s: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + windows.len() * n_t * n_s * 8);
    out.extend_from_slice(MAGIC);
    for v in [n_t, n_s, windows.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for w in windows {
        for x in w.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn split_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Dataset {
    /// Manifest of the splits as [`save_dataset`] would write them.
    pub fn manifest(&self) -> Manifest {
        self.encoded().1
    }

    fn encoded(&self) -> (Vec<Vec<u8>>, Manifest) {
        let mut blobs = Vec::new();
        let mut splits = BTreeMap::new();
        for (name, windows) in &self.splits {
            let bytes = encode_split(windows, self.spec.n_t, self.spec.n_s);
            splits.insert(
                name.clone(),
                SplitMeta {
                    file: format!("{name}.bin"),
                    count: windows.len(),
                    sha256: split_checksum(&bytes),
                    labels: windows.iter().map(|w| w.label).collect(),
                    zones: windows.iter().map(|w| w.zone.clone()).collect(),
                    t_wins: windows.iter().map(|w| w.t_win).collect(),
                },
            );
            blobs.push(bytes);
        }
        (blobs, Manifest { spec: self.spec.clone(), stats: self.stats.clone(), splits })
    }
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let (blobs, manifest) = ds.encoded();
    for (meta, bytes) in manifest.splits.values().zip(&blobs) {
        fs::write(dir.join(&meta.file), bytes)?;
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn u32_at(bytes: &[u8], i: usize) -> usize {
    u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize
}

/// Loads a dataset, rejecting any split whose checksum or header disagrees
/// with the manifest.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let (n_t, n_s) = (manifest.spec.n_t, manifest.spec.n_s);
    let mut splits = BTreeMap::new();
    for (name, meta) in &manifest.splits {
        let bytes = fs::read(dir.join(&meta.file))?;
        if split_checksum(&bytes) != meta.sha256 {
            return Err(Error::Format(format!("checksum mismatch for split {name}")));
        }
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("split {name} lacks the ZKS1 header")));
        }
        let (t, s, count) = (u32_at(&bytes, 4), u32_at(&bytes, 8), u32_at(&bytes, 12));
        let per = n_t * n_s * 2;
        if t != n_t || s != n_s || count != meta.count || bytes.len() != HEADER_LEN + count * per * 4 {
            return Err(Error::Format(format!("split {name} header disagrees with manifest")));
        }
        if meta.labels.len() != count || meta.zones.len() != count || meta.t_wins.len() != count {
            return Err(Error::Format(format!("split {name} metadata length mismatch")));
        }
        let floats: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let windows = floats
            .chunks_exact(per)
            .enumerate()
            .map(|(i, chunk)| {
                Window::new(chunk.to_vec(), n_t, n_s, meta.t_wins[i], meta.zones[i].clone(), meta.labels[i])
            })
            .collect::<Result<Vec<_>>>()?;
        splits.insert(name.clone(), windows);
    }
    let ds = Dataset { spec: manifest.spec.clone(), stats: manifest.stats.clone(), splits };
    Ok((ds, manifest))
}
