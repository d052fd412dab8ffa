//! TOML configuration and the on-disk artifact layout.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use zksense::pipeline::BuildConfig;

/// Environment variable naming the signing-key file.
pub const KEY_ENV: &str = "ZKSENSE_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root of every artifact the commands read and write.
    pub out: PathBuf,
    /// Signing-key file; `ZKSENSE_KEY` and then `<out>/site.key` otherwise.
    pub key_path: Option<PathBuf>,
    pub build: BuildConfig,
    pub run: RunConfig,
    pub attack: AttackConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            out: PathBuf::from("zksense-out"),
            key_path: None,
            build: BuildConfig::default(),
            run: RunConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset split the run draws windows from.
    pub split: String,
    /// Cap on windows processed; all of the split when absent.
    pub windows: Option<usize>,
    pub batch: usize,
    /// Spot checks per proof; the 1e-3 default for each batch when absent.
    pub openings: Option<usize>,
    pub seed: u64,
    pub site_id: String,
    pub target: String,
    /// Zones whose "armed" context flag is set.
    pub armed_zones: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            split: "test".into(),
            windows: None,
            batch: 1,
            openings: None,
            seed: 0,
            site_id: "site-0".into(),
            target: "occupant".into(),
            armed_zones: vec!["B".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub trials: usize,
    /// Threshold the tampering device runs with.
    pub tampered_tau: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { trials: 20, tampered_tau: 0.0 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn key_path(&self) -> PathBuf {
        if let Some(p) = &self.key_path {
            return p.clone();
        }
        match std::env::var_os(KEY_ENV) {
            Some(p) => PathBuf::from(p),
            None => self.out.join("site.key"),
        }
    }

    pub fn paths(&self) -> Paths {
        Paths { root: self.out.clone() }
    }
}

/// Artifact file names under the output root.
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn float_model(&self) -> PathBuf {
        self.root.join("float_model.json")
    }
    pub fn train_report(&self) -> PathBuf {
        self.root.join("train_report.json")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.zkqm")
    }
    pub fn quant_meta(&self) -> PathBuf {
        self.root.join("quant_meta.json")
    }
    pub fn profile(&self) -> PathBuf {
        self.root.join("profile.json")
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
    pub fn tree(&self) -> PathBuf {
        self.root.join("tree.json")
    }
    pub fn registry(&self) -> PathBuf {
        self.root.join("registry.json")
    }
    pub fn commits(&self) -> PathBuf {
        self.root.join("commits.json")
    }
    pub fn proofs(&self) -> PathBuf {
        self.root.join("proofs")
    }
    pub fn audit(&self) -> PathBuf {
        self.root.join("audit.jsonl")
    }
    pub fn anchor(&self) -> PathBuf {
        self.root.join("audit.head.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn attack(&self) -> PathBuf {
        self.root.join("attack.json")
    }
    pub fn curve(&self, split: &str, ext: &str) -> PathBuf {
        self.root.join(format!("coverage_risk_{split}.{ext}"))
    }
}
