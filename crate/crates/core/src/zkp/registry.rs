//! Append-only registry of approved model versions.
//!
//! An entry freezes the model hash, the registered threshold, the policy tree
//! and everything the verifier needs to rebuild the statement circuit. The
//! backbone and head hashes are kept separately so a new head over an
//! unchanged backbone registers as its own entry.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::circuit::{Circuit, CircuitSpec, Head};
use super::field::Felt;
use crate::calibrate::surrogate::ConfidenceTable;
use crate::calibrate::CalibrationProfile;
use crate::error::{Error, Result};
use crate::policy::{compile_tree, PolicyTree};

/// Hashes and head parameters of a quantized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelIdentity {
    pub h_theta: Felt,
    pub backbone_hash: Felt,
    pub head_hash: Felt,
    pub head: Head,
    /// Dequantization scale of the integer logits.
    pub logit_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub h_theta: Felt,
    pub backbone_hash: Felt,
    pub head_hash: Felt,
    pub tau_fp: u32,
    pub profile_digest: Felt,
    pub tree: PolicyTree,
    pub tree_hash: Felt,
    pub spec: CircuitSpec,
}

/// Registered entry with its prebuilt circuit.
#[derive(Clone, Debug)]
pub struct Registered {
    pub entry: RegistryEntry,
    pub circuit: Arc<Circuit>,
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    order: Vec<Felt>,
    entries: BTreeMap<Felt, Registered>,
    budget: Option<usize>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry whose circuits must stay within `max_constraints` per window.
    pub fn with_budget(max_constraints: usize) -> Self {
        Registry { budget: Some(max_constraints), ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Registers a model under a frozen profile and policy. Re-registering
    /// the same triple returns the existing entry.
    pub fn register(
        &mut self,
        model: &ModelIdentity,
        profile: &CalibrationProfile,
        tree: &PolicyTree,
    ) -> Result<RegistryEntry> {
        if profile.model_hash() != model.h_theta {
            return Err(Error::Parameter("profile was calibrated for a different model".into()));
        }
        if tree.n_classes != model.head.n_classes {
            return Err(Error::Parameter("policy and head disagree on the class count".into()));
        }
        let tau_fp = profile.tau_fp();
        let profile_digest = profile.digest();
        let tree_hash = tree.tree_hash();
        if let Some(existing) = self.entries.get(&model.h_theta) {
            let e = &existing.entry;
            if e.tau_fp == tau_fp && e.profile_digest == profile_digest && e.tree_hash == tree_hash {
                return Ok(e.clone());
            }
            return Err(Error::Parameter(format!(
                "model {} already registered under a different profile or policy",
                model.h_theta
            )));
        }
        let spec = CircuitSpec {
            head: model.head.clone(),
            table: ConfidenceTable::build(model.head.n_classes, profile.temperature(), model.logit_scale)?,
            policy: compile_tree(tree)?,
            n_flags: tree.n_flags,
            budget: self.budget,
        };
        let entry = RegistryEntry {
            h_theta: model.h_theta,
            backbone_hash: model.backbone_hash,
            head_hash: model.head_hash,
            tau_fp,
            profile_digest,
            tree: tree.clone(),
            tree_hash,
            spec,
        };
        self.insert(entry.clone())?;
        Ok(entry)
    }

    fn insert(&mut self, entry: RegistryEntry) -> Result<()> {
        let circuit = Arc::new(Circuit::build(entry.spec.clone())?);
        self.order.push(entry.h_theta);
        self.entries.insert(entry.h_theta, Registered { entry, circuit });
        Ok(())
    }

    pub fn lookup(&self, h_theta: Felt) -> Result<&Registered> {
        self.entries
            .get(&h_theta)
            .ok_or_else(|| Error::NotFound(format!("model hash {h_theta}")))
    }

    /// Entries sharing a backbone, in registration order.
    pub fn heads_of(&self, backbone_hash: Felt) -> Vec<&RegistryEntry> {
        self.order
            .iter()
            .map(|h| &self.entries[h].entry)
            .filter(|e| e.backbone_hash == backbone_hash)
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.order.iter().map(|h| &self.entries[h].entry)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<&RegistryEntry> = self.entries().collect();
        fs::write(path, serde_json::to_string_pretty(&entries)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<RegistryEntry> = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut reg = Registry::new();
        for e in entries {
            if reg.entries.contains_key(&e.h_theta) {
                return Err(Error::Format(format!("duplicate registry entry {}", e.h_theta)));
            }
            if e.tree.tree_hash() != e.tree_hash {
                return Err(Error::Format(format!("tree hash mismatch for {}", e.h_theta)));
            }
            reg.budget = e.spec.budget;
            reg.insert(e)?;
        }
        Ok(reg)
    }
}
