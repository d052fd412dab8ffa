//! Red-team harness: replay, threshold tampering and model rollback, each
//! driven through the real commit, prove and verify path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{commit_windows, prove_committed, Deployment, RunInput};
use crate::policy::{compile_tree, to_fixed};
use crate::zkp::{verify_batch, Circuit, CircuitSpec, Felt, Proof, RejectReason, Registry, Statement, VerifyParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Replay,
    TamperThreshold,
    Rollback,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Replay => "replay",
            AttackKind::TamperThreshold => "tamper-threshold",
            AttackKind::Rollback => "rollback",
        }
    }
}

/// Result of one attempted attack on one proof.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub kind: AttackKind,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

/// Aggregated attempts of one attack class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: AttackKind,
    pub attempted: usize,
    pub accepted: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl Outcome {
    pub fn new(kind: AttackKind) -> Self {
        Outcome { kind, attempted: 0, accepted: 0, reasons: BTreeMap::new() }
    }

    pub fn record(&mut self, a: &Attempt) {
        self.attempted += 1;
        self.accepted += usize::from(a.accepted);
        if let Some(r) = a.reason {
            *self.reasons.entry(r.as_str().to_string()).or_default() += 1;
        }
    }
}

/// An archived honest proof and the statements it was made for.
#[derive(Clone, Debug)]
pub struct Archived {
    pub statements: Vec<Statement>,
    pub proof: Proof,
}

/// Presents an archived proof for the same actions at new windows: every
/// statement gets `t_win` shifted by `shift` and a fresh nonce.
pub fn attack_replay(registry: &Registry, past: &Archived, shift: u64, nonces: &[Felt]) -> Result<Attempt> {
    if shift == 0 || nonces.len() != past.statements.len() {
        return Err(Error::Parameter("replay needs a new window and one nonce per statement".into()));
    }
    let replayed: Vec<Statement> = past
        .statements
        .iter()
        .zip(nonces)
        .map(|(s, &nonce)| Statement { t_win: s.t_win.wrapping_add(shift), nonce, ..s.clone() })
        .collect();
    let v = verify_batch(&past.proof, &replayed, registry, &VerifyParams::default());
    Ok(Attempt { kind: AttackKind::Replay, accepted: v.accepted, reason: v.reason })
}

/// Runs the device with a lowered threshold `tau` and proves honestly
/// against the registered circuit.
pub fn attack_tamper_threshold(
    dep: &Deployment,
    registry: &Registry,
    inputs: &[RunInput],
    tau: f64,
    seed: u64,
) -> Result<Attempt> {
    let tau_fp = to_fixed(tau)?;
    if tau_fp == dep.profile.tau_fp() {
        return Err(Error::Parameter("threshold equals the registered value".into()));
    }
    let reg = registry.lookup(dep.h_theta())?;
    let committed = commit_windows(dep, inputs, seed, tau_fp)?;
    let proofs = prove_committed(&reg.circuit, &committed, inputs.len().max(1), None, seed)?;
    let p = &proofs[0];
    let v = verify_batch(&p.proof, &p.statements, registry, &VerifyParams::default());
    Ok(Attempt { kind: AttackKind::TamperThreshold, accepted: v.accepted, reason: v.reason })
}

/// Runs an unregistered older model, proving against a circuit built from
/// its own parameters.
pub fn attack_rollback(old: &Deployment, registry: &Registry, inputs: &[RunInput], seed: u64) -> Result<Attempt> {
    if registry.lookup(old.h_theta()).is_ok() {
        return Err(Error::Parameter("model is registered; nothing to roll back to".into()));
    }
    let circuit = Circuit::build(CircuitSpec {
        head: old.model.head.head.clone(),
        table: old.table().clone(),
        policy: compile_tree(&old.tree)?,
        n_flags: old.tree.n_flags,
        budget: None,
    })?;
    let committed = commit_windows(old, inputs, seed, old.profile.tau_fp())?;
    let proofs = prove_committed(&circuit, &committed, inputs.len().max(1), None, seed)?;
    let p = &proofs[0];
    let v = verify_batch(&p.proof, &p.statements, registry, &VerifyParams::default());
    Ok(Attempt { kind: AttackKind::Rollback, accepted: v.accepted, reason: v.reason })
}
