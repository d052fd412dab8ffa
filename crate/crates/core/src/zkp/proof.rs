//! Spot-check commit-and-prove protocol over batched statement circuits.
//!
//! The prover commits to the salted witness with a Merkle tree, derives a
//! challenge seed from the statements and the root, and opens every wire of
//! `k` pseudo-randomly chosen constraints. Public slots are always opened
//! against the statement values. A batch of `B` windows shares the constant,
//! model-hash and threshold slots; every other slot and constraint belongs
//! to exactly one instance.
//!
//! Proof size in bytes for `B` statements, `k` openings and tree depth `d`:
//!
//! ```text
//! |π| = 31 + 41 B + k (4 + W (20 + 8 d)) + (2 + 4 B)(8 + 8 d),   W = MAX_WIRES
//! ```
//!
//! so each extra opening adds `W` slot openings of `d + 2` field elements
//! plus two indices.

use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::circuit::{Circuit, InstanceWitness, Statement, SHARED_SLOTS, SLOT_ACTION, SLOT_C, SLOT_H, SLOT_NONCE, SLOT_T_WIN, SLOT_TAU};
use super::field::Felt;
use super::merkle::{depth_for, leaf_digest, root_from_path, MerkleTree};
use super::r1cs::{Constraint, Slot, MAX_WIRES};
use super::registry::Registry;
use super::sponge::{hash_in_domain, Domain};
use crate::error::{Error, Result};

/// Soundness error targeted by [`default_openings`].
pub const TARGET_ESCAPE: f64 = 1e-3;

/// Public slots opened once per batch.
pub const SHARED_BINDINGS: [Slot; 2] = [SLOT_H, SLOT_TAU];
/// Public slots opened per instance.
pub const INSTANCE_BINDINGS: [Slot; 4] = [SLOT_C, SLOT_T_WIN, SLOT_NONCE, SLOT_ACTION];

/// Smallest `k` with `(1 - 1/m)^k <= TARGET_ESCAPE`.
pub fn default_openings(m: usize) -> usize {
    if m <= 1 {
        return 1;
    }
    let per = (1.0 - 1.0 / m as f64).ln();
    (TARGET_ESCAPE.ln() / per).ceil() as usize
}

/// Probability that `k` uniform openings all miss one bad constraint among `m`.
pub fn escape_probability(m: usize, k: usize) -> f64 {
    (1.0 - 1.0 / m as f64).powi(k as i32)
}

/// Closed-form wire size (see the module docs).
pub fn proof_size(batch: usize, k: usize, depth: usize) -> usize {
    31 + 41 * batch + k * (4 + MAX_WIRES * (20 + 8 * depth)) + (2 + 4 * batch) * (8 + 8 * depth)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotOpening {
    pub slot: u32,
    pub value: Felt,
    pub salt: Felt,
    pub path: Vec<Felt>,
}

/// Wires of one spot-checked constraint, padded with slot 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opening {
    pub constraint: u32,
    pub slots: Vec<SlotOpening>,
}

/// Opening of a public slot; its value comes from the statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding {
    pub salt: Felt,
    pub path: Vec<Felt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proof {
    pub statements: Vec<Statement>,
    pub root: Felt,
    pub depth: usize,
    pub seed: Felt,
    pub openings: Vec<Opening>,
    /// Shared bindings first, then four per instance.
    pub bindings: Vec<Binding>,
}

impl Proof {
    pub fn k(&self) -> usize {
        self.openings.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProveParams {
    /// Spot checks; `None` selects [`default_openings`] for the batch size.
    pub openings: Option<usize>,
    /// Seeds the blinding salts.
    pub salt_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct VerifyParams {
    /// Proofs with fewer openings are rejected.
    pub min_openings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadFormat,
    UnknownHash,
    BadBinding,
    BadSeed,
    BadPath,
    BadConstraint,
    WeakParameters,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadFormat => "bad-format",
            RejectReason::UnknownHash => "unknown-hash",
            RejectReason::BadBinding => "bad-binding",
            RejectReason::BadSeed => "bad-seed",
            RejectReason::BadPath => "bad-path",
            RejectReason::BadConstraint => "bad-constraint",
            RejectReason::WeakParameters => "weak-parameters",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub warnings: Vec<String>,
}

impl Verdict {
    fn accept(warnings: Vec<String>) -> Self {
        Verdict { accepted: true, reason: None, warnings }
    }

    fn reject(reason: RejectReason) -> Self {
        Verdict { accepted: false, reason: Some(reason), warnings: Vec::new() }
    }
}

/// Slot and constraint offsets of the instances of a batch.
#[derive(Clone, Debug)]
pub struct BatchLayout {
    bases: Vec<usize>,
    constraint_offsets: Vec<usize>,
    pub num_slots: usize,
    pub num_constraints: usize,
}

impl BatchLayout {
    pub fn new(circuit: &Circuit, statements: &[Statement]) -> Self {
        let mut bases = Vec::with_capacity(statements.len());
        let mut constraint_offsets = Vec::with_capacity(statements.len() + 1);
        let (mut next_slot, mut next_constraint) = (SHARED_SLOTS, 0);
        for s in statements {
            let shape = circuit.shape(s.action);
            bases.push(next_slot);
            constraint_offsets.push(next_constraint);
            next_slot += shape.num_slots - SHARED_SLOTS;
            next_constraint += shape.len();
        }
        constraint_offsets.push(next_constraint);
        BatchLayout { bases, constraint_offsets, num_slots: next_slot, num_constraints: next_constraint }
    }

    pub fn global_slot(&self, instance: usize, local: Slot) -> Slot {
        if local < SHARED_SLOTS {
            local
        } else {
            self.bases[instance] + local - SHARED_SLOTS
        }
    }

    /// `(instance, local constraint index)` of a global constraint.
    pub fn locate(&self, constraint: usize) -> (usize, usize) {
        let i = self.constraint_offsets.partition_point(|&o| o <= constraint) - 1;
        (i, constraint - self.constraint_offsets[i])
    }

    /// Global public slots in binding order.
    pub fn binding_slots(&self, batch: usize) -> Vec<Slot> {
        let mut out = SHARED_BINDINGS.to_vec();
        for i in 0..batch {
            out.extend(INSTANCE_BINDINGS.iter().map(|&s| self.global_slot(i, s)));
        }
        out
    }
}

/// Batch-level consistency required by both prover and verifier.
fn check_statements(statements: &[Statement]) -> Result<()> {
    let first = statements.first().ok_or_else(|| Error::Parameter("empty batch".into()))?;
    if statements.iter().any(|s| s.h_theta != first.h_theta || s.tau_fp != first.tau_fp) {
        return Err(Error::Parameter("batch mixes model hashes or thresholds".into()));
    }
    if statements.windows(2).any(|p| p[1].t_win <= p[0].t_win) {
        return Err(Error::Parameter("t_win must be strictly increasing within a batch".into()));
    }
    Ok(())
}

/// Fiat-Shamir seed over the statements and the witness root.
pub fn challenge_seed(statements: &[Statement], root: Felt) -> Felt {
    let mut input = Vec::with_capacity(1 + 6 * statements.len() + 1);
    input.push(Felt::new(statements.len() as u64));
    for s in statements {
        input.extend(s.elements());
    }
    input.push(root);
    hash_in_domain(Domain::Challenge, &input)
}

/// Index of the `i`-th spot-checked constraint.
pub fn challenge_index(seed: Felt, i: usize, m: usize) -> usize {
    (hash_in_domain(Domain::Challenge, &[seed, Felt::new(i as u64)]).as_u64() % m as u64) as usize
}

fn constraint_at<'a>(circuit: &'a Circuit, statements: &[Statement], layout: &BatchLayout, j: usize) -> (usize, &'a Constraint) {
    let (i, local) = layout.locate(j);
    (i, &circuit.shape(statements[i].action).constraints[local])
}

/// Global slots referenced by a constraint, padded with slot 0.
fn opened_slots(c: &Constraint, layout: &BatchLayout, instance: usize) -> Vec<Slot> {
    let mut slots: Vec<Slot> = c.wires().into_iter().map(|s| layout.global_slot(instance, s)).collect();
    slots.resize(MAX_WIRES, 0);
    slots
}

/// Proves a batch of windows sharing one registered model.
pub fn prove_batch(
    circuit: &Circuit,
    statements: &[Statement],
    witnesses: &[InstanceWitness],
    params: &ProveParams,
) -> Result<Proof> {
    check_statements(statements)?;
    if statements.len() != witnesses.len() {
        return Err(Error::Parameter("statement and witness counts differ".into()));
    }
    let mut locals = Vec::with_capacity(statements.len());
    for (s, w) in statements.iter().zip(witnesses) {
        locals.push(circuit.witness(s, w)?);
    }
    prove_unchecked(circuit, statements, &locals, params)
}

/// Commits and opens per-instance assignments without checking them; for
/// adversarial experiments only.
pub fn prove_unchecked(
    circuit: &Circuit,
    statements: &[Statement],
    locals: &[Vec<Felt>],
    params: &ProveParams,
) -> Result<Proof> {
    let layout = BatchLayout::new(circuit, statements);
    let mut w = vec![Felt::ZERO; layout.num_slots];
    for (i, local) in locals.iter().enumerate() {
        for (s, v) in local.iter().enumerate() {
            w[layout.global_slot(i, s)] = *v;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(params.salt_seed ^ challenge_seed(statements, Felt::ZERO).as_u64());
    let salts: Vec<Felt> = (0..w.len()).map(|_| Felt::new(rng.random::<u64>())).collect();
    let leaves = w.iter().zip(&salts).map(|(v, s)| leaf_digest(*v, *s)).collect();
    let tree = MerkleTree::from_leaves(leaves);
    let root = tree.root();
    let seed = challenge_seed(statements, root);
    let m = layout.num_constraints;
    let k = params.openings.unwrap_or_else(|| default_openings(m));
    let open = |slot: Slot| SlotOpening { slot: slot as u32, value: w[slot], salt: salts[slot], path: tree.path(slot) };
    let openings = (0..k)
        .map(|i| {
            let j = challenge_index(seed, i, m);
            let (inst, c) = constraint_at(circuit, statements, &layout, j);
            Opening { constraint: j as u32, slots: opened_slots(c, &layout, inst).into_iter().map(open).collect() }
        })
        .collect();
    let bindings = layout
        .binding_slots(statements.len())
        .into_iter()
        .map(|s| Binding { salt: salts[s], path: tree.path(s) })
        .collect();
    Ok(Proof { statements: statements.to_vec(), root, depth: tree.depth(), seed, openings, bindings })
}

/// Single-window proof; identical to a batch of one.
pub fn prove(circuit: &Circuit, statement: &Statement, witness: &InstanceWitness, params: &ProveParams) -> Result<Proof> {
    prove_batch(circuit, std::slice::from_ref(statement), std::slice::from_ref(witness), params)
}

/// Checks a proof against the statements the verifier expects.
pub fn verify_batch(proof: &Proof, statements: &[Statement], registry: &Registry, params: &VerifyParams) -> Verdict {
    use RejectReason::*;
    if check_statements(statements).is_err() || proof.statements.len() != statements.len() {
        return Verdict::reject(BadFormat);
    }
    let Ok(reg) = registry.lookup(statements[0].h_theta) else {
        return Verdict::reject(UnknownHash);
    };
    if statements[0].tau_fp != reg.entry.tau_fp {
        return Verdict::reject(BadBinding);
    }
    let circuit = &reg.circuit;
    let layout = BatchLayout::new(circuit, statements);
    let m = layout.num_constraints;
    let depth = depth_for(layout.num_slots);
    if proof.depth != depth || proof.bindings.len() != 2 + 4 * statements.len() {
        return Verdict::reject(BadFormat);
    }
    if proof.k() < params.min_openings {
        return Verdict::reject(WeakParameters);
    }
    if challenge_seed(statements, proof.root) != proof.seed {
        return Verdict::reject(BadSeed);
    }
    if proof.statements != statements {
        return Verdict::reject(BadBinding);
    }
    let leaf_ok = |slot: Slot, value: Felt, salt: Felt, path: &[Felt]| {
        path.len() == depth && root_from_path(slot, leaf_digest(value, salt), path) == proof.root
    };
    let mut expected = vec![statements[0].h_theta, Felt::new(statements[0].tau_fp as u64)];
    for s in statements {
        let e = s.elements();
        expected.extend(INSTANCE_BINDINGS.iter().map(|&slot| e[slot - 1]));
    }
    for ((slot, value), b) in layout.binding_slots(statements.len()).into_iter().zip(expected).zip(&proof.bindings) {
        if !leaf_ok(slot, value, b.salt, &b.path) {
            return Verdict::reject(BadBinding);
        }
    }
    // verified (value, salt) per slot; a slot opened twice must agree
    let mut verified: HashMap<Slot, (Felt, Felt)> = HashMap::new();
    for (i, op) in proof.openings.iter().enumerate() {
        let j = challenge_index(proof.seed, i, m);
        if op.constraint as usize != j || op.slots.len() != MAX_WIRES {
            return Verdict::reject(BadSeed);
        }
        let (inst, c) = constraint_at(circuit, statements, &layout, j);
        let slots = opened_slots(c, &layout, inst);
        if op.slots.iter().zip(&slots).any(|(o, &s)| o.slot as usize != s) {
            return Verdict::reject(BadFormat);
        }
        for o in &op.slots {
            let slot = o.slot as usize;
            match verified.get(&slot) {
                Some(&(v, s)) if v == o.value && s == o.salt => {}
                Some(_) => return Verdict::reject(BadPath),
                None => {
                    if !leaf_ok(slot, o.value, o.salt, &o.path) {
                        return Verdict::reject(BadPath);
                    }
                    verified.insert(slot, (o.value, o.salt));
                }
            }
        }
        let value = |local: Slot| {
            let g = layout.global_slot(inst, local);
            op.slots.iter().find(|o| o.slot as usize == g).map(|o| o.value)
        };
        let (Some(a), Some(b), Some(cv)) = (c.a.eval_with(value), c.b.eval_with(value), c.c.eval_with(value)) else {
            return Verdict::reject(BadFormat);
        };
        if a * b != cv {
            return Verdict::reject(BadConstraint);
        }
    }
    let mut warnings = Vec::new();
    if proof.k() == 0 {
        warnings.push("insecure-parameters: proof opens no constraints".to_string());
    } else if proof.k() < default_openings(m) {
        warnings.push(format!(
            "insecure-parameters: {} openings give escape probability {:.3e}",
            proof.k(),
            escape_probability(m, proof.k())
        ));
    }
    Verdict::accept(warnings)
}

pub fn verify(proof: &Proof, statement: &Statement, registry: &Registry, params: &VerifyParams) -> Verdict {
    verify_batch(proof, std::slice::from_ref(statement), registry, params)
}

/// Per-window averages of measured batch totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amortized {
    pub prove_time_per_window: Duration,
    pub proof_bytes_per_window: f64,
}

pub fn amortized_metrics(batch_prove_time: Duration, batch_proof_bytes: usize, batch: usize) -> Result<Amortized> {
    if batch == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    Ok(Amortized {
        prove_time_per_window: batch_prove_time / batch as u32,
        proof_bytes_per_window: batch_proof_bytes as f64 / batch as f64,
    })
}
