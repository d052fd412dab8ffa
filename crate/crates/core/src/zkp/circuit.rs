//! Per-window statement circuit.
//!
//! Witness layout (local slots): `0` is the constant one, `1..=6` are the
//! public inputs `h_theta, tau, c, t_win, nonce, action`. Slots `0..3` are
//! shared by every instance of a batch; the rest are instance-local.
//!
//! * C1 recomputes the commitment `c` from the latent bytes, the packed
//!   context flags and the blinding `r` with the in-circuit sponge.
//! * C2 and C3 tie private copies of the model hash, threshold, time window
//!   and nonce to their public slots.
//! * C4 evaluates the integer head, proves argmax and runner-up dominance,
//!   looks up the confidence level from the margin table, compares it with
//!   the threshold and selects the policy leaf whose conjunction holds.
//!
//! Statements claiming `abstain` omit C4 entirely.

use serde::{Deserialize, Serialize};

use super::field::Felt;
use super::gadgets::{
    alloc_bit, alloc_bits, enforce_zero, mul, one_hot, one_hot_cost, range_check, range_cost, select,
    sponge_cost, sponge_hash, zero_cost,
};
use super::r1cs::{Builder, ConstraintSystem, Family, LinComb, Mode, Slot, ONE};
use super::sponge::{hash_in_domain, Domain};
use crate::calibrate::surrogate::{ConfidenceTable, MAX_MARGIN};
use crate::error::{Error, Result};
use crate::policy::{argmax, CompiledPolicy, Decision, Operand, Relation, CONF_SCALE};

pub const SLOT_H: Slot = 1;
pub const SLOT_TAU: Slot = 2;
pub const SLOT_C: Slot = 3;
pub const SLOT_T_WIN: Slot = 4;
pub const SLOT_NONCE: Slot = 5;
pub const SLOT_ACTION: Slot = 6;
/// Slots `0..SHARED_SLOTS` are common to all instances of a batch.
pub const SHARED_SLOTS: usize = 3;

/// Latent entries are signed bytes.
pub const LATENT_MIN: i32 = -128;
pub const LATENT_MAX: i32 = 127;
/// Latent bytes per packed commitment element.
pub const LATENT_PACK: usize = 7;
pub const MAX_FLAGS: usize = 60;
/// Logits must satisfy `|f| < 2^LOGIT_BITS` so margins fit the 24-bit checks.
pub const LOGIT_BITS: u32 = 23;
const MARGIN_BITS: usize = 24;
const CONF_BITS: usize = 8;
/// Keeps every coefficient of a table selection nonzero.
const TABLE_OFFSET: i64 = 1;

/// Public tuple of one window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub c: Felt,
    pub h_theta: Felt,
    pub tau_fp: u32,
    pub t_win: u64,
    pub nonce: Felt,
    pub action: Decision,
}

impl Statement {
    /// Field encoding in slot order.
    pub fn elements(&self) -> [Felt; 6] {
        [
            self.h_theta,
            Felt::new(self.tau_fp as u64),
            self.c,
            Felt::new(self.t_win),
            self.nonce,
            Felt::new(self.action.code()),
        ]
    }
}

/// Private inputs of one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceWitness {
    pub latent: Vec<i32>,
    pub flags: Vec<bool>,
    pub r: Felt,
}

/// Integer head `f = W z + b` over the committed latent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub n_classes: usize,
    pub d_lat: usize,
    /// Row-major `n_classes x d_lat`, each within `[-127, 127]`.
    pub weights: Vec<i32>,
    pub bias: Vec<i32>,
}

impl Head {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.d_lat == 0 {
            return Err(Error::Parameter("head needs two classes and a non-empty latent".into()));
        }
        if self.weights.len() != self.n_classes * self.d_lat || self.bias.len() != self.n_classes {
            return Err(Error::Parameter("head weight shape mismatch".into()));
        }
        if self.weights.iter().any(|w| w.abs() > 127) {
            return Err(Error::Parameter("head weights must be 8-bit".into()));
        }
        let bound = 1i64 << LOGIT_BITS;
        for j in 0..self.n_classes {
            let row: i64 = self.row(j).iter().map(|w| w.abs() as i64 * 128).sum();
            if row + (self.bias[j] as i64).abs() >= bound {
                return Err(Error::Capacity(format!("logit {j} may reach 2^{LOGIT_BITS}")));
            }
        }
        Ok(())
    }

    pub fn row(&self, j: usize) -> &[i32] {
        &self.weights[j * self.d_lat..(j + 1) * self.d_lat]
    }

    pub fn logits(&self, latent: &[i32]) -> Vec<i32> {
        (0..self.n_classes)
            .map(|j| self.row(j).iter().zip(latent).map(|(w, z)| w * z).sum::<i32>() + self.bias[j])
            .collect()
    }

    /// Nonzero weights per row.
    pub fn nnz(&self) -> Vec<usize> {
        (0..self.n_classes).map(|j| self.row(j).iter().filter(|w| **w != 0).count()).collect()
    }
}

/// Everything the circuit shape depends on; public to the verifier through
/// the registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub head: Head,
    pub table: ConfidenceTable,
    pub policy: CompiledPolicy,
    pub n_flags: usize,
    /// Optional ceiling on constraints per instance.
    pub budget: Option<usize>,
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if self.table.n_classes != self.head.n_classes || self.policy.n_classes != self.head.n_classes {
            return Err(Error::Parameter("class count differs between head, table and policy".into()));
        }
        if self.table.lo.len() != CONF_SCALE as usize + 1 || self.table.hi.len() != CONF_SCALE as usize + 1 {
            return Err(Error::Parameter("confidence table must have one entry per level".into()));
        }
        if self.n_flags > MAX_FLAGS || self.policy.n_flags != self.n_flags {
            return Err(Error::Parameter(format!("unsupported flag count {}", self.n_flags)));
        }
        if self.policy.leaves.is_empty() {
            return Err(Error::Parameter("policy has no leaves".into()));
        }
        for leaf in &self.policy.leaves {
            for cmp in &leaf.comparisons {
                let in_range = match cmp.operand {
                    Operand::ClassIndicator(c) => c < self.head.n_classes,
                    Operand::Flag(f) => f < self.n_flags,
                    Operand::Confidence => true,
                };
                if !in_range || cmp.coeff == 0 || cmp.coeff.abs() > 1 || cmp.constant.abs() > CONF_SCALE as i64 + 1 {
                    return Err(Error::Compile(format!("comparison {cmp:?} outside circuit encoding")));
                }
            }
        }
        Ok(())
    }
}

/// Constraint counts per family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
}

impl FamilyCounts {
    pub fn total(&self) -> usize {
        self.c1 + self.c2 + self.c3 + self.c4
    }

    pub fn of(cs: &ConstraintSystem) -> Self {
        FamilyCounts {
            c1: cs.count_by_family(Family::C1),
            c2: cs.count_by_family(Family::C2),
            c3: cs.count_by_family(Family::C3),
            c4: cs.count_by_family(Family::C4),
        }
    }
}

/// Cost of a fresh slot bound to a combination with `wires` slots.
const fn fresh_cost(wires: usize) -> usize {
    zero_cost(wires + 1)
}

/// Field elements absorbed by the commitment: packed latent, flags, `r`.
pub fn commitment_inputs(d_lat: usize) -> usize {
    d_lat.div_ceil(LATENT_PACK) + 2
}

/// Constraint counts derived from the gadget cost functions.
pub fn closed_form(spec: &CircuitSpec, abstain: bool) -> FamilyCounts {
    let d = spec.head.d_lat;
    let k = spec.head.n_classes;
    let f = spec.n_flags;
    let latent = d * (8 + fresh_cost(8));
    let packing: usize = (0..d).step_by(LATENT_PACK).map(|s| fresh_cost((d - s).min(LATENT_PACK))).sum();
    let flags = f + fresh_cost(f);
    let c1 = latent + packing + flags + sponge_cost(commitment_inputs(d)) + zero_cost(4);
    let c4 = if abstain {
        0
    } else {
        let logits: usize = spec.head.nnz().iter().map(|&n| fresh_cost(n)).sum();
        let selected = one_hot_cost(k) + k + fresh_cost(k);
        let dominance: usize = (0..k).map(|j| range_cost(2 + (k - 1 - j), MARGIN_BITS)).sum();
        let runner_up = one_hot_cost(k) + k + k + fresh_cost(k) + k * (1 + range_cost(1, MARGIN_BITS));
        let levels = CONF_SCALE as usize + 1;
        let confidence = one_hot_cost(levels)
            + 3 * fresh_cost(levels)
            + 2 * range_cost(3, MARGIN_BITS)
            + range_cost(2, CONF_BITS);
        let n_leaves = spec.policy.leaves.len();
        let paths: usize = spec
            .policy
            .leaves
            .iter()
            .flat_map(|l| &l.comparisons)
            .map(|c| match c.relation {
                Relation::EqZero => 1,
                Relation::GeZero => 1 + range_cost(1, CONF_BITS),
            })
            .sum();
        let leaves = one_hot_cost(n_leaves) + paths + zero_cost(n_leaves + 1);
        logits + selected + dominance + runner_up + confidence + leaves
    };
    FamilyCounts { c1, c2: 2, c3: 2, c4 }
}

fn check_latent(latent: &[i32]) -> Result<()> {
    match latent.iter().find(|z| !(LATENT_MIN..=LATENT_MAX).contains(*z)) {
        Some(z) => Err(Error::Encoding(format!("latent entry {z} outside [{LATENT_MIN}, {LATENT_MAX}]"))),
        None => Ok(()),
    }
}

/// Field encoding of a latent and its context flags, as absorbed by C1.
pub fn encode_latent(latent: &[i32], flags: &[bool]) -> Result<Vec<Felt>> {
    check_latent(latent)?;
    if flags.len() > MAX_FLAGS {
        return Err(Error::Encoding(format!("{} context flags exceed {MAX_FLAGS}", flags.len())));
    }
    let mut out: Vec<Felt> = latent
        .chunks(LATENT_PACK)
        .map(|chunk| {
            let v = chunk.iter().rev().fold(0u64, |acc, z| (acc << 8) | (z + 128) as u64);
            Felt::new(v)
        })
        .collect();
    let packed_flags = flags.iter().rev().fold(0u64, |acc, f| (acc << 1) | *f as u64);
    out.push(Felt::new(packed_flags));
    Ok(out)
}

/// `c = H(encode(z, flags) || r)` in the commitment domain.
pub fn commit_latent(latent: &[i32], flags: &[bool], r: Felt) -> Result<Felt> {
    if latent.is_empty() {
        return Err(Error::Encoding("empty latent".into()));
    }
    let mut input = encode_latent(latent, flags)?;
    input.push(r);
    Ok(hash_in_domain(Domain::Commitment, &input))
}

/// Values the honest C4 witness is built from.
struct Trace {
    class: usize,
    second: usize,
    u_q: u32,
    leaf: Option<usize>,
}

fn trace(spec: &CircuitSpec, wit: &InstanceWitness) -> Result<Trace> {
    let logits = spec.head.logits(&wit.latent);
    let class = argmax(&logits);
    let second = (0..logits.len())
        .filter(|&j| j != class)
        .fold(None, |best: Option<usize>, j| match best {
            Some(b) if logits[b] >= logits[j] => Some(b),
            _ => Some(j),
        })
        .unwrap();
    let margin = logits[class] as i64 - logits[second] as i64;
    let u_q = spec.table.lookup(margin.min(MAX_MARGIN as i64))?;
    let leaf = spec.policy.leaf_index(class, u_q, &wit.flags);
    Ok(Trace { class, second, u_q, leaf })
}

/// Allocates a slot equal to `lc` and binds it with [`enforce_zero`].
fn fresh(b: &mut Builder, lc: LinComb) -> Result<Slot> {
    let v = b.eval(&lc);
    let s = b.alloc(|| v);
    enforce_zero(b, lc.with_term(s, -Felt::ONE))?;
    Ok(s)
}

fn felt_i(v: i64) -> Felt {
    Felt::from_i64(v)
}

/// Synthesizes one instance. `assign` is `None` in shape mode, where
/// `abstain` selects the layout; otherwise the layout follows the
/// statement's action.
pub fn synthesize(
    b: &mut Builder,
    spec: &CircuitSpec,
    assign: Option<(&Statement, &InstanceWitness)>,
    abstain: bool,
) -> Result<()> {
    let d = spec.head.d_lat;
    let k = spec.head.n_classes;
    let nf = spec.n_flags;
    if let Some((stmt, wit)) = assign {
        if wit.latent.len() != d || wit.flags.len() != nf {
            return Err(Error::Parameter(format!(
                "witness has {} latents and {} flags, circuit expects {d} and {nf}",
                wit.latent.len(),
                wit.flags.len()
            )));
        }
        check_latent(&wit.latent)?;
        if (stmt.action == Decision::Abstain) != abstain {
            return Err(Error::Parameter("layout disagrees with the claimed action".into()));
        }
    }
    let stmt_val = |f: fn(&Statement) -> Felt| assign.map_or(Felt::ZERO, |(s, _)| f(s));

    b.set_family(Family::C1);
    let h_pub = b.alloc_public("h_theta", || stmt_val(|s| s.h_theta));
    let tau_pub = b.alloc_public("tau", || stmt_val(|s| Felt::new(s.tau_fp as u64)));
    let c_pub = b.alloc_public("c", || stmt_val(|s| s.c));
    let t_pub = b.alloc_public("t_win", || stmt_val(|s| Felt::new(s.t_win)));
    let nonce_pub = b.alloc_public("nonce", || stmt_val(|s| s.nonce));
    let a_pub = b.alloc_public("action", || stmt_val(|s| Felt::new(s.action.code())));
    debug_assert_eq!([h_pub, tau_pub, c_pub, t_pub, nonce_pub, a_pub], [1, 2, 3, 4, 5, 6]);

    // C1: latent bytes, flags and blinding hashed to the public commitment
    let mut z = Vec::with_capacity(d);
    for i in 0..d {
        let byte = assign.map_or(0, |(_, w)| (w.latent[i] + 128) as u64);
        let (_, recomposed) = alloc_bits(b, Felt::new(byte), 8)?;
        z.push(fresh(b, recomposed.with_term(ONE, felt_i(-128)))?);
    }
    let mut inputs = Vec::with_capacity(commitment_inputs(d));
    for chunk in z.chunks(LATENT_PACK) {
        let mut lc = LinComb::zero();
        let mut weight = Felt::ONE;
        for &s in chunk {
            lc.add_term(s, weight);
            lc.add_term(ONE, weight * Felt::new(128));
            weight *= Felt::new(256);
        }
        inputs.push(LinComb::slot(fresh(b, lc)?));
    }
    let mut flags = Vec::with_capacity(nf);
    let mut packed_flags = LinComb::zero();
    for i in 0..nf {
        let s = alloc_bit(b, assign.is_some_and(|(_, w)| w.flags[i]))?;
        packed_flags.add_term(s, Felt::new(1 << i));
        flags.push(s);
    }
    inputs.push(LinComb::slot(fresh(b, packed_flags)?));
    let r = b.alloc(|| assign.map_or(Felt::ZERO, |(_, w)| w.r));
    inputs.push(LinComb::slot(r));
    let digest = sponge_hash(b, Domain::Commitment, &inputs)?;
    enforce_zero(b, digest.with_term(c_pub, -Felt::ONE))?;

    // C2: registered model and threshold
    b.set_family(Family::C2);
    let h_w = b.alloc(|| stmt_val(|s| s.h_theta));
    enforce_zero(b, LinComb::slot(h_w).with_term(h_pub, -Felt::ONE))?;
    let tau_w = b.alloc(|| stmt_val(|s| Felt::new(s.tau_fp as u64)));
    enforce_zero(b, LinComb::slot(tau_w).with_term(tau_pub, -Felt::ONE))?;

    // C3: time window and nonce
    b.set_family(Family::C3);
    let t_w = b.alloc(|| stmt_val(|s| Felt::new(s.t_win)));
    enforce_zero(b, LinComb::slot(t_w).with_term(t_pub, -Felt::ONE))?;
    let nonce_w = b.alloc(|| stmt_val(|s| s.nonce));
    enforce_zero(b, LinComb::slot(nonce_w).with_term(nonce_pub, -Felt::ONE))?;

    if abstain {
        return Ok(());
    }

    b.set_family(Family::C4);
    let tr = match assign {
        Some((_, w)) => Some(trace(spec, w)?),
        None => None,
    };
    let f: Vec<Slot> = (0..k)
        .map(|j| {
            let mut lc = LinComb::constant_i64(spec.head.bias[j] as i64);
            for (&w, &zi) in spec.head.row(j).iter().zip(&z) {
                lc.add_term(zi, felt_i(w as i64));
            }
            fresh(b, lc)
        })
        .collect::<Result<_>>()?;

    // selected class dominates every other logit, strictly those before it
    let e = one_hot(b, k, tr.as_ref().map(|t| t.class))?;
    let f_sel = select(b, &e, &f)?;
    let f_sel = fresh(b, f_sel)?;
    for j in 0..k {
        let mut lc = LinComb::slot(f_sel).with_term(f[j], -Felt::ONE);
        for &ei in &e[j + 1..] {
            lc.add_term(ei, -Felt::ONE);
        }
        range_check(b, &lc, MARGIN_BITS)?;
    }

    // runner-up: largest logit among the other classes
    let e2 = one_hot(b, k, tr.as_ref().map(|t| t.second))?;
    for j in 0..k {
        b.enforce(LinComb::slot(e[j]), LinComb::slot(e2[j]), LinComb::zero())?;
    }
    let f_sec = select(b, &e2, &f)?;
    let f_sec = fresh(b, f_sec)?;
    for j in 0..k {
        let gap = LinComb::slot(f_sec).with_term(f[j], -Felt::ONE);
        let not_sel = LinComb::constant(Felt::ONE).with_term(e[j], -Felt::ONE);
        let d2 = mul(b, &gap, &not_sel)?;
        range_check(b, &LinComb::slot(d2), MARGIN_BITS)?;
    }
    let margin = LinComb::slot(f_sel).with_term(f_sec, -Felt::ONE);

    // confidence level whose margin interval contains the margin
    let levels = CONF_SCALE as usize + 1;
    let eu = one_hot(b, levels, tr.as_ref().map(|t| t.u_q as usize))?;
    let table_sel = |b: &mut Builder, value: &dyn Fn(usize) -> i64| -> Result<Slot> {
        let mut lc = LinComb::constant_i64(-TABLE_OFFSET);
        for (v, &s) in eu.iter().enumerate() {
            lc.add_term(s, felt_i(value(v) + TABLE_OFFSET));
        }
        fresh(b, lc)
    };
    let u_q = table_sel(b, &|v| v as i64)?;
    let lo = table_sel(b, &|v| spec.table.lo[v] as i64)?;
    let hi = table_sel(b, &|v| spec.table.hi[v] as i64)?;
    range_check(b, &margin.clone().with_term(lo, -Felt::ONE), MARGIN_BITS)?;
    range_check(b, &LinComb::slot(hi).minus(&margin), MARGIN_BITS)?;
    range_check(b, &LinComb::slot(u_q).with_term(tau_w, -Felt::ONE), CONF_BITS)?;

    // policy leaf whose path conjunction holds
    let n_leaves = spec.policy.leaves.len();
    let l = one_hot(b, n_leaves, tr.as_ref().and_then(|t| t.leaf))?;
    for (leaf, &sel) in spec.policy.leaves.iter().zip(&l) {
        for cmp in &leaf.comparisons {
            let x = match cmp.operand {
                Operand::ClassIndicator(c) => e[c],
                Operand::Confidence => u_q,
                Operand::Flag(i) => flags[i],
            };
            let expr = LinComb::constant_i64(cmp.constant).with_term(x, felt_i(cmp.coeff));
            match cmp.relation {
                Relation::EqZero => b.enforce(LinComb::slot(sel), expr, LinComb::zero())?,
                Relation::GeZero => {
                    let p = mul(b, &LinComb::slot(sel), &expr)?;
                    range_check(b, &LinComb::slot(p), CONF_BITS)?;
                }
            }
        }
    }
    let mut decision = LinComb::slot(a_pub).with_term(ONE, Felt::ONE);
    for (leaf, &sel) in spec.policy.leaves.iter().zip(&l) {
        decision.add_term(sel, -Felt::new(leaf.decision.code() + 1));
    }
    enforce_zero(b, decision)?;
    Ok(())
}

/// Shapes of both layouts for one registered configuration.
#[derive(Clone, Debug)]
pub struct Circuit {
    pub spec: CircuitSpec,
    pub full: ConstraintSystem,
    pub abstain: ConstraintSystem,
}

impl Circuit {
    pub fn build(spec: CircuitSpec) -> Result<Self> {
        spec.validate()?;
        let shape = |abstain| -> Result<ConstraintSystem> {
            let mut b = Builder::new(Mode::Shape);
            if let Some(budget) = spec.budget {
                b = b.with_budget(budget);
            }
            synthesize(&mut b, &spec, None, abstain)?;
            Ok(b.finish().0)
        };
        let full = shape(false)?;
        let abstain = shape(true)?;
        Ok(Circuit { spec, full, abstain })
    }

    pub fn shape(&self, action: Decision) -> &ConstraintSystem {
        if action == Decision::Abstain {
            &self.abstain
        } else {
            &self.full
        }
    }

    /// Honest assignment for one instance, checked against its shape.
    pub fn witness(&self, stmt: &Statement, wit: &InstanceWitness) -> Result<Vec<Felt>> {
        let values = self.witness_unchecked(stmt, wit)?;
        self.shape(stmt.action).check(&values)?;
        Ok(values)
    }

    /// Assignment without the satisfaction check (used to build malformed
    /// witnesses in tests and the adversary harness).
    pub fn witness_unchecked(&self, stmt: &Statement, wit: &InstanceWitness) -> Result<Vec<Felt>> {
        let mut b = Builder::new(Mode::Witness);
        synthesize(&mut b, &self.spec, Some((stmt, wit)), stmt.action == Decision::Abstain)?;
        let (_, values) = b.finish();
        let values = values.expect("witness mode tracks values");
        debug_assert_eq!(values.len(), self.shape(stmt.action).num_slots);
        Ok(values)
    }
}
