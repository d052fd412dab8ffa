//! Reusable constraint gadgets.
//!
//! Every gadget runs identically in shape and witness mode; values are
//! computed from the builder's assignment when one is tracked. Constraint
//! counts of each gadget are mirrored by the `*_cost` functions, which the
//! closed-form circuit size in [`crate::zkp::circuit`] is built from.

use super::field::Felt;
use super::r1cs::{Builder, LinComb, Slot, MAX_WIRES, ONE};
use super::sponge::{capacity_tag, is_full_round, round_constants, Domain, RATE, WIDTH};
use crate::error::Result;

/// Constraints needed to force a combination with `wires` non-constant
/// slots to zero: partial sums of `MAX_WIRES - 1` terms are chained into
/// fresh accumulator slots until the remainder fits in one constraint.
pub const fn zero_cost(wires: usize) -> usize {
    if wires <= MAX_WIRES {
        1
    } else {
        1 + (wires - MAX_WIRES).div_ceil(MAX_WIRES - 2)
    }
}

/// Enforces `lc = 0`, splitting wide combinations.
pub fn enforce_zero(b: &mut Builder, lc: LinComb) -> Result<()> {
    let mut lc = lc;
    while lc.wire_count() > MAX_WIRES {
        let mut head = LinComb::zero();
        let mut tail = LinComb::zero();
        let mut taken = 0;
        for &(s, c) in lc.terms() {
            if s == ONE || taken < MAX_WIRES - 1 {
                if s != ONE {
                    taken += 1;
                }
                head.add_term(s, c);
            } else {
                tail.add_term(s, c);
            }
        }
        let v = b.eval(&head);
        let acc = b.alloc(|| v);
        b.enforce(head, LinComb::constant(Felt::ONE), LinComb::slot(acc))?;
        lc = tail.with_term(acc, Felt::ONE);
    }
    b.enforce(lc, LinComb::constant(Felt::ONE), LinComb::zero())
}

/// Constraints spent by [`materialize`] on a combination with `wires` slots.
pub const fn materialize_cost(wires: usize, is_plain_slot: bool) -> usize {
    if is_plain_slot {
        0
    } else {
        zero_cost(wires + 1)
    }
}

/// Returns a slot holding the value of `lc`; plain slots are reused.
pub fn materialize(b: &mut Builder, lc: &LinComb) -> Result<Slot> {
    if let [(s, c)] = lc.terms() {
        if *s != ONE && *c == Felt::ONE {
            return Ok(*s);
        }
    }
    let v = b.eval(lc);
    let out = b.alloc(|| v);
    enforce_zero(b, lc.clone().with_term(out, -Felt::ONE))?;
    Ok(out)
}

/// Returns `x * y` in a fresh slot (one constraint).
pub fn mul(b: &mut Builder, x: &LinComb, y: &LinComb) -> Result<Slot> {
    let v = b.eval(x) * b.eval(y);
    let out = b.alloc(|| v);
    b.enforce(x.clone(), y.clone(), LinComb::slot(out))?;
    Ok(out)
}

/// Allocates a bit with value `bit` and forces it boolean.
pub fn alloc_bit(b: &mut Builder, bit: bool) -> Result<Slot> {
    let s = b.alloc(|| Felt::from(bit));
    enforce_boolean(b, s)?;
    Ok(s)
}

pub fn enforce_boolean(b: &mut Builder, s: Slot) -> Result<()> {
    // s * (s - 1) = 0
    b.enforce(
        LinComb::slot(s),
        LinComb::slot(s).with_term(ONE, -Felt::ONE),
        LinComb::zero(),
    )
}

/// Bits of the low `bits` of a field value, little-endian.
fn low_bits(v: Felt, bits: usize) -> impl Iterator<Item = bool> {
    let x = v.as_u64();
    (0..bits).map(move |i| (x >> i) & 1 == 1)
}

/// Allocates `bits` boolean slots whose weighted sum recomposes `v`.
/// The caller ties the recomposition to whatever it must equal.
pub fn alloc_bits(b: &mut Builder, v: Felt, bits: usize) -> Result<(Vec<Slot>, LinComb)> {
    let mut slots = Vec::with_capacity(bits);
    let mut recomposed = LinComb::zero();
    let vals: Vec<bool> = low_bits(v, bits).collect();
    for (i, bit) in vals.into_iter().enumerate() {
        let s = alloc_bit(b, bit)?;
        recomposed.add_term(s, Felt::new(1u64 << i));
        slots.push(s);
    }
    Ok((slots, recomposed))
}

pub const fn range_cost(lc_wires: usize, bits: usize) -> usize {
    bits + zero_cost(lc_wires + bits)
}

/// Proves `0 <= lc < 2^bits` by binary decomposition.
pub fn range_check(b: &mut Builder, lc: &LinComb, bits: usize) -> Result<()> {
    debug_assert!(bits < 63);
    let v = b.eval(lc);
    let (_, recomposed) = alloc_bits(b, v, bits)?;
    enforce_zero(b, lc.clone().minus(&recomposed))
}

pub const fn one_hot_cost(n: usize) -> usize {
    n + zero_cost(n)
}

/// Allocates an `n`-way one-hot selector with the given hot position
/// (`None` only in shape mode or for deliberately malformed witnesses).
pub fn one_hot(b: &mut Builder, n: usize, hot: Option<usize>) -> Result<Vec<Slot>> {
    let mut slots = Vec::with_capacity(n);
    let mut sum = LinComb::constant(-Felt::ONE);
    for i in 0..n {
        let s = alloc_bit(b, hot == Some(i))?;
        sum.add_term(s, Felt::ONE);
        slots.push(s);
    }
    enforce_zero(b, sum)?;
    Ok(slots)
}

/// Selector-weighted sum `Σ sel_i * vals_i` of slot values, as fresh product slots.
pub fn select(b: &mut Builder, sel: &[Slot], vals: &[Slot]) -> Result<LinComb> {
    let mut out = LinComb::zero();
    for (&s, &v) in sel.iter().zip(vals) {
        let p = mul(b, &LinComb::slot(s), &LinComb::slot(v))?;
        out.add_term(p, Felt::ONE);
    }
    Ok(out)
}

/// `x^7` with two intermediate slots (four constraints: x², x⁴, x⁶, x⁷).
/// Constant inputs are folded without constraints.
fn sbox(b: &mut Builder, x: &LinComb) -> Result<LinComb> {
    if x.is_constant() {
        return Ok(LinComb::constant(super::sponge::sbox(x.constant_term())));
    }
    let x2 = mul(b, x, x)?;
    let x4 = mul(b, &LinComb::slot(x2), &LinComb::slot(x2))?;
    let x6 = mul(b, &LinComb::slot(x4), &LinComb::slot(x2))?;
    let x7 = mul(b, &LinComb::slot(x6), x)?;
    Ok(LinComb::slot(x7))
}

pub const SBOX_COST: usize = 4;

fn mds(state: &[LinComb; WIDTH]) -> [LinComb; WIDTH] {
    let sum = state[0].clone().plus(&state[1]).plus(&state[2]);
    [sum.clone().plus(&state[0]), sum.clone().plus(&state[1]), sum.plus(&state[2])]
}

/// In-circuit permutation. State elements stay within four wires: full
/// rounds produce three fresh S-box outputs, and after each partial round
/// the two pass-through elements are materialized.
pub fn permute(b: &mut Builder, state: &mut [LinComb; WIDTH]) -> Result<()> {
    let rc = round_constants();
    for (round, consts) in rc.iter().enumerate() {
        for (s, c) in state.iter_mut().zip(consts) {
            s.add_term(ONE, *c);
        }
        if is_full_round(round) {
            for s in state.iter_mut() {
                *s = sbox(b, s)?;
            }
            *state = mds(state);
        } else {
            state[0] = sbox(b, &state[0])?;
            *state = mds(state);
            for s in state[1..].iter_mut() {
                *s = LinComb::slot(materialize(b, s)?);
            }
        }
    }
    Ok(())
}

/// Constraint cost of one in-circuit permutation when `constant_inputs` of
/// the three state elements entering the first round are constants.
pub const fn permute_cost(constant_inputs: usize) -> usize {
    let full = (super::sponge::FULL_ROUNDS * WIDTH - constant_inputs) * SBOX_COST;
    // each partial round: one S-box and two materializations of at most
    // four wires (never plain slots: the MDS mixes three terms)
    let partial = super::sponge::PARTIAL_ROUNDS * (SBOX_COST + 2 * materialize_cost(4, false));
    full + partial
}

/// In-circuit sponge hash; returns the digest as a combination.
/// Inputs must be non-empty and each combination must have exactly one wire.
pub fn sponge_hash(b: &mut Builder, domain: Domain, inputs: &[LinComb]) -> Result<LinComb> {
    if inputs.is_empty() || inputs.iter().any(|lc| lc.wire_count() != 1) {
        return crate::error::param("in-circuit sponge takes non-empty single-wire inputs");
    }
    let mut state = [
        LinComb::zero(),
        LinComb::zero(),
        LinComb::constant(capacity_tag(domain, inputs.len())),
    ];
    for chunk in inputs.chunks(RATE) {
        for (s, e) in state.iter_mut().zip(chunk) {
            s.add_lc(e, Felt::ONE);
        }
        permute(b, &mut state)?;
    }
    Ok(state[0].clone())
}

/// Constraint cost of [`sponge_hash`] over `n >= 1` single-wire inputs.
pub const fn sponge_cost(n: usize) -> usize {
    let blocks = n.div_ceil(RATE);
    // first block: capacity constant, plus the second rate element when
    // the whole input is a single element
    let first = if n == 1 { 2 } else { 1 };
    permute_cost(first) + (blocks - 1) * permute_cost(0)
}
