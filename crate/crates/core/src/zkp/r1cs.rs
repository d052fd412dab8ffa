//! Rank-1 constraint systems: `<a, w> * <b, w> = <c, w>`.
//!
//! Slot 0 of every witness is the constant one. Every constraint touches at
//! most [`MAX_WIRES`] other slots; gadgets split long linear combinations into
//! chained partial sums to respect this, which keeps the number of wires the
//! prover must open per spot-checked constraint fixed.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::field::Felt;
use crate::error::{Error, Result};

/// Witness index; slot [`ONE`] always holds `1`.
pub type Slot = usize;

pub const ONE: Slot = 0;

/// Upper bound on distinct non-constant slots referenced by one constraint.
pub const MAX_WIRES: usize = 6;

/// Circuit family a constraint belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Latent commitment.
    C1,
    /// Model-hash and threshold consistency.
    C2,
    /// Time-window and nonce binding.
    C3,
    /// Decision correctness.
    C4,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Sparse linear combination, kept sorted by slot with merged coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinComb(Vec<(Slot, Felt)>);

impl LinComb {
    pub fn zero() -> Self {
        LinComb(Vec::new())
    }

    pub fn constant(c: Felt) -> Self {
        let mut lc = LinComb::zero();
        lc.add_term(ONE, c);
        lc
    }

    pub fn constant_i64(c: i64) -> Self {
        Self::constant(Felt::from_i64(c))
    }

    pub fn slot(s: Slot) -> Self {
        LinComb(vec![(s, Felt::ONE)])
    }

    pub fn terms(&self) -> &[(Slot, Felt)] {
        &self.0
    }

    pub fn add_term(&mut self, slot: Slot, coeff: Felt) {
        if coeff.is_zero() {
            return;
        }
        match self.0.binary_search_by_key(&slot, |t| t.0) {
            Ok(i) => {
                self.0[i].1 += coeff;
                if self.0[i].1.is_zero() {
                    self.0.remove(i);
                }
            }
            Err(i) => self.0.insert(i, (slot, coeff)),
        }
    }

    pub fn with_term(mut self, slot: Slot, coeff: Felt) -> Self {
        self.add_term(slot, coeff);
        self
    }

    pub fn add_lc(&mut self, other: &LinComb, scale: Felt) {
        for &(s, c) in &other.0 {
            self.add_term(s, c * scale);
        }
    }

    pub fn plus(mut self, other: &LinComb) -> Self {
        self.add_lc(other, Felt::ONE);
        self
    }

    pub fn minus(mut self, other: &LinComb) -> Self {
        self.add_lc(other, -Felt::ONE);
        self
    }

    pub fn scaled(&self, k: Felt) -> Self {
        let mut out = LinComb::zero();
        out.add_lc(self, k);
        out
    }

    /// Constant term (coefficient on [`ONE`]).
    pub fn constant_term(&self) -> Felt {
        self.0.first().filter(|t| t.0 == ONE).map_or(Felt::ZERO, |t| t.1)
    }

    /// Non-constant slots, ascending.
    pub fn wires(&self) -> impl Iterator<Item = Slot> + '_ {
        self.0.iter().map(|t| t.0).filter(|&s| s != ONE)
    }

    pub fn wire_count(&self) -> usize {
        self.wires().count()
    }

    pub fn is_constant(&self) -> bool {
        self.wire_count() == 0
    }

    /// Evaluates against a full assignment.
    pub fn eval(&self, w: &[Felt]) -> Felt {
        self.0.iter().map(|&(s, c)| c * if s == ONE { Felt::ONE } else { w[s] }).sum()
    }

    /// Evaluates with a slot lookup that may fail (used by the verifier).
    pub fn eval_with(&self, mut value: impl FnMut(Slot) -> Option<Felt>) -> Option<Felt> {
        let mut acc = Felt::ZERO;
        for &(s, c) in &self.0 {
            let v = if s == ONE { Felt::ONE } else { value(s)? };
            acc += c * v;
        }
        Some(acc)
    }

    /// Applies a slot relabelling; [`ONE`] is always fixed.
    pub fn remap(&self, map: impl Fn(Slot) -> Slot) -> LinComb {
        let mut out = LinComb::zero();
        for &(s, c) in &self.0 {
            out.add_term(if s == ONE { ONE } else { map(s) }, c);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub a: LinComb,
    pub b: LinComb,
    pub c: LinComb,
    pub family: Family,
}

impl Constraint {
    pub fn is_satisfied(&self, w: &[Felt]) -> bool {
        self.a.eval(w) * self.b.eval(w) == self.c.eval(w)
    }

    /// Distinct non-constant slots referenced by the constraint, ascending.
    pub fn wires(&self) -> Vec<Slot> {
        let mut v: Vec<Slot> = self.a.wires().chain(self.b.wires()).chain(self.c.wires()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConstraintSystem {
    pub constraints: Vec<Constraint>,
    pub num_slots: usize,
    /// Public-input slots with their names, in statement order.
    pub public: Vec<(Slot, &'static str)>,
}

impl ConstraintSystem {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Indices of violated constraints.
    pub fn unsatisfied(&self, w: &[Felt]) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_satisfied(w))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn check(&self, w: &[Felt]) -> Result<()> {
        if w.len() != self.num_slots || w.first() != Some(&Felt::ONE) {
            return Err(Error::Parameter(format!(
                "witness has {} slots, system expects {}",
                w.len(),
                self.num_slots
            )));
        }
        match self.constraints.iter().position(|c| !c.is_satisfied(w)) {
            None => Ok(()),
            Some(index) => Err(Error::Unsatisfied {
                index,
                label: self.constraints[index].family.to_string(),
            }),
        }
    }

    pub fn count_by_family(&self, family: Family) -> usize {
        self.constraints.iter().filter(|c| c.family == family).count()
    }
}

/// What a [`Builder`] records while a circuit is synthesized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Constraints only, no values.
    Shape,
    /// Values only; constraints are discarded.
    Witness,
    /// Both (used by tests and the prover's self-check).
    Full,
}

/// Incremental circuit synthesizer. Gadgets run identically in every mode so
/// the slot layout of a witness always matches its shape.
pub struct Builder {
    mode: Mode,
    family: Family,
    constraints: Vec<Constraint>,
    values: Vec<Felt>,
    num_slots: usize,
    public: Vec<(Slot, &'static str)>,
    budget: Option<usize>,
    emitted: usize,
}

impl Builder {
    pub fn new(mode: Mode) -> Self {
        Builder {
            mode,
            family: Family::C1,
            constraints: Vec::new(),
            values: vec![Felt::ONE],
            num_slots: 1,
            public: Vec::new(),
            budget: None,
            emitted: 0,
        }
    }

    pub fn with_budget(mut self, max_constraints: usize) -> Self {
        self.budget = Some(max_constraints);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has_values(&self) -> bool {
        self.mode != Mode::Shape
    }

    pub fn set_family(&mut self, family: Family) {
        self.family = family;
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn constraint_count(&self) -> usize {
        self.emitted
    }

    /// Allocates a private slot; `value` is only consulted when values are tracked.
    pub fn alloc(&mut self, value: impl FnOnce() -> Felt) -> Slot {
        let slot = self.num_slots;
        self.num_slots += 1;
        if self.has_values() {
            self.values.push(value());
        }
        slot
    }

    pub fn alloc_public(&mut self, name: &'static str, value: impl FnOnce() -> Felt) -> Slot {
        let slot = self.alloc(value);
        self.public.push((slot, name));
        slot
    }

    pub fn value(&self, slot: Slot) -> Felt {
        debug_assert!(self.has_values());
        self.values.get(slot).copied().unwrap_or(Felt::ZERO)
    }

    /// Value of a combination, or zero in shape mode.
    pub fn eval(&self, lc: &LinComb) -> Felt {
        if self.has_values() {
            lc.eval(&self.values)
        } else {
            Felt::ZERO
        }
    }

    pub fn enforce(&mut self, a: LinComb, b: LinComb, c: LinComb) -> Result<()> {
        let constraint = Constraint { a, b, c, family: self.family };
        let wires = constraint.wires().len();
        if wires > MAX_WIRES {
            return Err(Error::Capacity(format!(
                "constraint touches {wires} wires (limit {MAX_WIRES})"
            )));
        }
        self.emitted += 1;
        if let Some(budget) = self.budget {
            if self.emitted > budget {
                return Err(Error::Capacity(format!("constraint budget of {budget} exceeded")));
            }
        }
        if self.mode != Mode::Witness {
            self.constraints.push(constraint);
        }
        Ok(())
    }

    pub fn finish(self) -> (ConstraintSystem, Option<Vec<Felt>>) {
        let cs = ConstraintSystem {
            constraints: self.constraints,
            num_slots: self.num_slots,
            public: self.public,
        };
        let values = (self.mode != Mode::Shape).then_some(self.values);
        (cs, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lincomb_merges_and_cancels() {
        let lc = LinComb::slot(3).with_term(1, Felt::new(2)).with_term(3, -Felt::ONE);
        assert_eq!(lc.terms(), &[(1, Felt::new(2))]);
        let lc = lc.plus(&LinComb::constant_i64(-4));
        assert_eq!(lc.constant_term(), Felt::from_i64(-4));
        assert_eq!(lc.wire_count(), 1);
    }

    #[test]
    fn wide_constraints_are_refused() {
        let mut b = Builder::new(Mode::Shape);
        let slots: Vec<Slot> = (0..7).map(|_| b.alloc(|| Felt::ZERO)).collect();
        let mut wide = LinComb::zero();
        for s in &slots {
            wide.add_term(*s, Felt::ONE);
        }
        assert!(matches!(
            b.enforce(wide, LinComb::constant(Felt::ONE), LinComb::zero()),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn budget_is_enforced() {
        let mut b = Builder::new(Mode::Shape).with_budget(1);
        let s = b.alloc(|| Felt::ZERO);
        b.enforce(LinComb::slot(s), LinComb::slot(s), LinComb::slot(s)).unwrap();
        assert!(b.enforce(LinComb::slot(s), LinComb::slot(s), LinComb::slot(s)).is_err());
    }

    #[test]
    fn satisfaction_by_direct_evaluation() {
        let mut b = Builder::new(Mode::Full);
        let x = b.alloc(|| Felt::new(3));
        let y = b.alloc(|| Felt::new(9));
        b.enforce(LinComb::slot(x), LinComb::slot(x), LinComb::slot(y)).unwrap();
        let (cs, w) = b.finish();
        let mut w = w.unwrap();
        assert!(cs.check(&w).is_ok());
        w[y] = Felt::new(10);
        assert_eq!(cs.unsatisfied(&w), vec![0]);
    }
}
