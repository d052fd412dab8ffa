//! Malicious provers used to measure spot-check soundness.

use super::circuit::{Circuit, InstanceWitness, Statement};
use super::proof::{prove_unchecked, Proof, ProveParams};
use crate::error::{Error, Result};
use crate::policy::Decision;

/// Claims `forged` instead of the honest action while committing the honest
/// witness otherwise. Only the decision constraint is violated, so the proof
/// is caught exactly when a spot check lands on it.
pub fn prove_forged_action(
    circuit: &Circuit,
    honest: &Statement,
    witness: &InstanceWitness,
    forged: Decision,
    params: &ProveParams,
) -> Result<(Statement, Proof, usize)> {
    if honest.action == Decision::Abstain || forged == Decision::Abstain || forged == honest.action {
        return Err(Error::Parameter("forgery needs two distinct non-abstain actions".into()));
    }
    let stmt = Statement { action: forged, ..honest.clone() };
    let local = circuit.witness_unchecked(&stmt, witness)?;
    let violated = circuit.full.unsatisfied(&local);
    if violated.len() != 1 {
        return Err(Error::Parameter(format!("forgery violates {} constraints", violated.len())));
    }
    let proof = prove_unchecked(circuit, std::slice::from_ref(&stmt), &[local], params)?;
    Ok((stmt, proof, violated[0]))
}
