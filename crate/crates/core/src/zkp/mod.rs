//! Commit-and-prove layer: field, sponge, constraint systems, circuits and
//! the spot-check prover/verifier.

pub mod adversary;
pub mod circuit;
pub mod field;
pub mod gadgets;
pub mod merkle;
pub mod proof;
pub mod r1cs;
pub mod registry;
pub mod sponge;
pub mod wire;

pub use circuit::{commit_latent, Circuit, CircuitSpec, Head, InstanceWitness, Statement};
pub use field::Felt;
pub use proof::{prove, prove_batch, verify, verify_batch, Proof, ProveParams, RejectReason, Verdict, VerifyParams};
pub use registry::{ModelIdentity, Registry, RegistryEntry};
