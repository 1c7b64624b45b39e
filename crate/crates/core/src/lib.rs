//! Agent identity framework at desk scale: canonical agent identifiers
//! bound to owner biometrics and program commitments, a simulated on-chain
//! identity registry with storage proofs and gas metering, an
//! attestation-backed recursive proof engine, TLS-style data provenance,
//! verifiable permission credentials, and a deterministic multi-agent
//! runtime that exercises the whole stack.

pub mod credential;
pub mod crypto;
pub mod engine;
pub mod identity;
pub mod ledger;
pub mod pipeline;
pub mod provenance;
pub mod runtime;
