//! Three-phase attestation pipeline.
//!
//! A session's proof chain starts with a biometric authentication statement
//! (phase 1), binds the agent's local configuration to its on-chain anchor
//! through dual Merkle paths (phase 2), and then appends one envelope per
//! conversation turn, each verifying its predecessor, checking the data
//! provenance of the model response, re-running the tool computation, and
//! committing to the updated session state. The tail envelope therefore
//! attests the entire session; [`finalize_session`] packages it with the
//! public claims a verifier can check against the registry.
//!
//! Public inputs per phase carry only commitments and identifiers; biometric
//! vectors, configuration contents, transcripts, and raw payloads stay in
//! witnesses and never appear in envelopes.

pub mod guests;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{canonical_decode, canonical_encode, digest, Digest, PublicKey};
use crate::crypto::smt::TriePath;
use crate::engine::{
    setup, verify_chain_tail, CompiledProgram, ProofEngine, ProofEnvelope, ProgramCommitment,
    ProveError, PublicParams, VerifyingKey,
};
use crate::identity::{EmbeddingVector, ProfileConfig};
use crate::provenance::{ProvenanceClaim, TlsTranscript};

const BIO_TAG: &[u8] = b"baid.stmt.bio.v1";
const CFG_TAG: &[u8] = b"baid.stmt.cfg.v1";
const TURN_TAG: &[u8] = b"baid.stmt.turn.v1";
const STATE_TAG: &[u8] = b"baid.state.v1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("chain verification failed (first failing depth: {0:?})")]
    BrokenChain(Option<usize>),
    #[error("chain holds {0} links; a session needs at least the two identity phases")]
    ChainTooShort(usize),
    #[error("initial authentication output is false")]
    AuthFailed,
    #[error("malformed statement encoding: {0}")]
    Malformed(&'static str),
    #[error("state commitments do not chain: {0}")]
    BrokenStateChain(&'static str),
    #[error("claims do not match the proof chain: {0}")]
    ClaimsMismatch(&'static str),
}

// ---- session state -------------------------------------------------------

/// One completed turn: the query sent, the authenticated response, and the
/// tool output computed from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    #[serde(with = "crate::crypto::hexvec")]
    pub query: Vec<u8>,
    #[serde(with = "crate::crypto::hexvec")]
    pub answer: Vec<u8>,
    #[serde(with = "crate::crypto::hexvec")]
    pub output: Vec<u8>,
}

/// Append-only session trace; the commitment chain h_0..h_T is the digest
/// of this value after each turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub turn_index: u64,
    pub history: Vec<TurnRecord>,
}

impl SessionState {
    pub fn empty() -> Self {
        SessionState { turn_index: 0, history: Vec::new() }
    }

    /// Canonical wire form: tag, turn index, then (query, answer, output)
    /// triplets in order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(2 + self.history.len() * 3);
        let idx = self.turn_index.to_be_bytes();
        parts.push(STATE_TAG);
        parts.push(&idx);
        for rec in &self.history {
            parts.push(&rec.query);
            parts.push(&rec.answer);
            parts.push(&rec.output);
        }
        canonical_encode(&parts).expect("state parts below 2^32-1 bytes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, &'static str> {
        let parts = canonical_decode(bytes).map_err(|_| "state bytes are not canonically encoded")?;
        if parts.len() < 2 || parts[0] != STATE_TAG {
            return Err("missing state tag");
        }
        let idx_bytes: [u8; 8] = parts[1].as_slice().try_into().map_err(|_| "bad turn index")?;
        let turn_index = u64::from_be_bytes(idx_bytes);
        if (parts.len() - 2) % 3 != 0 {
            return Err("history is not a list of triplets");
        }
        let history: Vec<TurnRecord> = parts[2..]
            .chunks_exact(3)
            .map(|c| TurnRecord { query: c[0].clone(), answer: c[1].clone(), output: c[2].clone() })
            .collect();
        if turn_index != history.len() as u64 {
            return Err("turn index disagrees with history length");
        }
        Ok(SessionState { turn_index, history })
    }

    pub fn commitment(&self) -> Digest {
        digest(&self.canonical_bytes())
    }

    pub fn extend(&self, query: Vec<u8>, answer: Vec<u8>, output: Vec<u8>) -> SessionState {
        let mut next = self.clone();
        next.turn_index += 1;
        next.history.push(TurnRecord { query, answer, output });
        next
    }
}

// ---- statements ----------------------------------------------------------

/// Phase-1 statement: prove the captured embedding matches the enrolled
/// template at threshold tau_num/tau_den for this user, without revealing
/// either vector.
#[derive(Clone, Debug)]
pub struct BiometricStatement {
    pub tau_num: u64,
    pub tau_den: u64,
    pub user_id: String,
    pub v_capture: EmbeddingVector,
    pub v_stored: EmbeddingVector,
    /// User identifier bound to the stored template; the guest insists it
    /// matches the public `user_id`.
    pub bound_user_id: String,
}

impl BiometricStatement {
    pub fn app_inputs(&self) -> Vec<u8> {
        canonical_encode(&[
            BIO_TAG,
            &self.tau_num.to_be_bytes(),
            &self.tau_den.to_be_bytes(),
            self.user_id.as_bytes(),
        ])
        .expect("statement parts below 2^32-1 bytes")
    }

    pub fn witness(&self) -> Vec<u8> {
        canonical_encode(&[
            &self.v_capture.to_bytes(),
            &self.v_stored.to_bytes(),
            self.bound_user_id.as_bytes(),
        ])
        .expect("witness parts below 2^32-1 bytes")
    }
}

/// Decoded public half of a phase-1 statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioPublic {
    pub tau_num: u64,
    pub tau_den: u64,
    pub user_id: String,
}

impl BioPublic {
    pub fn decode(app_inputs: &[u8]) -> Result<Self, PipelineError> {
        let parts = canonical_decode(app_inputs)
            .map_err(|_| PipelineError::Malformed("biometric publics not canonical"))?;
        if parts.len() != 4 || parts[0] != BIO_TAG {
            return Err(PipelineError::Malformed("biometric publics need tag + 3 fields"));
        }
        let num: [u8; 8] = parts[1].as_slice().try_into()
            .map_err(|_| PipelineError::Malformed("bad tau numerator"))?;
        let den: [u8; 8] = parts[2].as_slice().try_into()
            .map_err(|_| PipelineError::Malformed("bad tau denominator"))?;
        let user_id = String::from_utf8(parts[3].clone())
            .map_err(|_| PipelineError::Malformed("user id is not utf-8"))?;
        Ok(BioPublic {
            tau_num: u64::from_be_bytes(num),
            tau_den: u64::from_be_bytes(den),
            user_id,
        })
    }
}

/// Phase-2 statement: prove the local configuration hashes to the on-chain
/// anchor and that the identity slot value is committed under the storage
/// root, itself committed under the (witness) state root.
#[derive(Clone, Debug)]
pub struct ConfigStatement {
    pub r_storage: Digest,
    pub expected_profile_hash: Digest,
    pub slot_key: Digest,
    pub config_local: ProfileConfig,
    pub storage_path: TriePath,
    pub account_path: TriePath,
    pub state_root: Digest,
}

impl ConfigStatement {
    pub fn app_inputs(&self) -> Vec<u8> {
        canonical_encode(&[
            CFG_TAG,
            &self.r_storage.0,
            &self.expected_profile_hash.0,
            &self.slot_key.0,
        ])
        .expect("statement parts below 2^32-1 bytes")
    }

    pub fn witness(&self) -> Vec<u8> {
        canonical_encode(&[
            &self.config_local.canonical_bytes(),
            &serde_json::to_vec(&self.storage_path).expect("path serializes"),
            &serde_json::to_vec(&self.account_path).expect("path serializes"),
            &self.state_root.0,
        ])
        .expect("witness parts below 2^32-1 bytes")
    }
}

/// Decoded public half of a phase-2 statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigPublic {
    pub r_storage: Digest,
    pub expected_profile_hash: Digest,
    pub slot_key: Digest,
}

impl ConfigPublic {
    pub fn decode(app_inputs: &[u8]) -> Result<Self, PipelineError> {
        let parts = canonical_decode(app_inputs)
            .map_err(|_| PipelineError::Malformed("config publics not canonical"))?;
        if parts.len() != 4 || parts[0] != CFG_TAG {
            return Err(PipelineError::Malformed("config publics need tag + 3 digests"));
        }
        let take = |i: usize, what: &'static str| -> Result<Digest, PipelineError> {
            let arr: [u8; 32] = parts[i].as_slice().try_into()
                .map_err(|_| PipelineError::Malformed(what))?;
            Ok(Digest(arr))
        };
        Ok(ConfigPublic {
            r_storage: take(1, "bad storage root")?,
            expected_profile_hash: take(2, "bad profile hash")?,
            slot_key: take(3, "bad slot key")?,
        })
    }
}

/// Per-turn statement: the state-commitment transition, the query and
/// response commitments, the provenance claim, and the trust anchor for the
/// transcript's certificate chain. Everything else is witness.
#[derive(Clone, Debug)]
pub struct TurnStatement {
    pub h_prev: Digest,
    pub query_commitment: Digest,
    pub response_commitment: Digest,
    pub claim: ProvenanceClaim,
    pub root_ca: PublicKey,
    pub h_next: Digest,
    pub transcript: TlsTranscript,
    pub state_prev: SessionState,
    pub tool_name: String,
    pub tool_params: Vec<u8>,
    pub query: Vec<u8>,
}

impl TurnStatement {
    pub fn app_inputs(&self, t: u64) -> Vec<u8> {
        canonical_encode(&[
            TURN_TAG,
            &t.to_be_bytes(),
            &self.h_prev.0,
            &self.query_commitment.0,
            &self.response_commitment.0,
            self.claim.server_name.as_bytes(),
            &self.claim.data_commitment.0,
            &self.root_ca.0,
            &self.h_next.0,
        ])
        .expect("statement parts below 2^32-1 bytes")
    }

    pub fn witness(&self) -> Vec<u8> {
        canonical_encode(&[
            &serde_json::to_vec(&self.transcript).expect("transcript serializes"),
            &self.state_prev.canonical_bytes(),
            self.tool_name.as_bytes(),
            &self.tool_params,
            &self.query,
        ])
        .expect("witness parts below 2^32-1 bytes")
    }
}

/// Decoded public half of a turn statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TurnPublic {
    pub t: u64,
    pub h_prev: Digest,
    pub query_commitment: Digest,
    pub response_commitment: Digest,
    pub server_name: String,
    pub data_commitment: Digest,
    pub root_ca: PublicKey,
    pub h_next: Digest,
}

impl TurnPublic {
    pub fn decode(app_inputs: &[u8]) -> Result<Self, PipelineError> {
        let parts = canonical_decode(app_inputs)
            .map_err(|_| PipelineError::Malformed("turn publics not canonical"))?;
        if parts.len() != 9 || parts[0] != TURN_TAG {
            return Err(PipelineError::Malformed("turn publics need tag + 8 fields"));
        }
        let t_bytes: [u8; 8] = parts[1].as_slice().try_into()
            .map_err(|_| PipelineError::Malformed("bad turn number"))?;
        let take32 = |i: usize, what: &'static str| -> Result<[u8; 32], PipelineError> {
            parts[i].as_slice().try_into().map_err(|_| PipelineError::Malformed(what))
        };
        Ok(TurnPublic {
            t: u64::from_be_bytes(t_bytes),
            h_prev: Digest(take32(2, "bad h_prev")?),
            query_commitment: Digest(take32(3, "bad query commitment")?),
            response_commitment: Digest(take32(4, "bad response commitment")?),
            server_name: String::from_utf8(parts[5].clone())
                .map_err(|_| PipelineError::Malformed("server name is not utf-8"))?,
            data_commitment: Digest(take32(6, "bad data commitment")?),
            root_ca: PublicKey(take32(7, "bad root ca key")?),
            h_next: Digest(take32(8, "bad h_next")?),
        })
    }
}

// ---- pipeline ------------------------------------------------------------

/// The three program commitments a session chain is expected to follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCommitments {
    pub phase1: ProgramCommitment,
    pub phase2: ProgramCommitment,
    pub turn: ProgramCommitment,
}

impl PipelineCommitments {
    /// The standard guest programs' commitments, independent of any setup.
    pub fn standard() -> Self {
        PipelineCommitments {
            phase1: crate::engine::commit_prog(&guests::BiometricGuest),
            phase2: crate::engine::commit_prog(&guests::ConfigGuest),
            turn: crate::engine::commit_prog(&guests::TurnGuest),
        }
    }

    /// Expected commitments by depth: phase 1, phase 2, then turns (the
    /// last entry repeats for every deeper link).
    pub fn expected_chain(&self) -> [ProgramCommitment; 3] {
        [self.phase1, self.phase2, self.turn]
    }
}

/// Prover-side pipeline: the engine with the three standard guests
/// registered and compiled under one parameter set.
pub struct Pipeline {
    engine: ProofEngine,
    pp: PublicParams,
    vk: VerifyingKey,
    commitments: PipelineCommitments,
    phase1: CompiledProgram,
    phase2: CompiledProgram,
    turn: CompiledProgram,
}

impl Pipeline {
    /// Deterministic construction from the step bound and setup seed.
    pub fn new(max_steps: u64, seed: u64) -> Self {
        let (pp, vk) = setup(max_steps, seed);
        let mut engine = ProofEngine::new();
        engine.register(std::sync::Arc::new(guests::BiometricGuest)).expect("fresh engine");
        engine.register(std::sync::Arc::new(guests::ConfigGuest)).expect("fresh engine");
        engine.register(std::sync::Arc::new(guests::TurnGuest)).expect("fresh engine");
        let phase1 = engine.compile(&pp, guests::PHASE1_PROGRAM_ID).expect("registered");
        let phase2 = engine.compile(&pp, guests::PHASE2_PROGRAM_ID).expect("registered");
        let turn = engine.compile(&pp, guests::TURN_PROGRAM_ID).expect("registered");
        let commitments = PipelineCommitments::standard();
        Pipeline { engine, pp, vk, commitments, phase1, phase2, turn }
    }

    pub fn vk(&self) -> VerifyingKey {
        self.vk
    }

    pub fn params(&self) -> &PublicParams {
        &self.pp
    }

    pub fn commitments(&self) -> PipelineCommitments {
        self.commitments
    }

    /// Prove initial biometric authentication (chain genesis).
    pub fn prove_phase1(&self, stmt: &BiometricStatement) -> Result<ProofEnvelope, ProveError> {
        self.engine
            .prove(&self.pp, &self.phase1, &stmt.app_inputs(), &stmt.witness(), None)
    }

    /// Prove configuration integrity on top of the phase-1 envelope.
    pub fn prove_phase2(
        &self,
        stmt: &ConfigStatement,
        prior: &ProofEnvelope,
    ) -> Result<ProofEnvelope, ProveError> {
        self.engine
            .prove(&self.pp, &self.phase2, &stmt.app_inputs(), &stmt.witness(), Some(prior))
    }

    /// Prove conversation turn `t` on top of the prior envelope (phase 2
    /// for t = 1, the previous turn otherwise).
    pub fn prove_turn(
        &self,
        t: u64,
        stmt: &TurnStatement,
        prior: &ProofEnvelope,
    ) -> Result<ProofEnvelope, ProveError> {
        self.engine
            .prove(&self.pp, &self.turn, &stmt.app_inputs(t), &stmt.witness(), Some(prior))
    }

    /// Package the chain tail with its derived public claims.
    pub fn finalize_session(&self, tail: &ProofEnvelope) -> Result<FinalAttestation, PipelineError> {
        let claims = derive_session_claims(&self.vk, &self.commitments, tail)?;
        Ok(FinalAttestation { tail: tail.clone(), claims })
    }
}

// ---- final attestation ----------------------------------------------------

/// Public claims a session chain commits to: who ran it, the full state-
/// commitment trace, and the per-turn response commitments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionClaims {
    pub agent_id: String,
    pub user_id: String,
    /// h_0 through h_T.
    pub state_commitments: Vec<Digest>,
    /// One per turn, in order.
    pub response_commitments: Vec<Digest>,
}

/// The session's unified proof: the tail envelope (which embeds the whole
/// chain) plus the claims derived from its public inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAttestation {
    pub tail: ProofEnvelope,
    pub claims: SessionClaims,
}

/// Unfold the complete chain embedded in a tail envelope, genesis first.
pub fn chain_envelopes(tail: &ProofEnvelope) -> Result<Vec<ProofEnvelope>, PipelineError> {
    let mut rev = vec![tail.clone()];
    loop {
        let prior = rev
            .last()
            .unwrap()
            .prior()
            .map_err(|_| PipelineError::Malformed("embedded prior does not parse"))?;
        match prior {
            Some(env) => rev.push(env),
            None => break,
        }
    }
    rev.reverse();
    Ok(rev)
}

/// Walk the chain from `tail` and derive the claims it proves. Fails when
/// the chain does not verify, the phases are out of order, authentication
/// output is false, or the state commitments do not thread.
pub fn derive_session_claims(
    vk: &VerifyingKey,
    commitments: &PipelineCommitments,
    tail: &ProofEnvelope,
) -> Result<SessionClaims, PipelineError> {
    let report = verify_chain_tail(vk, tail, &commitments.expected_chain());
    if !report.ok {
        return Err(PipelineError::BrokenChain(report.first_failure_depth));
    }

    let chain = chain_envelopes(tail)?;
    if chain.len() < 2 {
        return Err(PipelineError::ChainTooShort(chain.len()));
    }

    // Phase 1: authentication must have succeeded.
    let bio = BioPublic::decode(
        &chain[0].app_inputs().map_err(|_| PipelineError::Malformed("phase-1 publics"))?,
    )?;
    if chain[0].public_output != [1u8] {
        return Err(PipelineError::AuthFailed);
    }

    // Phase 2: the output is the verified identity-slot value.
    let slot_value: [u8; 32] = chain[1]
        .public_output
        .as_slice()
        .try_into()
        .map_err(|_| PipelineError::Malformed("phase-2 output must be 32 bytes"))?;
    let agent_id = format!("agentid:{}", hex::encode(slot_value));

    // Turns: indices and state commitments must thread.
    let h0 = SessionState::empty().commitment();
    let mut state_commitments = vec![h0];
    let mut response_commitments = Vec::new();
    for (i, env) in chain[2..].iter().enumerate() {
        let publics = TurnPublic::decode(
            &env.app_inputs().map_err(|_| PipelineError::Malformed("turn publics"))?,
        )?;
        if publics.t != (i as u64) + 1 {
            return Err(PipelineError::BrokenStateChain("turn numbers must run 1..T"));
        }
        if publics.h_prev != *state_commitments.last().unwrap() {
            return Err(PipelineError::BrokenStateChain("h_prev does not extend the trace"));
        }
        state_commitments.push(publics.h_next);
        response_commitments.push(publics.response_commitment);
    }

    Ok(SessionClaims {
        agent_id,
        user_id: bio.user_id,
        state_commitments,
        response_commitments,
    })
}

/// Verifier-side acceptance of a final attestation: re-derive the claims
/// from the tail and insist the bundle states exactly those.
pub fn verify_final_attestation(
    vk: &VerifyingKey,
    commitments: &PipelineCommitments,
    attestation: &FinalAttestation,
) -> Result<(), PipelineError> {
    let derived = derive_session_claims(vk, commitments, &attestation.tail)?;
    if derived != attestation.claims {
        return Err(PipelineError::ClaimsMismatch("stated claims differ from the chain"));
    }
    Ok(())
}
