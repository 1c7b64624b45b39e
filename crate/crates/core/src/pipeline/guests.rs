//! Guest programs for the three pipeline phases.
//!
//! Each guest re-derives every public claim from witness material and fails
//! with [`GuestFault::Constraint`] when anything disagrees; mismatched chain
//! linkage fails with [`GuestFault::BrokenChain`]. Faults abort proving, so
//! no envelope ever exists for a statement the guest rejected.

use num_bigint::BigInt;

use crate::crypto::smt::{verify_path, TriePath};
use crate::crypto::{canonical_decode, digest, Digest};
use crate::engine::{Guest, GuestEnv, GuestFault, GuestOutput, ProgramDescriptor};
use crate::identity::{profile_hash, EmbeddingVector, ProfileConfig, EMBEDDING_DIM};
use crate::ledger::account_hash;
use crate::provenance::{verify_provenance, ProvenanceClaim, TlsTranscript};

use super::{BioPublic, ConfigPublic, PipelineCommitments, SessionState, TurnPublic};

pub const PHASE1_PROGRAM_ID: &str = "baid.guest.biometric";
pub const PHASE2_PROGRAM_ID: &str = "baid.guest.config";
pub const TURN_PROGRAM_ID: &str = "baid.guest.turn";

fn fault(msg: impl Into<String>) -> GuestFault {
    GuestFault::Constraint(msg.into())
}

// ---- phase 1: biometric similarity ----------------------------------------

/// Proves cosine similarity between the captured and enrolled embeddings
/// meets the threshold, and that the enrolled template belongs to the public
/// user id. Vectors never leave the witness.
pub struct BiometricGuest;

/// Exact threshold test: cos(c, s) >= num/den over fixed-point integer
/// vectors, evaluated without division or rounding. With dot = <c, s> and
/// n1, n2 the squared norms, the test holds iff dot > 0 and
/// dot^2 * den^2 >= num^2 * n1 * n2 (for num/den > 0; square both sides,
/// denominators cleared). All products run over arbitrary-precision
/// integers, so the decision is exact for every representable input.
pub fn cosine_at_least(
    capture: &EmbeddingVector,
    stored: &EmbeddingVector,
    tau_num: u64,
    tau_den: u64,
) -> Result<bool, GuestFault> {
    if tau_num == 0 || tau_den == 0 || tau_num > tau_den {
        return Err(fault("threshold must satisfy 0 < num/den <= 1"));
    }
    let n1 = capture.squared_norm();
    let n2 = stored.squared_norm();
    if n1 == 0 || n2 == 0 {
        return Err(fault("zero-norm embedding has no direction"));
    }
    let dot: i128 = capture
        .components()
        .iter()
        .zip(stored.components())
        .map(|(&a, &b)| (a as i128) * (b as i128))
        .sum();
    if dot <= 0 {
        return Ok(false);
    }
    let lhs = BigInt::from(dot) * BigInt::from(dot) * BigInt::from(tau_den) * BigInt::from(tau_den);
    let rhs = BigInt::from(tau_num) * BigInt::from(tau_num) * BigInt::from(n1) * BigInt::from(n2);
    Ok(lhs >= rhs)
}

impl Guest for BiometricGuest {
    fn descriptor(&self) -> ProgramDescriptor {
        ProgramDescriptor {
            id: PHASE1_PROGRAM_ID.to_string(),
            version: "1.0.0".to_string(),
            io_schema: "in: tau fraction + user id; out: 1-byte match flag".to_string(),
        }
    }

    fn evaluate(&self, env: &GuestEnv) -> Result<GuestOutput, GuestFault> {
        if env.prior.is_some() {
            return Err(GuestFault::BrokenChain(
                "biometric statements start a chain; no prior is accepted".to_string(),
            ));
        }
        let publics = BioPublic::decode(env.app_inputs).map_err(|e| fault(e.to_string()))?;
        let witness = canonical_decode(env.witness)
            .map_err(|_| fault("witness is not canonically encoded"))?;
        if witness.len() != 3 {
            return Err(fault("witness needs capture, template, and bound user id"));
        }
        let capture =
            EmbeddingVector::from_bytes(&witness[0]).map_err(|e| fault(e.to_string()))?;
        let stored =
            EmbeddingVector::from_bytes(&witness[1]).map_err(|e| fault(e.to_string()))?;
        if witness[2] != publics.user_id.as_bytes() {
            return Err(fault("template is enrolled to a different user id"));
        }
        let matched = cosine_at_least(&capture, &stored, publics.tau_num, publics.tau_den)?;
        Ok(GuestOutput {
            output: vec![matched as u8],
            // Three length-n inner products plus the constant-size compare.
            steps: 3 * EMBEDDING_DIM as u64 + 1,
        })
    }
}

// ---- phase 2: configuration integrity --------------------------------------

/// Proves the local profile hashes to the public anchor and that the
/// identity slot carries a committed value under the storage root, itself
/// bound to the account leaf under the (witness) state root. Only extends a
/// successful phase-1 envelope.
pub struct ConfigGuest;

impl Guest for ConfigGuest {
    fn descriptor(&self) -> ProgramDescriptor {
        ProgramDescriptor {
            id: PHASE2_PROGRAM_ID.to_string(),
            version: "1.0.0".to_string(),
            io_schema: "in: storage root + profile hash + slot key; out: 32-byte slot value"
                .to_string(),
        }
    }

    fn evaluate(&self, env: &GuestEnv) -> Result<GuestOutput, GuestFault> {
        let phase1 = PipelineCommitments::standard().phase1;
        let prior = env.prior.ok_or_else(|| {
            GuestFault::BrokenChain("configuration statements extend a phase-1 envelope".to_string())
        })?;
        if prior.program != phase1 {
            return Err(GuestFault::BrokenChain(
                "prior envelope is not a biometric statement".to_string(),
            ));
        }
        if prior.public_output != [1u8] {
            return Err(fault("initial authentication failed; refusing to bind configuration"));
        }

        let publics = ConfigPublic::decode(env.app_inputs).map_err(|e| fault(e.to_string()))?;
        let witness = canonical_decode(env.witness)
            .map_err(|_| fault("witness is not canonically encoded"))?;
        if witness.len() != 4 {
            return Err(fault("witness needs config, two paths, and the state root"));
        }
        let config: ProfileConfig = serde_json::from_slice(&witness[0])
            .map_err(|_| fault("configuration does not parse"))?;
        let storage_path: TriePath = serde_json::from_slice(&witness[1])
            .map_err(|_| fault("storage path does not parse"))?;
        let account_path: TriePath = serde_json::from_slice(&witness[2])
            .map_err(|_| fault("account path does not parse"))?;
        let state_root_arr: [u8; 32] = witness[3]
            .as_slice()
            .try_into()
            .map_err(|_| fault("state root must be 32 bytes"))?;
        let state_root = Digest(state_root_arr);

        if profile_hash(&config) != publics.expected_profile_hash {
            return Err(fault("local configuration diverges from its registered hash"));
        }
        if storage_path.key != publics.slot_key.0 {
            return Err(fault("storage path opens a different slot"));
        }
        if storage_path.is_vacant() {
            return Err(fault("identity slot is vacant"));
        }
        if !verify_path(&publics.r_storage, &storage_path) {
            return Err(fault("storage path does not verify against the storage root"));
        }
        if account_path.value != account_hash(&publics.r_storage).0 {
            return Err(fault("account leaf does not bind this storage root"));
        }
        if !verify_path(&state_root, &account_path) {
            return Err(fault("account path does not verify against the state root"));
        }

        Ok(GuestOutput {
            output: storage_path.value.to_vec(),
            // Two full authentication paths dominate the work.
            steps: 2 * crate::crypto::smt::TRIE_DEPTH as u64 + 8,
        })
    }
}

// ---- per-turn: provenance + recomputation + state transition ---------------

/// Proves one conversation turn: the transcript authenticates the model
/// response under the claimed server identity, the tool output is the
/// declared function of that response, and the session state advanced from
/// h_prev to h_next by exactly this turn. Extends phase 2 for turn 1 and the
/// previous turn envelope afterwards.
pub struct TurnGuest;

impl Guest for TurnGuest {
    fn descriptor(&self) -> ProgramDescriptor {
        ProgramDescriptor {
            id: TURN_PROGRAM_ID.to_string(),
            version: "1.0.0".to_string(),
            io_schema:
                "in: turn number + state/query/response commitments + provenance claim + trust \
                 anchor; out: h_next + tool output digest"
                    .to_string(),
        }
    }

    fn evaluate(&self, env: &GuestEnv) -> Result<GuestOutput, GuestFault> {
        let commitments = PipelineCommitments::standard();
        let publics = TurnPublic::decode(env.app_inputs).map_err(|e| fault(e.to_string()))?;
        if publics.t == 0 {
            return Err(fault("turn numbers start at 1"));
        }

        let prior = env.prior.ok_or_else(|| {
            GuestFault::BrokenChain("turn statements extend an existing chain".to_string())
        })?;
        let expected_prior =
            if publics.t == 1 { commitments.phase2 } else { commitments.turn };
        if prior.program != expected_prior {
            return Err(GuestFault::BrokenChain(format!(
                "turn {} must extend {}",
                publics.t,
                if publics.t == 1 { "the configuration phase" } else { "the previous turn" },
            )));
        }

        let witness = canonical_decode(env.witness)
            .map_err(|_| fault("witness is not canonically encoded"))?;
        if witness.len() != 5 {
            return Err(fault("witness needs transcript, state, tool name, params, and query"));
        }
        let transcript: TlsTranscript = serde_json::from_slice(&witness[0])
            .map_err(|_| fault("transcript does not parse"))?;
        let state_prev = SessionState::from_bytes(&witness[1]).map_err(fault)?;
        let tool_name = String::from_utf8(witness[2].clone())
            .map_err(|_| fault("tool name is not utf-8"))?;
        let tool_params = &witness[3];
        let query = &witness[4];

        // The state transition must start where the chain left off.
        if state_prev.commitment() != publics.h_prev {
            return Err(fault("previous state does not match h_prev"));
        }
        if state_prev.turn_index != publics.t - 1 {
            return Err(fault("previous state is not at turn t-1"));
        }
        if publics.t == 1 {
            if publics.h_prev != SessionState::empty().commitment() {
                return Err(fault("turn 1 must extend the empty session"));
            }
        } else {
            // Replay defense: the prior turn's public h_next and index must
            // thread into this statement, so an old envelope cannot be
            // resubmitted or reordered without breaking the chain.
            let prior_publics = TurnPublic::decode(
                &prior.app_inputs().map_err(|_| fault("prior publics do not parse"))?,
            )
            .map_err(|e| fault(e.to_string()))?;
            if prior_publics.h_next != publics.h_prev {
                return Err(fault("state chain discontinuity against the prior turn"));
            }
            if prior_publics.t != publics.t - 1 {
                return Err(fault("turn number does not follow the prior turn"));
            }
        }

        // The query must be the committed one and the one the transcript
        // authenticated as associated data.
        if digest(query) != publics.query_commitment {
            return Err(fault("query does not match its commitment"));
        }
        if transcript.aad != publics.query_commitment.0 {
            return Err(fault("transcript was bound to a different query"));
        }

        // Authenticate the response via the recorded exchange.
        let claim = ProvenanceClaim {
            server_name: publics.server_name.clone(),
            data_commitment: publics.data_commitment,
        };
        let answer = verify_provenance(&transcript, &claim, &publics.root_ca)
            .map_err(|e| fault(format!("provenance check failed: {e}")))?;
        if digest(&answer) != publics.response_commitment {
            return Err(fault("response does not match its commitment"));
        }

        // Re-execute the tool over the authenticated response.
        let output = run_tool(&tool_name, &answer, tool_params).map_err(fault)?;

        // The new state must be exactly the old state extended by this turn.
        let state_next = state_prev.extend(query.clone(), answer.clone(), output.clone());
        if state_next.commitment() != publics.h_next {
            return Err(fault("extended state does not match h_next"));
        }

        let steps = 16
            + transcript.ciphertext.len() as u64
            + query.len() as u64
            + answer.len() as u64
            + output.len() as u64;
        let out = crate::crypto::canonical_encode(&[&publics.h_next.0, &digest(&output).0])
            .expect("output parts below 2^32-1 bytes");
        Ok(GuestOutput { output: out, steps })
    }
}

// ---- deterministic tool registry -------------------------------------------

/// Tools the turn guest can re-execute. Each is a pure function of the
/// authenticated response and the call parameters; anything else (clocks,
/// randomness, network) would make the recomputation unprovable.
///
/// * `echo` passes the response through unchanged.
/// * `check_inventory` reads a JSON object of item -> count from the
///   response; params name the item (utf-8); output is `item:count`.
/// * `compute_total` reads a JSON object of item -> unit price from the
///   response; params are a JSON list of [item, quantity] pairs; output is
///   the decimal total.
pub fn run_tool(name: &str, response: &[u8], params: &[u8]) -> Result<Vec<u8>, String> {
    match name {
        "echo" => Ok(response.to_vec()),
        "check_inventory" => {
            let stock: std::collections::BTreeMap<String, u64> =
                serde_json::from_slice(response)
                    .map_err(|_| "inventory response is not an item -> count object".to_string())?;
            let item = std::str::from_utf8(params)
                .map_err(|_| "item name is not utf-8".to_string())?;
            let count = stock.get(item).copied().unwrap_or(0);
            Ok(format!("{item}:{count}").into_bytes())
        }
        "compute_total" => {
            let prices: std::collections::BTreeMap<String, u64> =
                serde_json::from_slice(response)
                    .map_err(|_| "price response is not an item -> price object".to_string())?;
            let order: Vec<(String, u64)> = serde_json::from_slice(params)
                .map_err(|_| "order params are not [item, quantity] pairs".to_string())?;
            let mut total: u64 = 0;
            for (item, qty) in &order {
                let price = prices
                    .get(item)
                    .ok_or_else(|| format!("no price quoted for `{item}`"))?;
                total = total
                    .checked_add(price.checked_mul(*qty).ok_or("order total overflows")?)
                    .ok_or("order total overflows")?;
            }
            Ok(total.to_string().into_bytes())
        }
        other => Err(format!("unknown tool `{other}`")),
    }
}
