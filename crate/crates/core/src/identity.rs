//! Agent identity model: owner-bound security profiles, fixed-point
//! biometric embeddings, canonical agent identifiers, and signed metadata
//! documents.
//!
//! The identifier digest folds five inputs (name, program commitment,
//! profile hash, user id, and an open attribute map) so that changing any
//! one of them yields a different agent identity. All JSON forms use sorted
//! keys and embedding components travel as decimal strings, keeping hashes
//! stable across serialization round-trips.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{canonical_encode, digest, digest_parts, verify_sig, Digest, KeyPair, PublicKey, Signature};
use crate::engine::ProgramCommitment;

/// Dimensionality of biometric embeddings.
pub const EMBEDDING_DIM: usize = 128;
/// Fixed-point scale: one unit of magnitude is 2^14.
pub const FIXED_POINT_SCALE: i64 = 1 << 14;
/// Largest admissible squared norm; keeps all dot products inside i128.
pub const MAX_SQUARED_NORM: i128 = 1 << 62;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("embedding must have exactly {EMBEDDING_DIM} components, got {0}")]
    WrongDimension(usize),
    #[error("embedding squared norm exceeds 2^62")]
    NormOverflow,
    #[error("profile is already bound to `{0}`; rebinding requires the explicit rebind flag")]
    AlreadyBound(String),
    #[error("agent name must be non-empty")]
    EmptyName,
    #[error("agent id text must be `agentid:` followed by 64 hex characters")]
    MalformedId,
}

/// Fixed-point biometric embedding: 128 signed components at scale 2^14.
/// Components serialize as decimal strings so JSON writers cannot mangle
/// them into floats.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingVector {
    components: Vec<i64>,
}

impl EmbeddingVector {
    pub fn new(components: Vec<i64>) -> Result<Self, IdentityError> {
        if components.len() != EMBEDDING_DIM {
            return Err(IdentityError::WrongDimension(components.len()));
        }
        let norm: i128 = components.iter().map(|&c| (c as i128) * (c as i128)).sum();
        if norm > MAX_SQUARED_NORM {
            return Err(IdentityError::NormOverflow);
        }
        Ok(EmbeddingVector { components })
    }

    pub fn components(&self) -> &[i64] {
        &self.components
    }

    pub fn squared_norm(&self) -> i128 {
        self.components.iter().map(|&c| (c as i128) * (c as i128)).sum()
    }

    /// Wire form: each component as an 8-byte big-endian two's-complement
    /// integer, concatenated.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMBEDDING_DIM * 8);
        for &c in &self.components {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        if bytes.len() != EMBEDDING_DIM * 8 {
            return Err(IdentityError::WrongDimension(bytes.len() / 8));
        }
        let components = bytes
            .chunks_exact(8)
            .map(|c| i64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingVector::new(components)
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let strings: Vec<String> = self.components.iter().map(|c| c.to_string()).collect();
        strings.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let strings = Vec::<String>::deserialize(de)?;
        let components = strings
            .iter()
            .map(|s| s.parse::<i64>().map_err(serde::de::Error::custom))
            .collect::<Result<Vec<i64>, _>>()?;
        EmbeddingVector::new(components).map_err(serde::de::Error::custom)
    }
}

/// Local security configuration: the owner binding, the registered biometric
/// template, policy rules, and free-form operational parameters. Fields are
/// declared in sorted-key order so the JSON form is canonical as written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub biometric_template: Option<EmbeddingVector>,
    pub human_identifier: String,
    pub operational_params: BTreeMap<String, String>,
    pub policy_rules: Vec<String>,
}

impl ProfileConfig {
    pub fn is_bound(&self) -> bool {
        self.biometric_template.is_some()
    }

    /// Canonical JSON bytes: sorted keys, no insignificant whitespace.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("profile serialization cannot fail")
    }
}

/// Hash of the canonical profile serialization.
pub fn profile_hash(cfg: &ProfileConfig) -> Digest {
    digest(&cfg.canonical_bytes())
}

/// Bind `user` and their biometric template into the profile, creating the
/// owner binding record. An already-bound profile only accepts a new owner
/// when `rebind` is set, so silent owner swaps cannot happen.
pub fn bind_owner(
    cfg: &ProfileConfig,
    user: &str,
    template: EmbeddingVector,
    rebind: bool,
) -> Result<ProfileConfig, IdentityError> {
    if cfg.is_bound() && !rebind {
        return Err(IdentityError::AlreadyBound(cfg.human_identifier.clone()));
    }
    let mut bound = cfg.clone();
    bound.human_identifier = user.to_string();
    bound.biometric_template = Some(template);
    Ok(bound)
}

/// Canonical encoding of the open attribute map: keys and values
/// interleaved in key order.
fn encode_others(others: &BTreeMap<String, String>) -> Vec<u8> {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(others.len() * 2);
    for (k, v) in others {
        parts.push(k.as_bytes());
        parts.push(v.as_bytes());
    }
    canonical_encode(&parts).expect("attribute parts below 2^32-1 bytes")
}

/// A fully-determined agent identity. The digest folds all five inputs;
/// the textual form is `agentid:` plus 64 hex characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentifier {
    pub name: String,
    pub program_commitment: ProgramCommitment,
    pub profile_hash: Digest,
    pub user_id: String,
    pub others: BTreeMap<String, String>,
    pub id_digest: Digest,
}

impl AgentIdentifier {
    pub fn text(&self) -> String {
        format!("agentid:{}", self.id_digest.to_hex())
    }

    /// Recompute the digest from the stated fields, so receivers can check
    /// that `id_digest` really covers them.
    pub fn recompute_digest(&self) -> Digest {
        let others_bytes = encode_others(&self.others);
        digest_parts(&[
            self.name.as_bytes(),
            &self.program_commitment.0 .0,
            &self.profile_hash.0,
            self.user_id.as_bytes(),
            &others_bytes,
        ])
    }

    /// Parse and validate the textual form back into its digest.
    pub fn digest_from_text(text: &str) -> Result<Digest, IdentityError> {
        let hex_part = text.strip_prefix("agentid:").ok_or(IdentityError::MalformedId)?;
        if hex_part.len() != 64 {
            return Err(IdentityError::MalformedId);
        }
        Digest::from_hex(hex_part).map_err(|_| IdentityError::MalformedId)
    }
}

/// Construct the agent identifier from its five inputs.
pub fn make_agent_id(
    name: &str,
    c_p: ProgramCommitment,
    cfg: &ProfileConfig,
    user_id: &str,
    others: BTreeMap<String, String>,
) -> Result<AgentIdentifier, IdentityError> {
    if name.is_empty() {
        return Err(IdentityError::EmptyName);
    }
    let p_hash = profile_hash(cfg);
    let others_bytes = encode_others(&others);
    let id_digest = digest_parts(&[
        name.as_bytes(),
        &c_p.0 .0,
        &p_hash.0,
        user_id.as_bytes(),
        &others_bytes,
    ]);
    Ok(AgentIdentifier {
        name: name.to_string(),
        program_commitment: c_p,
        profile_hash: p_hash,
        user_id: user_id.to_string(),
        others,
        id_digest,
    })
}

/// Published agent metadata, signed by the owner key. Fields are declared
/// in sorted-key order; the signature covers the JSON body with the
/// signature field set to null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFacts {
    pub agent_id: String,
    pub capabilities: Vec<String>,
    pub endpoints: Vec<(String, String)>,
    pub signature: Option<Signature>,
    pub trust_status: String,
}

impl AgentFacts {
    fn body_bytes(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.signature = None;
        serde_json::to_vec(&unsigned).expect("facts serialization cannot fail")
    }

    /// Sign the canonical body with the owner key.
    pub fn sign(&mut self, owner: &KeyPair) {
        self.signature = None;
        self.signature = Some(owner.sign(&self.body_bytes()));
    }

    /// Check the signature under the claimed owner key; unsigned documents
    /// are simply untrusted, not errors.
    pub fn verify(&self, owner: &PublicKey) -> bool {
        match &self.signature {
            Some(sig) => verify_sig(owner, &self.body_bytes(), sig),
            None => false,
        }
    }
}
