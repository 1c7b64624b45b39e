//! Layer-2 permission credentials.
//!
//! A credential grants an agent a bounded task scope and is signed by the
//! owner's key, but only after the owner has freshly authenticated: issuance
//! is gated on a verifying phase-1 envelope whose output is true. Validation
//! is a fixed four-step procedure (signature, validity window, scope, and
//! revocation) reported step by step so audits can see exactly which check
//! failed, with the overall verdict the conjunction of all four.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    canonical_encode, digest, verify_sig, Digest, KeyPair, PublicKey, Signature,
};
use crate::engine::{verify_envelope, ProofEnvelope, VerifyingKey};
use crate::identity::ProfileConfig;
use crate::pipeline::{BioPublic, PipelineCommitments};

const VC_TAG: &[u8] = b"baid.vc.v1";
const REVOCATION_TAG: &[u8] = b"baid.vc.revocation.v1";
const REVOCATION_LIST_TAG: &[u8] = b"baid.vc.revocation_list.v1";

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("authentication gate failed: {0}")]
    AuthGateFailed(&'static str),
    #[error("validity window is empty or inverted")]
    InvalidWindow,
}

/// One granted action and the largest amount (minor currency units) it may
/// move per use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeEntry {
    pub action: String,
    pub limit: u64,
}

/// The unsigned content of a permission credential.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialDraft {
    pub agent_id: String,
    pub user_id: String,
    pub task_id: String,
    pub task_definition: String,
    pub security_level: u32,
    pub scope: Vec<ScopeEntry>,
    pub valid_from: u64,
    pub valid_until: u64,
}

/// Owner-signed task permission. `revocation_id` is the digest of the body,
/// so revoking never needs the full credential, and the signature covers the
/// complete body including that id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionCredential {
    pub agent_id: String,
    pub user_id: String,
    pub task_id: String,
    pub task_definition: String,
    pub security_level: u32,
    pub scope: Vec<ScopeEntry>,
    pub valid_from: u64,
    pub valid_until: u64,
    pub revocation_id: Digest,
    pub owner_signature: Signature,
}

fn body_parts(draft: &CredentialDraft) -> Vec<Vec<u8>> {
    let mut parts: Vec<Vec<u8>> = vec![
        draft.agent_id.as_bytes().to_vec(),
        draft.user_id.as_bytes().to_vec(),
        draft.task_id.as_bytes().to_vec(),
        draft.task_definition.as_bytes().to_vec(),
        draft.security_level.to_be_bytes().to_vec(),
        draft.valid_from.to_be_bytes().to_vec(),
        draft.valid_until.to_be_bytes().to_vec(),
    ];
    for entry in &draft.scope {
        parts.push(entry.action.as_bytes().to_vec());
        parts.push(entry.limit.to_be_bytes().to_vec());
    }
    parts
}

fn encode_tagged(tag: &[u8], parts: &[Vec<u8>], extra: Option<&Digest>) -> Vec<u8> {
    let mut refs: Vec<&[u8]> = Vec::with_capacity(parts.len() + 2);
    refs.push(tag);
    if let Some(d) = extra {
        refs.push(&d.0);
    }
    for p in parts {
        refs.push(p);
    }
    canonical_encode(&refs).expect("credential parts below 2^32-1 bytes")
}

/// Content-derived revocation handle for a draft.
pub fn revocation_id(draft: &CredentialDraft) -> Digest {
    digest(&encode_tagged(REVOCATION_TAG, &body_parts(draft), None))
}

impl PermissionCredential {
    fn draft(&self) -> CredentialDraft {
        CredentialDraft {
            agent_id: self.agent_id.clone(),
            user_id: self.user_id.clone(),
            task_id: self.task_id.clone(),
            task_definition: self.task_definition.clone(),
            security_level: self.security_level,
            scope: self.scope.clone(),
            valid_from: self.valid_from,
            valid_until: self.valid_until,
        }
    }

    /// What the owner signature covers: every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        encode_tagged(VC_TAG, &body_parts(&self.draft()), Some(&self.revocation_id))
    }

    pub fn verify_signature(&self, owner: &PublicKey) -> bool {
        verify_sig(owner, &self.signing_bytes(), &self.owner_signature)
    }
}

/// Issue a credential after the owner's fresh biometric authentication.
///
/// The gate insists the envelope is a verifying phase-1 statement whose
/// output is true and whose authenticated user is both the profile's bound
/// owner and the credential's `user_id`: a credential can never be minted
/// for someone the biometric check did not just authenticate.
pub fn issue_credential(
    cfg: &ProfileConfig,
    owner_secret: &KeyPair,
    draft: CredentialDraft,
    phase1_result: &ProofEnvelope,
    vk: &VerifyingKey,
) -> Result<PermissionCredential, CredentialError> {
    if phase1_result.program != PipelineCommitments::standard().phase1 {
        return Err(CredentialError::AuthGateFailed("envelope is not a biometric statement"));
    }
    if !verify_envelope(vk, phase1_result) {
        return Err(CredentialError::AuthGateFailed("envelope does not verify"));
    }
    if phase1_result.public_output != [1u8] {
        return Err(CredentialError::AuthGateFailed("authentication output is false"));
    }
    let publics = phase1_result
        .app_inputs()
        .ok()
        .and_then(|b| BioPublic::decode(&b).ok())
        .ok_or(CredentialError::AuthGateFailed("envelope publics do not decode"))?;
    if publics.user_id != cfg.human_identifier {
        return Err(CredentialError::AuthGateFailed(
            "authenticated user is not the profile's bound owner",
        ));
    }
    if publics.user_id != draft.user_id {
        return Err(CredentialError::AuthGateFailed(
            "credential user differs from the authenticated user",
        ));
    }
    if draft.valid_from >= draft.valid_until {
        return Err(CredentialError::InvalidWindow);
    }

    let revocation_id = revocation_id(&draft);
    let mut vc = PermissionCredential {
        agent_id: draft.agent_id,
        user_id: draft.user_id,
        task_id: draft.task_id,
        task_definition: draft.task_definition,
        security_level: draft.security_level,
        scope: draft.scope,
        valid_from: draft.valid_from,
        valid_until: draft.valid_until,
        revocation_id,
        owner_signature: Signature([0u8; 64]),
    };
    vc.owner_signature = owner_secret.sign(&vc.signing_bytes());
    Ok(vc)
}

// ---- revocation ------------------------------------------------------------

/// Owner-signed set of withdrawn credentials, distributed alongside the
/// agent's facts document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    pub revoked: BTreeSet<Digest>,
    pub list_signature: Signature,
}

fn revocation_list_bytes(revoked: &BTreeSet<Digest>) -> Vec<u8> {
    let mut refs: Vec<&[u8]> = Vec::with_capacity(revoked.len() + 1);
    refs.push(REVOCATION_LIST_TAG);
    for id in revoked {
        refs.push(&id.0);
    }
    canonical_encode(&refs).expect("revocation parts below 2^32-1 bytes")
}

/// Sign the (sorted) revocation set. An empty list is valid and common.
pub fn make_revocation_list(owner_secret: &KeyPair, revoked: BTreeSet<Digest>) -> RevocationList {
    let list_signature = owner_secret.sign(&revocation_list_bytes(&revoked));
    RevocationList { revoked, list_signature }
}

impl RevocationList {
    pub fn verify_signature(&self, owner: &PublicKey) -> bool {
        verify_sig(owner, &revocation_list_bytes(&self.revoked), &self.list_signature)
    }
}

// ---- validation -------------------------------------------------------------

/// The action an agent wants to perform right now, checked against scope.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeRequest {
    pub action: String,
    pub amount: u64,
}

/// Step-by-step validation outcome. Every step is always evaluated, even
/// after an earlier failure, so an audit trail shows the full picture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub signature_ok: bool,
    pub window_ok: bool,
    pub scope_ok: bool,
    pub revocation_ok: bool,
    pub verdict: bool,
}

/// Run the four-step validation: (a) owner signature over the canonical
/// body, (b) half-open validity window `valid_from <= now < valid_until`,
/// (c) requested action present in scope with amount within its limit,
/// (d) not revoked, under a list whose own signature verifies.
pub fn validate_credential(
    vc: &PermissionCredential,
    owner_pubkey: &PublicKey,
    now: u64,
    requested: &ScopeRequest,
    revocations: &RevocationList,
) -> ValidationReport {
    let signature_ok = vc.verify_signature(owner_pubkey);
    let window_ok = vc.valid_from <= now && now < vc.valid_until;
    let scope_ok = vc
        .scope
        .iter()
        .any(|entry| entry.action == requested.action && requested.amount <= entry.limit);
    let revocation_ok = revocations.verify_signature(owner_pubkey)
        && !revocations.revoked.contains(&vc.revocation_id);
    ValidationReport {
        signature_ok,
        window_ok,
        scope_ok,
        revocation_ok,
        verdict: signature_ok && window_ok && scope_ok && revocation_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{bind_owner, EmbeddingVector, EMBEDDING_DIM};
    use crate::pipeline::{BiometricStatement, Pipeline};

    const USER_ID: &str = "org:laptopretail:cn:sales-division";

    fn template() -> EmbeddingVector {
        EmbeddingVector::new((0..EMBEDDING_DIM as i64).map(|i| (i % 23) * 40 - 300).collect())
            .unwrap()
    }

    fn bound_config() -> ProfileConfig {
        bind_owner(&ProfileConfig::default(), USER_ID, template(), false).unwrap()
    }

    fn authenticated_envelope(pipeline: &Pipeline, matched: bool) -> ProofEnvelope {
        let capture = if matched {
            template()
        } else {
            EmbeddingVector::new(template().components().iter().map(|&c| -c).collect()).unwrap()
        };
        let stmt = BiometricStatement {
            tau_num: 3,
            tau_den: 4,
            user_id: USER_ID.to_string(),
            v_capture: capture,
            v_stored: template(),
            bound_user_id: USER_ID.to_string(),
        };
        pipeline.prove_phase1(&stmt).unwrap()
    }

    fn draft() -> CredentialDraft {
        CredentialDraft {
            agent_id: "agentid:".to_string() + &"ab".repeat(32),
            user_id: USER_ID.to_string(),
            task_id: "task-2031".to_string(),
            task_definition: "purchase one laptop within budget".to_string(),
            security_level: 2,
            scope: vec![
                ScopeEntry { action: "payment".to_string(), limit: 1000 },
                ScopeEntry { action: "inventory_query".to_string(), limit: 0 },
            ],
            valid_from: 100,
            valid_until: 200,
        }
    }

    struct Setup {
        owner: KeyPair,
        vc: PermissionCredential,
        empty_revocations: RevocationList,
    }

    fn setup() -> Setup {
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let env = authenticated_envelope(&pipeline, true);
        let vc = issue_credential(&bound_config(), &owner, draft(), &env, &pipeline.vk()).unwrap();
        let empty_revocations = make_revocation_list(&owner, BTreeSet::new());
        Setup { owner, vc, empty_revocations }
    }

    fn request(amount: u64) -> ScopeRequest {
        ScopeRequest { action: "payment".to_string(), amount }
    }

    #[test]
    fn issued_credential_passes_all_four_steps() {
        let s = setup();
        let report = validate_credential(
            &s.vc,
            &s.owner.public(),
            150,
            &request(900),
            &s.empty_revocations,
        );
        assert!(report.signature_ok);
        assert!(report.window_ok);
        assert!(report.scope_ok);
        assert!(report.revocation_ok);
        assert!(report.verdict);
    }

    #[test]
    fn failed_authentication_blocks_issuance() {
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let env = authenticated_envelope(&pipeline, false);
        match issue_credential(&bound_config(), &owner, draft(), &env, &pipeline.vk()) {
            Err(CredentialError::AuthGateFailed(msg)) => {
                assert!(msg.contains("output is false"), "unexpected message: {msg}")
            }
            other => panic!("expected auth gate failure, got {other:?}"),
        }
    }

    #[test]
    fn tampered_envelope_blocks_issuance() {
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let mut env = authenticated_envelope(&pipeline, true);
        env.public_inputs[10] ^= 1;
        match issue_credential(&bound_config(), &owner, draft(), &env, &pipeline.vk()) {
            Err(CredentialError::AuthGateFailed(_)) => {}
            other => panic!("expected auth gate failure, got {other:?}"),
        }
    }

    #[test]
    fn non_biometric_envelope_blocks_issuance() {
        use crate::engine::{EchoGuest, ProofEngine};
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let mut engine = ProofEngine::new();
        engine.register(std::sync::Arc::new(EchoGuest)).unwrap();
        let compiled = engine.compile(pipeline.params(), "echo").unwrap();
        let env = engine.prove(pipeline.params(), &compiled, &[1u8], b"", None).unwrap();
        assert_eq!(env.public_output, vec![1u8]);
        match issue_credential(&bound_config(), &owner, draft(), &env, &pipeline.vk()) {
            Err(CredentialError::AuthGateFailed(msg)) => {
                assert!(msg.contains("not a biometric"), "unexpected message: {msg}")
            }
            other => panic!("expected auth gate failure, got {other:?}"),
        }
    }

    #[test]
    fn user_mismatch_blocks_issuance() {
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let env = authenticated_envelope(&pipeline, true);
        let mut d = draft();
        d.user_id = "org:other:cn:finance".to_string();
        match issue_credential(&bound_config(), &owner, d, &env, &pipeline.vk()) {
            Err(CredentialError::AuthGateFailed(msg)) => {
                assert!(msg.contains("differs"), "unexpected message: {msg}")
            }
            other => panic!("expected auth gate failure, got {other:?}"),
        }
    }

    #[test]
    fn inverted_window_blocks_issuance() {
        let pipeline = Pipeline::new(1 << 20, 9);
        let owner = KeyPair::derive(&[b"credential.test.owner"]);
        let env = authenticated_envelope(&pipeline, true);
        let mut d = draft();
        d.valid_from = 200;
        d.valid_until = 200;
        assert!(matches!(
            issue_credential(&bound_config(), &owner, d, &env, &pipeline.vk()),
            Err(CredentialError::InvalidWindow)
        ));
    }

    #[test]
    fn mutation_after_signing_fails_only_the_signature_step() {
        let s = setup();
        let mut vc = s.vc.clone();
        vc.task_definition = "purchase every laptop in stock".to_string();
        let report = validate_credential(
            &vc,
            &s.owner.public(),
            150,
            &request(900),
            &s.empty_revocations,
        );
        assert!(!report.signature_ok);
        // Later steps still run and report accurately.
        assert!(report.window_ok);
        assert!(report.scope_ok);
        assert!(report.revocation_ok);
        assert!(!report.verdict);
    }

    #[test]
    fn validity_window_is_half_open() {
        let s = setup();
        let pk = s.owner.public();
        let at = |now: u64| validate_credential(&s.vc, &pk, now, &request(1), &s.empty_revocations);
        assert!(!at(99).window_ok);
        assert!(at(100).window_ok, "valid_from is inclusive");
        assert!(at(199).window_ok);
        assert!(!at(200).window_ok, "valid_until is exclusive");
        assert!(!at(201).window_ok);
    }

    #[test]
    fn scope_limit_is_inclusive_and_escalation_fails() {
        let s = setup();
        let pk = s.owner.public();
        let with = |amount: u64| {
            validate_credential(&s.vc, &pk, 150, &request(amount), &s.empty_revocations)
        };
        assert!(with(1000).scope_ok, "exact limit is allowed");
        assert!(!with(1001).scope_ok, "one unit above the limit must fail");
        assert!(!with(1001).verdict);

        let unknown = ScopeRequest { action: "wire_transfer".to_string(), amount: 1 };
        let report =
            validate_credential(&s.vc, &pk, 150, &unknown, &s.empty_revocations);
        assert!(!report.scope_ok, "actions outside the scope list must fail");
    }

    #[test]
    fn scope_is_monotone_below_the_limit() {
        let s = setup();
        let pk = s.owner.public();
        for amount in [0u64, 1, 250, 999, 1000] {
            let report =
                validate_credential(&s.vc, &pk, 150, &request(amount), &s.empty_revocations);
            assert!(report.verdict, "amount {amount} within limit must validate");
        }
    }

    #[test]
    fn revocation_is_detected_and_list_forgery_fails_closed() {
        let s = setup();
        let pk = s.owner.public();
        let mut revoked = BTreeSet::new();
        revoked.insert(s.vc.revocation_id);
        let list = make_revocation_list(&s.owner, revoked.clone());
        let report = validate_credential(&s.vc, &pk, 150, &request(900), &list);
        assert!(!report.revocation_ok);
        assert!(!report.verdict);
        assert!(report.signature_ok && report.window_ok && report.scope_ok);

        // A list signed by someone other than the owner cannot clear the
        // credential: the step fails closed.
        let stranger = KeyPair::derive(&[b"credential.test.stranger"]);
        let forged = make_revocation_list(&stranger, BTreeSet::new());
        let report = validate_credential(&s.vc, &pk, 150, &request(900), &forged);
        assert!(!report.revocation_ok);
    }

    #[test]
    fn credential_round_trips_through_json() {
        let s = setup();
        let json = serde_json::to_string(&s.vc).unwrap();
        let back: PermissionCredential = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s.vc);
        assert!(back.verify_signature(&s.owner.public()));
    }

    #[test]
    fn revocation_id_is_content_derived() {
        let s = setup();
        assert_eq!(s.vc.revocation_id, revocation_id(&s.vc.draft()));
        let mut other = draft();
        other.task_id = "task-2032".to_string();
        assert_ne!(revocation_id(&other), s.vc.revocation_id);
    }
}
