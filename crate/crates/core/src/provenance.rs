//! TLS-lite transcript model and provenance verification.
//!
//! A transcript captures everything needed to re-derive a session's
//! confidentiality chain offline: the server certificate, both handshake
//! randoms, the pre-master secret, the server's key-confirmation signature,
//! and one AEAD-protected response. Verification replays four checks in a
//! fixed order (certificate chain and server identity, session-key
//! derivation with key confirmation, AEAD authentication, and the data
//! commitment) and reports the first failing step.
//!
//! The handshake is deliberately simplified: instead of a key-exchange
//! suite, the server signs the two randoms and the pre-master secret is a
//! shared witness. Every verification step downstream of key agreement is
//! preserved; only the key-exchange algebra is gone. Certificates form a
//! single link (leaf signed directly by the root CA).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    aead_open, aead_seal, canonical_encode, digest, prf_expand, verify_sig, Digest, KeyPair,
    PublicKey, Signature, AEAD_NONCE_LEN, AEAD_TAG_LEN,
};

/// Length of the pre-master secret in bytes.
pub const PMS_LEN: usize = 48;
/// PRF label for session-key derivation.
pub const KEY_EXPANSION_LABEL: &[u8] = b"key expansion";

/// First verification step that failed, in step order.
#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum ProvenanceError {
    #[error("certificate chain does not reach the trusted root")]
    CertChain,
    #[error("certificate subject does not match the claimed server")]
    ServerIdentity,
    #[error("server key confirmation failed")]
    KeyConfirm,
    #[error("payload failed AEAD authentication")]
    AeadAuth,
    #[error("decrypted data does not match the claimed commitment")]
    CommitmentMismatch,
}

/// Leaf certificate: subject name and server key, signed by the root CA.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject_name: String,
    pub server_pubkey: PublicKey,
    pub issuer_signature: Signature,
}

fn cert_signing_bytes(subject_name: &str, server_pubkey: &PublicKey) -> Vec<u8> {
    canonical_encode(&[b"baid.cert.v1", subject_name.as_bytes(), &server_pubkey.0])
        .expect("certificate parts below 2^32-1 bytes")
}

/// Sign a leaf certificate with the root CA key.
pub fn issue_certificate(root_ca: &KeyPair, subject_name: &str, server_pubkey: PublicKey) -> Certificate {
    let issuer_signature = root_ca.sign(&cert_signing_bytes(subject_name, &server_pubkey));
    Certificate { subject_name: subject_name.to_string(), server_pubkey, issuer_signature }
}

fn key_confirmation_bytes(client_random: &[u8; 32], server_random: &[u8; 32]) -> Vec<u8> {
    canonical_encode(&[b"baid.keyconfirm.v1", client_random, server_random])
        .expect("handshake parts below 2^32-1 bytes")
}

/// Derive the session key from the pre-master secret and both randoms.
pub fn session_key(pms: &[u8; PMS_LEN], client_random: &[u8; 32], server_random: &[u8; 32]) -> [u8; 32] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(client_random);
    salt[32..].copy_from_slice(server_random);
    prf_expand(pms, &salt, KEY_EXPANSION_LABEL)
}

/// Complete record of one TLS-lite exchange. The pre-master secret is
/// witness material: transcripts are consumed inside guest programs and
/// must never surface in public proof fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsTranscript {
    pub certificate: Certificate,
    #[serde(with = "crate::crypto::hexarr")]
    pub client_random: [u8; 32],
    #[serde(with = "crate::crypto::hexarr")]
    pub server_random: [u8; 32],
    #[serde(with = "crate::crypto::hexarr")]
    pub pms: [u8; PMS_LEN],
    pub key_confirmation: Signature,
    #[serde(with = "crate::crypto::hexarr")]
    pub nonce: [u8; AEAD_NONCE_LEN],
    #[serde(with = "crate::crypto::hexvec")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "crate::crypto::hexarr")]
    pub tag: [u8; AEAD_TAG_LEN],
    #[serde(with = "crate::crypto::hexvec")]
    pub aad: Vec<u8>,
}

/// What a verifier claims about a transcript: which server it talked to and
/// the commitment to the plaintext it carried.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceClaim {
    pub server_name: String,
    pub data_commitment: Digest,
}

/// Run one exchange against a server key pair and record the transcript.
/// Deterministic in `rng_seed`; the request binds in as associated data via
/// its digest. The server key pair must match the certificate for the
/// transcript to verify later.
pub fn make_session(
    certificate: &Certificate,
    server_secret: &KeyPair,
    request: &[u8],
    response_plaintext: &[u8],
    rng_seed: u64,
) -> TlsTranscript {
    use rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(rng_seed);
    let mut client_random = [0u8; 32];
    let mut server_random = [0u8; 32];
    let mut pms = [0u8; PMS_LEN];
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut client_random);
    rng.fill_bytes(&mut server_random);
    rng.fill_bytes(&mut pms);
    rng.fill_bytes(&mut nonce);

    let key_confirmation = server_secret.sign(&key_confirmation_bytes(&client_random, &server_random));
    let key = session_key(&pms, &client_random, &server_random);
    let aad = digest(request).0.to_vec();
    let (ciphertext, tag) = aead_seal(&key, &nonce, response_plaintext, &aad);

    TlsTranscript {
        certificate: certificate.clone(),
        client_random,
        server_random,
        pms,
        key_confirmation,
        nonce,
        ciphertext,
        tag,
        aad,
    }
}

/// Verify a transcript against a claim and return the authenticated
/// plaintext. Checks run in a fixed order and the error names the first
/// step that failed:
///
/// (a) certificate signature under the root CA, then subject-name match;
/// (b) session-key derivation and the server's key-confirmation signature;
/// (c) AEAD open of the payload;
/// (d) plaintext digest against the claimed commitment.
pub fn verify_provenance(
    t: &TlsTranscript,
    claim: &ProvenanceClaim,
    root_ca: &PublicKey,
) -> Result<Vec<u8>, ProvenanceError> {
    // (a) chain to the trusted root, then the claimed identity.
    let cert_bytes = cert_signing_bytes(&t.certificate.subject_name, &t.certificate.server_pubkey);
    if !verify_sig(root_ca, &cert_bytes, &t.certificate.issuer_signature) {
        return Err(ProvenanceError::CertChain);
    }
    if t.certificate.subject_name != claim.server_name {
        return Err(ProvenanceError::ServerIdentity);
    }

    // (b) derive the session key and check the server confirmed the randoms.
    let key = session_key(&t.pms, &t.client_random, &t.server_random);
    let confirm = key_confirmation_bytes(&t.client_random, &t.server_random);
    if !verify_sig(&t.certificate.server_pubkey, &confirm, &t.key_confirmation) {
        return Err(ProvenanceError::KeyConfirm);
    }

    // (c) authenticate and open the payload.
    let plaintext = aead_open(&key, &t.nonce, &t.ciphertext, &t.tag, &t.aad)
        .map_err(|_| ProvenanceError::AeadAuth)?;

    // (d) bind the plaintext to the public commitment.
    if digest(&plaintext) != claim.data_commitment {
        return Err(ProvenanceError::CommitmentMismatch);
    }
    Ok(plaintext)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Harness {
        root_ca: KeyPair,
        server: KeyPair,
        cert: Certificate,
    }

    fn harness() -> Harness {
        let root_ca = KeyPair::from_seed(&[21u8; 32]);
        let server = KeyPair::from_seed(&[22u8; 32]);
        let cert = issue_certificate(&root_ca, "api.llm.example", server.public());
        Harness { root_ca, server, cert }
    }

    fn claim_for(data: &[u8]) -> ProvenanceClaim {
        ProvenanceClaim {
            server_name: "api.llm.example".to_string(),
            data_commitment: digest(data),
        }
    }

    #[test]
    fn round_trip_returns_plaintext() {
        let h = harness();
        let t = make_session(&h.cert, &h.server, b"query", b"forty-two", 7);
        let got = verify_provenance(&t, &claim_for(b"forty-two"), &h.root_ca.public()).unwrap();
        assert_eq!(got, b"forty-two");
    }

    #[test]
    fn fixed_seed_reproduces_transcript() {
        let h = harness();
        let a = make_session(&h.cert, &h.server, b"q", b"r", 99);
        let b = make_session(&h.cert, &h.server, b"q", b"r", 99);
        assert_eq!(a, b);
        let c = make_session(&h.cert, &h.server, b"q", b"r", 100);
        assert_ne!(a.client_random, c.client_random);
    }

    #[test]
    fn foreign_ca_rejected_first() {
        let h = harness();
        let rogue_ca = KeyPair::from_seed(&[23u8; 32]);
        let rogue_cert = issue_certificate(&rogue_ca, "api.llm.example", h.server.public());
        // Even with a wrong name in the claim, the chain check fires first.
        let t = make_session(&rogue_cert, &h.server, b"q", b"r", 1);
        let mut claim = claim_for(b"r");
        claim.server_name = "other.example".to_string();
        assert_eq!(
            verify_provenance(&t, &claim, &h.root_ca.public()),
            Err(ProvenanceError::CertChain)
        );
    }

    #[test]
    fn wrong_server_name_rejected() {
        let h = harness();
        let t = make_session(&h.cert, &h.server, b"q", b"r", 1);
        let mut claim = claim_for(b"r");
        claim.server_name = "phisher.example".to_string();
        assert_eq!(
            verify_provenance(&t, &claim, &h.root_ca.public()),
            Err(ProvenanceError::ServerIdentity)
        );
    }

    #[test]
    fn tampered_key_confirmation_rejected() {
        let h = harness();
        let mut t = make_session(&h.cert, &h.server, b"q", b"r", 1);
        t.key_confirmation.0[5] ^= 1;
        assert_eq!(
            verify_provenance(&t, &claim_for(b"r"), &h.root_ca.public()),
            Err(ProvenanceError::KeyConfirm)
        );
    }

    #[test]
    fn flipped_ciphertext_byte_rejected() {
        let h = harness();
        let mut t = make_session(&h.cert, &h.server, b"q", b"response-data", 1);
        t.ciphertext[3] ^= 1;
        assert_eq!(
            verify_provenance(&t, &claim_for(b"response-data"), &h.root_ca.public()),
            Err(ProvenanceError::AeadAuth)
        );
    }

    #[test]
    fn flipped_tag_rejected() {
        let h = harness();
        let mut t = make_session(&h.cert, &h.server, b"q", b"r", 1);
        t.tag[0] ^= 1;
        assert_eq!(
            verify_provenance(&t, &claim_for(b"r"), &h.root_ca.public()),
            Err(ProvenanceError::AeadAuth)
        );
    }

    #[test]
    fn substituted_pms_rejected_at_aead() {
        // The confirmation signature covers only the randoms, so a swapped
        // secret passes (b) and dies at payload authentication.
        let h = harness();
        let mut t = make_session(&h.cert, &h.server, b"q", b"r", 1);
        t.pms[0] ^= 1;
        assert_eq!(
            verify_provenance(&t, &claim_for(b"r"), &h.root_ca.public()),
            Err(ProvenanceError::AeadAuth)
        );
    }

    #[test]
    fn commitment_over_other_data_rejected() {
        let h = harness();
        let t = make_session(&h.cert, &h.server, b"q", b"actual", 1);
        assert_eq!(
            verify_provenance(&t, &claim_for(b"claimed"), &h.root_ca.public()),
            Err(ProvenanceError::CommitmentMismatch)
        );
    }

    #[test]
    fn wrong_request_binding_rejected() {
        // A transcript produced for a different request carries different
        // associated data, so it cannot be passed off for this query.
        let h = harness();
        let mut t = make_session(&h.cert, &h.server, b"real query", b"r", 1);
        t.aad = digest(b"substituted query").0.to_vec();
        assert_eq!(
            verify_provenance(&t, &claim_for(b"r"), &h.root_ca.public()),
            Err(ProvenanceError::AeadAuth)
        );
    }

    #[test]
    fn transcript_json_round_trip() {
        let h = harness();
        let t = make_session(&h.cert, &h.server, b"q", b"r", 1);
        let json = serde_json::to_string(&t).unwrap();
        let back: TlsTranscript = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(verify_provenance(&back, &claim_for(b"r"), &h.root_ca.public()).is_ok());
    }
}
