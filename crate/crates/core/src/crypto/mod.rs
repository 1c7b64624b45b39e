//! Deterministic cryptographic primitives shared by every subsystem:
//! canonical length-prefixed encoding, SHA-256 hashing, Ed25519 signatures,
//! ChaCha20-Poly1305 AEAD, a hash-based PRF, and a sparse Merkle trie for
//! storage proofs.
//!
//! Everything here is a pure function of its inputs. AEAD nonces are
//! caller-supplied so that fixtures and golden tests reproduce byte-exactly.

pub mod smt;

use ed25519_dalek::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Maximum length of a single part in [`canonical_encode`].
pub const MAX_PART_LEN: usize = u32::MAX as usize;

/// AEAD key length in bytes.
pub const AEAD_KEY_LEN: usize = 32;
/// AEAD nonce length in bytes.
pub const AEAD_NONCE_LEN: usize = 12;
/// AEAD authentication tag length in bytes.
pub const AEAD_TAG_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("encoded part exceeds 2^32-1 bytes (got {0})")]
    OversizedPart(usize),
    #[error("canonical decoding failed: {0}")]
    Decode(&'static str),
    #[error("AEAD authentication failed")]
    AeadAuth,
    #[error("{what}: expected {expected} bytes, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// 32-byte digest value. Equality is byte equality; the textual form is
/// lowercase hex with no prefix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "hexarr")] pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::Decode("invalid hex digest"))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Decode("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Length-prefixed concatenation: each part is emitted as a 4-byte big-endian
/// length followed by the part bytes. Injective over part lists.
pub fn canonical_encode(parts: &[&[u8]]) -> Result<Vec<u8>, CryptoError> {
    let mut total = 0usize;
    for p in parts {
        if p.len() > MAX_PART_LEN {
            return Err(CryptoError::OversizedPart(p.len()));
        }
        total += 4 + p.len();
    }
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_be_bytes());
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Inverse of [`canonical_encode`]: splits a byte-string back into its parts.
pub fn canonical_decode(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CryptoError> {
    let mut parts = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(CryptoError::Decode("truncated length prefix"));
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(CryptoError::Decode("part shorter than its declared length"));
        }
        parts.push(rest[..len].to_vec());
        rest = &rest[len..];
    }
    Ok(parts)
}

/// SHA-256 digest of `data`.
pub fn digest(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// Digest of the canonical encoding of `parts`. Panics only if a part exceeds
/// 2^32-1 bytes, which no caller in this crate can produce.
pub fn digest_parts(parts: &[&[u8]]) -> Digest {
    digest(&canonical_encode(parts).expect("part below 2^32-1 bytes"))
}

/// Ed25519 verification key, 32 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "hexarr")] pub [u8; 32]);

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

/// Ed25519 signature, 64 bytes.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hexarr")] pub [u8; 64]);

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

/// Signing key plus its verification key. Keys are derived deterministically
/// from a 32-byte seed; Ed25519 signing itself is deterministic, so the whole
/// scheme is reproducible from seeds.
#[derive(Clone, Serialize, Deserialize)]
pub struct KeyPair {
    #[serde(with = "hexarr")]
    secret: [u8; 32],
    public: PublicKey,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair(public: {})", hex::encode(self.public.0))
    }
}

impl KeyPair {
    /// Derive a key pair from a 32-byte seed.
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let sk = ed25519_dalek::SigningKey::from_bytes(seed);
        KeyPair {
            secret: *seed,
            public: PublicKey(sk.verifying_key().to_bytes()),
        }
    }

    /// Derive a key pair from arbitrary context strings, via the hash.
    pub fn derive(context: &[&[u8]]) -> Self {
        Self::from_seed(&digest_parts(context).0)
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        let sk = ed25519_dalek::SigningKey::from_bytes(&self.secret);
        Signature(sk.sign(message).to_bytes())
    }
}

/// Verify `sig` over `message` under `public`. Malformed keys or signatures
/// yield `false`, never an error.
pub fn verify_sig(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let signature = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(message, &signature).is_ok()
}

/// ChaCha20-Poly1305 seal. The caller supplies key and nonce; identical
/// inputs produce identical ciphertexts. Returns (ciphertext, tag).
pub fn aead_seal(
    key: &[u8; AEAD_KEY_LEN],
    nonce: &[u8; AEAD_NONCE_LEN],
    plaintext: &[u8],
    aad: &[u8],
) -> (Vec<u8>, [u8; AEAD_TAG_LEN]) {
    use chacha20poly1305::aead::{Aead, KeyInit, Payload};
    let cipher = chacha20poly1305::ChaCha20Poly1305::new(key.into());
    let mut sealed = cipher
        .encrypt(nonce.into(), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let tag_start = sealed.len() - AEAD_TAG_LEN;
    let tag: [u8; AEAD_TAG_LEN] = sealed[tag_start..].try_into().unwrap();
    sealed.truncate(tag_start);
    (sealed, tag)
}

/// ChaCha20-Poly1305 open. Any tampering of ciphertext, tag, or aad fails
/// with [`CryptoError::AeadAuth`].
pub fn aead_open(
    key: &[u8; AEAD_KEY_LEN],
    nonce: &[u8; AEAD_NONCE_LEN],
    ciphertext: &[u8],
    tag: &[u8; AEAD_TAG_LEN],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    use chacha20poly1305::aead::{Aead, KeyInit, Payload};
    let cipher = chacha20poly1305::ChaCha20Poly1305::new(key.into());
    let mut sealed = Vec::with_capacity(ciphertext.len() + AEAD_TAG_LEN);
    sealed.extend_from_slice(ciphertext);
    sealed.extend_from_slice(tag);
    cipher
        .decrypt(nonce.into(), Payload { msg: &sealed, aad })
        .map_err(|_| CryptoError::AeadAuth)
}

/// Hash-based PRF: `digest(canonical_encode([secret, salt, label]))`.
/// Domain separation comes from the label argument.
pub fn prf_expand(secret: &[u8], salt: &[u8], label: &[u8]) -> [u8; 32] {
    digest_parts(&[secret, salt, label]).0
}

/// Serde adapter emitting fixed-size byte arrays as lowercase hex strings.
pub(crate) mod hexarr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        bytes: &[u8; N],
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        de: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(de)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} hex-encoded bytes")))
    }
}

/// Serde adapter for variable-length byte strings as lowercase hex.
pub(crate) mod hexvec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Vec<u8>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}
