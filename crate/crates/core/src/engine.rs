//! Attestation-backed proof engine.
//!
//! The engine realizes a five-operation proving interface (setup, program
//! commitment, compile, prove, verify) over native re-execution: `prove`
//! runs the guest program on its inputs and signs the resulting statement
//! with a setup-scoped attestation key. Envelopes chain recursively by
//! embedding the complete prior envelope in the public inputs, so a verifier
//! holding only the newest envelope can replay checks down to genesis.
//!
//! # Trust model
//!
//! Receipts are Ed25519 attestations, not succinct arguments. The scheme is
//! complete (honest runs verify), tamper-evident (any byte flip in an
//! envelope or its embedded history invalidates a receipt), and witness-
//! hiding (witnesses never leave `prove`). Soundness holds only against
//! adversaries who lack the attestation secret in [`PublicParams`]; anyone
//! holding it can attest to false statements. Proof size grows linearly with
//! chain depth rather than staying constant. Swapping in a real succinct
//! backend means replacing this module while keeping the envelope layout.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    canonical_encode, digest, digest_parts, verify_sig, Digest, KeyPair, PublicKey, Signature,
};

/// Commitment to a guest program: the digest of its descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramCommitment(pub Digest);

/// Identity of a guest program: stable id, semantic version, and an i/o
/// schema label. Two guests with equal descriptors are interchangeable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramDescriptor {
    pub id: String,
    pub version: String,
    pub io_schema: String,
}

impl ProgramDescriptor {
    pub fn commitment(&self) -> ProgramCommitment {
        ProgramCommitment(digest_parts(&[
            b"baid.program.v1",
            self.id.as_bytes(),
            self.version.as_bytes(),
            self.io_schema.as_bytes(),
        ]))
    }
}

/// Everything a guest can see while executing. Witness bytes stay inside the
/// guest; only public inputs and outputs appear in the envelope.
pub struct GuestEnv<'a> {
    pub app_inputs: &'a [u8],
    pub witness: &'a [u8],
    pub prior: Option<&'a ProofEnvelope>,
    pub vk: &'a VerifyingKey,
}

/// Result of a guest run: the public output plus the step count charged
/// against the setup's execution bound.
pub struct GuestOutput {
    pub output: Vec<u8>,
    pub steps: u64,
}

/// Why a guest refused to produce an output.
#[derive(Debug, Error)]
pub enum GuestFault {
    /// An input failed the program's own constraints.
    #[error("constraint violated: {0}")]
    Constraint(String),
    /// The prior envelope does not match what this program may extend.
    #[error("chain linkage rejected: {0}")]
    BrokenChain(String),
}

/// A deterministic program the engine can prove statements about.
pub trait Guest: Send + Sync {
    fn descriptor(&self) -> ProgramDescriptor;
    fn evaluate(&self, env: &GuestEnv<'_>) -> Result<GuestOutput, GuestFault>;
}

/// Commit to a guest independent of any engine instance.
pub fn commit_prog(guest: &dyn Guest) -> ProgramCommitment {
    guest.descriptor().commitment()
}

/// Prover-side parameters: the execution bound and the attestation key.
/// Holding this value is holding the authority to attest, so it stays with
/// the prover; verifiers receive only the [`VerifyingKey`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PublicParams {
    pub max_steps: u64,
    pub params_id: Digest,
    attestor: KeyPair,
}

impl PublicParams {
    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey {
            attestor_public: self.attestor.public(),
            params_id: self.params_id,
        }
    }

    /// The attestation key itself. Exposed so that tests and attack
    /// simulations can model a prover-side adversary; see the module docs
    /// for why such an adversary defeats soundness by design.
    pub fn attestor(&self) -> &KeyPair {
        &self.attestor
    }
}

/// Verifier-side parameters: enough to check receipts, nothing more.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyingKey {
    pub attestor_public: PublicKey,
    pub params_id: Digest,
}

/// Deterministic setup: the same `(max_steps, seed)` pair always yields the
/// same parameters, so fixtures and replays agree on keys.
pub fn setup(max_steps: u64, seed: u64) -> (PublicParams, VerifyingKey) {
    let attestor = KeyPair::derive(&[b"baid.engine.attestor.v1", &seed.to_be_bytes()]);
    let params_id = digest_parts(&[
        b"baid.engine.params.v1",
        &max_steps.to_be_bytes(),
        &seed.to_be_bytes(),
    ]);
    let pp = PublicParams { max_steps, params_id, attestor };
    let vk = pp.verifying_key();
    (pp, vk)
}

/// A registered guest bound to the parameters it was compiled under.
#[derive(Clone)]
pub struct CompiledProgram {
    pub commitment: ProgramCommitment,
    params_id: Digest,
    guest: Arc<dyn Guest>,
}

impl std::fmt::Debug for CompiledProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledProgram")
            .field("commitment", &self.commitment)
            .field("params_id", &self.params_id)
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("program `{0}` is already registered")]
    DuplicateProgram(String),
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Error)]
pub enum ProveError {
    #[error("compiled program belongs to different setup parameters")]
    ParamsMismatch,
    #[error("prior envelope failed verification: {0}")]
    BrokenChain(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("step bound exceeded: used {used} of {max}")]
    StepBound { used: u64, max: u64 },
}

/// One attested statement: program commitment, public inputs (with the full
/// prior envelope embedded), public output, the digest of the prior envelope
/// for O(1) linkage checks, and the attestation receipt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofEnvelope {
    pub program: ProgramCommitment,
    pub public_inputs: Vec<u8>,
    pub public_output: Vec<u8>,
    pub prior_digest: Option<Digest>,
    pub receipt: Signature,
}

/// Build the canonical public-input bytes: always two parts, the prior
/// envelope's serialization (empty at genesis) and the application inputs.
pub fn embed_public_inputs(prior: Option<&ProofEnvelope>, app_inputs: &[u8]) -> Vec<u8> {
    let prior_bytes = prior.map(|e| e.to_bytes()).unwrap_or_default();
    canonical_encode(&[&prior_bytes, app_inputs]).expect("envelope parts below 2^32-1 bytes")
}

/// Split public-input bytes back into (prior envelope bytes, app inputs).
pub fn split_public_inputs(public_inputs: &[u8]) -> Result<(Vec<u8>, Vec<u8>), EngineError> {
    let parts = crate::crypto::canonical_decode(public_inputs)
        .map_err(|_| EngineError::Malformed("public inputs are not canonically encoded"))?;
    if parts.len() != 2 {
        return Err(EngineError::Malformed("public inputs must hold exactly two parts"));
    }
    let mut it = parts.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

impl ProofEnvelope {
    /// Canonical wire form: five length-prefixed parts.
    pub fn to_bytes(&self) -> Vec<u8> {
        let prior = self.prior_digest.map(|d| d.0.to_vec()).unwrap_or_default();
        canonical_encode(&[
            &self.program.0 .0,
            &self.public_inputs,
            &self.public_output,
            &prior,
            &self.receipt.0,
        ])
        .expect("envelope parts below 2^32-1 bytes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        let parts = crate::crypto::canonical_decode(bytes)
            .map_err(|_| EngineError::Malformed("envelope bytes are not canonically encoded"))?;
        if parts.len() != 5 {
            return Err(EngineError::Malformed("envelope must hold exactly five parts"));
        }
        let program: [u8; 32] = parts[0]
            .as_slice()
            .try_into()
            .map_err(|_| EngineError::Malformed("program commitment must be 32 bytes"))?;
        let prior_digest = match parts[3].len() {
            0 => None,
            32 => Some(Digest(parts[3].as_slice().try_into().unwrap())),
            _ => return Err(EngineError::Malformed("prior digest must be empty or 32 bytes")),
        };
        let receipt: [u8; 64] = parts[4]
            .as_slice()
            .try_into()
            .map_err(|_| EngineError::Malformed("receipt must be 64 bytes"))?;
        Ok(ProofEnvelope {
            program: ProgramCommitment(Digest(program)),
            public_inputs: parts[1].clone(),
            public_output: parts[2].clone(),
            prior_digest,
            receipt: Signature(receipt),
        })
    }

    /// Digest of the wire form, used as the linkage hash by successors.
    pub fn digest(&self) -> Digest {
        digest(&self.to_bytes())
    }

    /// The app-input half of the public inputs.
    pub fn app_inputs(&self) -> Result<Vec<u8>, EngineError> {
        Ok(split_public_inputs(&self.public_inputs)?.1)
    }

    /// Parse the embedded prior envelope, if any.
    pub fn prior(&self) -> Result<Option<ProofEnvelope>, EngineError> {
        let (prior_bytes, _) = split_public_inputs(&self.public_inputs)?;
        if prior_bytes.is_empty() {
            return Ok(None);
        }
        ProofEnvelope::from_bytes(&prior_bytes).map(Some)
    }
}

impl Serialize for ProofEnvelope {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("ProofEnvelope", 1)?;
        st.serialize_field("envelope", &hex::encode(self.to_bytes()))?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ProofEnvelope {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            envelope: String,
        }
        let wire = Wire::deserialize(de)?;
        let bytes = hex::decode(&wire.envelope).map_err(serde::de::Error::custom)?;
        ProofEnvelope::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

/// What the attestation receipt actually signs.
pub fn statement_digest(
    params_id: &Digest,
    program: &ProgramCommitment,
    public_inputs: &[u8],
    public_output: &[u8],
    prior_digest: Option<&Digest>,
) -> Digest {
    let prior = prior_digest.map(|d| d.0.to_vec()).unwrap_or_default();
    digest_parts(&[
        b"baid.receipt.v1",
        &params_id.0,
        &program.0 .0,
        public_inputs,
        public_output,
        &prior,
    ])
}

/// Registry of guest programs plus the prove operation.
#[derive(Default)]
pub struct ProofEngine {
    programs: BTreeMap<String, Arc<dyn Guest>>,
}

impl ProofEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a guest under its descriptor id. Registration is write-once:
    /// re-registering an id fails rather than silently swapping programs.
    pub fn register(&mut self, guest: Arc<dyn Guest>) -> Result<ProgramCommitment, EngineError> {
        let desc = guest.descriptor();
        if self.programs.contains_key(&desc.id) {
            return Err(EngineError::DuplicateProgram(desc.id));
        }
        let commitment = desc.commitment();
        self.programs.insert(desc.id, guest);
        Ok(commitment)
    }

    /// Bind a registered program to setup parameters.
    pub fn compile(
        &self,
        pp: &PublicParams,
        program_id: &str,
    ) -> Result<CompiledProgram, EngineError> {
        let guest = self
            .programs
            .get(program_id)
            .ok_or_else(|| EngineError::UnknownProgram(program_id.to_string()))?;
        Ok(CompiledProgram {
            commitment: guest.descriptor().commitment(),
            params_id: pp.params_id,
            guest: Arc::clone(guest),
        })
    }

    /// Execute the guest and attest to the statement. The prior envelope is
    /// verified before the guest runs, so an invalid history fails fast with
    /// [`ProveError::BrokenChain`] and the chain stops extending (fail-stop).
    pub fn prove(
        &self,
        pp: &PublicParams,
        compiled: &CompiledProgram,
        app_inputs: &[u8],
        witness: &[u8],
        prior: Option<&ProofEnvelope>,
    ) -> Result<ProofEnvelope, ProveError> {
        if compiled.params_id != pp.params_id {
            return Err(ProveError::ParamsMismatch);
        }
        let vk = pp.verifying_key();
        if let Some(prior_env) = prior {
            if !verify_envelope(&vk, prior_env) {
                return Err(ProveError::BrokenChain(
                    "prior envelope rejected by pre-verification".to_string(),
                ));
            }
        }
        let env = GuestEnv { app_inputs, witness, prior, vk: &vk };
        let out = compiled.guest.evaluate(&env).map_err(|fault| match fault {
            GuestFault::Constraint(msg) => ProveError::Constraint(msg),
            GuestFault::BrokenChain(msg) => ProveError::BrokenChain(msg),
        })?;
        if out.steps > pp.max_steps {
            return Err(ProveError::StepBound { used: out.steps, max: pp.max_steps });
        }
        let public_inputs = embed_public_inputs(prior, app_inputs);
        let prior_digest = prior.map(ProofEnvelope::digest);
        let msg = statement_digest(
            &pp.params_id,
            &compiled.commitment,
            &public_inputs,
            &out.output,
            prior_digest.as_ref(),
        );
        Ok(ProofEnvelope {
            program: compiled.commitment,
            public_inputs,
            public_output: out.output,
            prior_digest,
            receipt: pp.attestor.sign(&msg.0),
        })
    }
}

/// Check one envelope against an explicit statement. Returns false (never
/// errors) when any component disagrees: program, inputs, output, linkage
/// digest, or receipt.
pub fn verify(
    vk: &VerifyingKey,
    program: &ProgramCommitment,
    public_inputs: &[u8],
    public_output: &[u8],
    envelope: &ProofEnvelope,
) -> bool {
    if envelope.program != *program
        || envelope.public_inputs != public_inputs
        || envelope.public_output != public_output
    {
        return false;
    }
    verify_envelope(vk, envelope)
}

/// Check an envelope's internal consistency: the embedded prior bytes must
/// match the linkage digest, and the receipt must sign exactly this
/// statement under this setup.
pub fn verify_envelope(vk: &VerifyingKey, envelope: &ProofEnvelope) -> bool {
    let Ok((prior_bytes, _)) = split_public_inputs(&envelope.public_inputs) else {
        return false;
    };
    match (&envelope.prior_digest, prior_bytes.is_empty()) {
        (None, true) => {}
        (Some(d), false) if *d == digest(&prior_bytes) => {}
        _ => return false,
    }
    let msg = statement_digest(
        &vk.params_id,
        &envelope.program,
        &envelope.public_inputs,
        &envelope.public_output,
        envelope.prior_digest.as_ref(),
    );
    verify_sig(&vk.attestor_public, &msg.0, &envelope.receipt)
}

/// One link's entry in a [`ChainReport`], ordered head (genesis) first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub program: ProgramCommitment,
    pub bytes: usize,
    pub ok: bool,
}

/// Outcome of walking a chain tail back to its genesis envelope.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub ok: bool,
    pub length: usize,
    pub links: Vec<LinkInfo>,
    pub total_bytes: usize,
    /// Depth (1-based from the head) of the shallowest failing link.
    pub first_failure_depth: Option<usize>,
}

/// Verify every link reachable from `tail` by unwrapping embedded priors.
///
/// `expected` lists program commitments by depth: entry `i` constrains depth
/// `i + 1`, and the final entry repeats for all deeper links, matching
/// pipelines whose last stage loops. A link fails when its receipt, linkage
/// digest, embedded-prior parse, or program commitment is wrong.
pub fn verify_chain_tail(
    vk: &VerifyingKey,
    tail: &ProofEnvelope,
    expected: &[ProgramCommitment],
) -> ChainReport {
    // Unwrap tail-first; a parse failure marks the deepest reached link.
    let mut rev: Vec<(ProofEnvelope, bool)> = Vec::new();
    let mut cursor = Some((tail.clone(), true));
    while let Some((env, ok_so_far)) = cursor.take() {
        let next = match env.prior() {
            Ok(Some(prior_env)) => Some((prior_env, true)),
            Ok(None) => None,
            // Embedded bytes exist but do not parse: this link is defective
            // and the walk cannot continue past it.
            Err(_) => {
                rev.push((env, false));
                break;
            }
        };
        rev.push((env, ok_so_far));
        cursor = next;
    }

    let length = rev.len();
    let mut links = Vec::with_capacity(length);
    let mut total_bytes = 0usize;
    let mut first_failure_depth = None;
    for (idx, (env, parse_ok)) in rev.iter().rev().enumerate() {
        let depth = idx + 1;
        let want = match expected {
            [] => None,
            _ => Some(expected[(depth - 1).min(expected.len() - 1)]),
        };
        let bytes = env.to_bytes().len();
        total_bytes += bytes;
        let ok = *parse_ok
            && verify_envelope(vk, env)
            && want.map_or(true, |w| env.program == w);
        if !ok && first_failure_depth.is_none() {
            first_failure_depth = Some(depth);
        }
        links.push(LinkInfo { program: env.program, bytes, ok });
    }
    ChainReport {
        ok: first_failure_depth.is_none() && length > 0,
        length,
        links,
        total_bytes,
        first_failure_depth,
    }
}

/// Diagnostic guest: copies app inputs to the output and accepts any prior.
/// Useful for exercising chain mechanics without domain semantics.
pub struct EchoGuest;

impl Guest for EchoGuest {
    fn descriptor(&self) -> ProgramDescriptor {
        ProgramDescriptor {
            id: "echo".to_string(),
            version: "1.0.0".to_string(),
            io_schema: "bytes/bytes".to_string(),
        }
    }

    fn evaluate(&self, env: &GuestEnv<'_>) -> Result<GuestOutput, GuestFault> {
        Ok(GuestOutput {
            output: env.app_inputs.to_vec(),
            steps: env.app_inputs.len() as u64 + 1,
        })
    }
}
