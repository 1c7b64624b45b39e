//! Agent runtime: instances, a deterministic in-process message network,
//! two-layer counterparty verification, and a scripted e-commerce scenario
//! between a buyer agent and a merchant agent.
//!
//! The scenario walks the full workflow: owner authentication gates request
//! intake, the buyer discovers the merchant through the registry, both sides
//! exchange attestation bundles and permission credentials and verify each
//! other, the buyer runs its inventory and pricing turns against its model
//! endpoint, and payment is accepted only when the merchant's verification
//! of the refreshed bundle and the credential scope both pass. Every message
//! crosses the logged bus, and every verdict lands in the report, so one
//! seed always reproduces one byte-identical run.
//!
//! The adversary suite replays the same scenario under the four attack
//! classes (code substitution, chain replay/reorder, response fabrication,
//! and impersonation) and reports the defense that stopped each. Note the
//! boundary demonstrated by the impersonation variants: claiming a
//! *registered* identity is caught by the profile-hash cross-check, which
//! holds as long as the victim's profile (enrolled template included) stays
//! secret, while claiming an *unregistered* identity dies at registry
//! lookup.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::{
    issue_credential, make_revocation_list, validate_credential, CredentialDraft,
    CredentialError, PermissionCredential, RevocationList, ScopeEntry, ScopeRequest,
    ValidationReport,
};
use crate::crypto::{digest, Digest, KeyPair};
use crate::engine::{
    embed_public_inputs, verify_chain_tail, Guest, GuestEnv, GuestFault, GuestOutput,
    ProgramCommitment, ProgramDescriptor, ProofEngine, ProofEnvelope, ProveError,
    VerifyingKey,
};
use crate::identity::{
    bind_owner, make_agent_id, profile_hash, AgentFacts, AgentIdentifier, EmbeddingVector,
    IdentityError, ProfileConfig, EMBEDDING_DIM,
};
use crate::ledger::gas::GasReceipt;
use crate::ledger::{
    add_agent_call_bytes, agentid_slot, issue_kyc, AgentAttribute, DiscoveryQuery,
    InMemoryFacts, KycPredicates, Ledger, LedgerError, OperationalStatus,
};
use crate::pipeline::guests::run_tool;
use crate::pipeline::{
    chain_envelopes, derive_session_claims, verify_final_attestation, BiometricStatement,
    ConfigPublic, ConfigStatement, FinalAttestation, Pipeline, PipelineCommitments,
    PipelineError, SessionState, TurnStatement,
};
use crate::provenance::{issue_certificate, make_session, Certificate, ProvenanceClaim};

/// Default authentication threshold: cosine similarity of at least 3/4.
pub const DEFAULT_TAU: (u64, u64) = (3, 4);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("agent profile does not hash to the identifier's profile hash")]
    ProfileHashMismatch,
    #[error("registry operation failed: {0}")]
    Ledger(#[from] LedgerError),
    #[error("proving failed: {0}")]
    Prove(#[from] ProveError),
    #[error("attestation handling failed: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("identity construction failed: {0}")]
    Identity(#[from] IdentityError),
    #[error("credential issuance failed: {0}")]
    Credential(#[from] CredentialError),
    #[error("scenario invariant broken: {0}")]
    Scenario(String),
}

/// Deterministic synthetic embedding for simulations and fixtures:
/// component i is a bounded linear function of (seed, i), with every seventh
/// component offset by `jitter` to model capture noise. Same (seed, jitter)
/// always yields the same vector.
pub fn synthetic_embedding(seed: i64, jitter: i64) -> EmbeddingVector {
    let comps = (0..EMBEDDING_DIM as i64)
        .map(|i| {
            let base = (i * 37 + seed * 11) % 401 - 200;
            base * 32 + if i % 7 == 0 { jitter } else { 0 }
        })
        .collect();
    EmbeddingVector::new(comps).expect("synthetic components stay within bounds")
}

// ---- agent instance ---------------------------------------------------------

/// A running agent: its profile, identity, granted credentials, session
/// trace, and message queues. The identity's profile hash must match the
/// profile at construction and is kept in sync because both fields are
/// immutable here.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentInstance {
    pub profile: ProfileConfig,
    pub agent_id: AgentIdentifier,
    pub credentials: Vec<PermissionCredential>,
    pub session: Option<SessionState>,
    pub inbox: VecDeque<NetMessage>,
    pub outbox: VecDeque<NetMessage>,
}

impl AgentInstance {
    pub fn new(profile: ProfileConfig, agent_id: AgentIdentifier) -> Result<Self, RuntimeError> {
        if profile_hash(&profile) != agent_id.profile_hash {
            return Err(RuntimeError::ProfileHashMismatch);
        }
        Ok(AgentInstance {
            profile,
            agent_id,
            credentials: Vec::new(),
            session: None,
            inbox: VecDeque::new(),
            outbox: VecDeque::new(),
        })
    }

    /// Queue an outbound message; the bus assigns the sequence number.
    pub fn say(&mut self, to: &str, kind: MessageKind, payload: Vec<u8>) {
        self.outbox.push_back(NetMessage {
            from: self.agent_id.text(),
            to: to.to_string(),
            kind,
            payload,
            seq: 0,
        });
    }
}

// ---- message network ---------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Hello,
    AttestationBundle,
    CredentialPresentation,
    Accept,
    Reject,
    Order,
    Payment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMessage {
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    #[serde(with = "crate::crypto::hexvec")]
    pub payload: Vec<u8>,
    pub seq: u64,
}

/// Deterministic delivery fault, applied to every message of one kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusFault {
    /// Message is logged but never delivered.
    Drop(MessageKind),
    /// Message is delivered twice with the same sequence number, modeling a
    /// transport-level replay.
    Duplicate(MessageKind),
}

/// In-process store-and-forward bus. Sequence numbers increase strictly per
/// sender; the log records every send in order, faults included, so two runs
/// with the same traffic produce identical logs.
#[derive(Clone, Debug, Default)]
pub struct MessageBus {
    seq: BTreeMap<String, u64>,
    pending: VecDeque<NetMessage>,
    log: Vec<NetMessage>,
    fault: Option<BusFault>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: BusFault) -> Self {
        MessageBus { fault: Some(fault), ..Self::default() }
    }

    fn send(&mut self, mut msg: NetMessage) {
        let seq = self.seq.entry(msg.from.clone()).or_insert(0);
        *seq += 1;
        msg.seq = *seq;
        self.log.push(msg.clone());
        match self.fault {
            Some(BusFault::Drop(kind)) if kind == msg.kind => {}
            Some(BusFault::Duplicate(kind)) if kind == msg.kind => {
                self.pending.push_back(msg.clone());
                self.pending.push_back(msg);
            }
            _ => self.pending.push_back(msg),
        }
    }

    /// Move an agent's queued outbound messages onto the wire.
    pub fn flush(&mut self, agent: &mut AgentInstance) {
        while let Some(msg) = agent.outbox.pop_front() {
            self.send(msg);
        }
    }

    /// Deliver everything addressed to the agent, in send order.
    pub fn deliver(&mut self, agent: &mut AgentInstance) -> usize {
        let me = agent.agent_id.text();
        let mut kept = VecDeque::new();
        let mut delivered = 0;
        while let Some(msg) = self.pending.pop_front() {
            if msg.to == me {
                agent.inbox.push_back(msg);
                delivered += 1;
            } else {
                kept.push_back(msg);
            }
        }
        self.pending = kept;
        delivered
    }

    pub fn log(&self) -> &[NetMessage] {
        &self.log
    }
}

// ---- two-layer verification ---------------------------------------------------

/// Why a counterparty was refused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// The claimed agent id is not on the registry.
    Unresolvable,
    /// The registry record exists but the agent is not running.
    NotRunning,
    /// The proof chain itself does not verify.
    ChainInvalid,
    /// The chain verifies but was produced by a program other than the one
    /// the registry commits the agent to.
    CommitmentMismatch,
    /// The attested configuration hash differs from the registered one.
    ProfileMismatch,
    /// Claimed identities disagree with the registry record or credential.
    IdentityMismatch,
    /// The bundle's stated claims are not what its chain proves.
    ClaimsMismatch,
    /// Layer 2: the credential did not validate for this request.
    PermissionDenied,
}

/// Aggregate of both verification layers for one counterparty request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    /// Chain verification plus all registry cross-checks.
    pub layer1_ok: bool,
    /// Credential validation, evaluated whenever the owner key resolves.
    pub layer2: Option<ValidationReport>,
    pub reason: Option<RejectReason>,
}

impl Verdict {
    fn reject(layer1_ok: bool, layer2: Option<ValidationReport>, reason: RejectReason) -> Self {
        Verdict { accepted: false, layer1_ok, layer2, reason: Some(reason) }
    }
}

/// Everything a verifier consults: the shared registry, the engine
/// verifying key, the logical clock, and the owner's published revocations.
pub struct VerifierView<'a> {
    pub ledger: &'a Ledger,
    pub vk: &'a VerifyingKey,
    pub now: u64,
    pub revocations: &'a RevocationList,
}

/// Verify a counterparty end to end: resolve its claimed identity on the
/// registry, check the proof chain against the registered program
/// commitment, cross-check profile hash and identities, then validate the
/// presented credential against the requested action. Layer 2 runs whenever
/// the owner key resolves, even after a layer-1 failure, so the verdict
/// reports both layers for audit.
pub fn handle_verification_request(
    view: &VerifierView,
    bundle: &FinalAttestation,
    credential: &PermissionCredential,
    requested: &ScopeRequest,
) -> Verdict {
    let claims = &bundle.claims;

    let Some(agent_addr) = view.ledger.agent_address(&claims.agent_id) else {
        return Verdict::reject(false, None, RejectReason::Unresolvable);
    };
    let Some(agent) = view.ledger.agent(&agent_addr) else {
        return Verdict::reject(false, None, RejectReason::Unresolvable);
    };
    let Some(owner) = view.ledger.user(&agent.owner_user) else {
        return Verdict::reject(false, None, RejectReason::Unresolvable);
    };

    // Layer 2 is evaluated up front so the report is complete regardless of
    // where layer 1 stops.
    let layer2 = validate_credential(
        credential,
        &owner.owner_pubkey,
        view.now,
        requested,
        view.revocations,
    );
    let layer2 = Some(layer2);

    if agent.operational_status != OperationalStatus::Running {
        return Verdict::reject(false, layer2, RejectReason::NotRunning);
    }

    // The registry's program commitment is the reference the chain's turn
    // links must match; the identity phases are protocol-fixed.
    let std = PipelineCommitments::standard();
    let expected = PipelineCommitments {
        phase1: std.phase1,
        phase2: std.phase2,
        turn: ProgramCommitment(agent.attribute.program_commitment),
    };
    match verify_final_attestation(view.vk, &expected, bundle) {
        Ok(()) => {}
        Err(PipelineError::BrokenChain(_)) => {
            // Distinguish a cryptographically broken chain from a valid
            // chain built by the wrong program.
            let unconstrained = verify_chain_tail(view.vk, &bundle.tail, &[]);
            let reason = if unconstrained.ok {
                RejectReason::CommitmentMismatch
            } else {
                RejectReason::ChainInvalid
            };
            return Verdict::reject(false, layer2, reason);
        }
        Err(PipelineError::ClaimsMismatch(_)) => {
            return Verdict::reject(false, layer2, RejectReason::ClaimsMismatch);
        }
        Err(_) => {
            return Verdict::reject(false, layer2, RejectReason::ChainInvalid);
        }
    }

    // The attested configuration must be the registered one.
    let profile_ok = chain_envelopes(&bundle.tail)
        .ok()
        .and_then(|chain| chain.get(1).cloned())
        .and_then(|phase2| phase2.app_inputs().ok())
        .and_then(|publics| ConfigPublic::decode(&publics).ok())
        .map(|publics| publics.expected_profile_hash == agent.attribute.profile_hash)
        .unwrap_or(false);
    if !profile_ok {
        return Verdict::reject(false, layer2, RejectReason::ProfileMismatch);
    }

    // Claimed identities, registry record, and credential must all agree.
    if claims.agent_id != agent.attribute.agent_id || claims.user_id != agent.attribute.user_id {
        return Verdict::reject(false, layer2, RejectReason::IdentityMismatch);
    }
    if credential.agent_id != claims.agent_id || credential.user_id != claims.user_id {
        return Verdict::reject(false, layer2, RejectReason::IdentityMismatch);
    }

    match layer2 {
        Some(report) if report.verdict => {
            Verdict { accepted: true, layer1_ok: true, layer2, reason: None }
        }
        _ => Verdict::reject(true, layer2, RejectReason::PermissionDenied),
    }
}

// ---- scenario ------------------------------------------------------------------

/// The four attack classes the adversary suite exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackKind {
    /// The counterparty's turns were produced by a substituted program.
    CodeSubstitution,
    /// The presented chain was re-spliced out of honest envelopes.
    ReplayReorder,
    /// A model response was fabricated without the server's key.
    DataFabrication,
    /// The presenter claims an identity the registry never issued.
    Impersonation,
}

impl AttackKind {
    pub fn all() -> [AttackKind; 4] {
        [
            AttackKind::CodeSubstitution,
            AttackKind::ReplayReorder,
            AttackKind::DataFabrication,
            AttackKind::Impersonation,
        ]
    }
}

/// Scenario inputs; identical configs produce byte-identical reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub item: String,
    pub unit_price: u64,
    pub quantity: u64,
    pub stock: u64,
    pub payment_limit: u64,
    /// Logical clock at verification time.
    pub clock_now: u64,
    pub valid_from: u64,
    pub valid_until: u64,
    pub attack: Option<AttackKind>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 7,
            item: "laptop-pro".to_string(),
            unit_price: 900,
            quantity: 1,
            stock: 5,
            payment_limit: 1000,
            clock_now: 150,
            valid_from: 100,
            valid_until: 200,
            attack: None,
        }
    }
}

/// Everything a run produced: verdicts, money, gas, and the full wire log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub completed: bool,
    pub abort: Option<String>,
    pub buyer_agent_id: String,
    pub merchant_agent_id: String,
    /// Agent names the discovery query returned, in registry order.
    pub discovered: Vec<String>,
    pub merchant_accepts_buyer: Option<Verdict>,
    pub buyer_accepts_merchant: Option<Verdict>,
    pub payment_verdict: Option<Verdict>,
    pub amount: u64,
    pub gas: Vec<GasReceipt>,
    pub message_log: Vec<NetMessage>,
    pub buyer_state_commitments: Vec<Digest>,
}

#[derive(Serialize, Deserialize)]
struct OrderPayload {
    item: String,
    quantity: u64,
}

#[derive(Serialize, Deserialize)]
struct PaymentPayload {
    amount: u64,
    session_commitment: Digest,
    bundle: FinalAttestation,
    credential: PermissionCredential,
}

/// One enrolled identity with everything needed to drive it: the public
/// agent instance plus the owner and server secrets, the biometric pair,
/// and the chain state. Produced deterministically by [`DemoWorld::new`].
pub struct DemoIdentity {
    pub instance: AgentInstance,
    pub owner: KeyPair,
    pub user_id: String,
    pub agent_addr: Digest,
    pub template: EmbeddingVector,
    pub capture: EmbeddingVector,
    pub server: KeyPair,
    pub certificate: Certificate,
    pub revocations: RevocationList,
    pub tail: Option<ProofEnvelope>,
    pub turns: u64,
}

impl DemoIdentity {
    pub fn id_text(&self) -> String {
        self.instance.agent_id.text()
    }

    pub fn bio_statement(&self) -> BiometricStatement {
        BiometricStatement {
            tau_num: DEFAULT_TAU.0,
            tau_den: DEFAULT_TAU.1,
            user_id: self.user_id.clone(),
            v_capture: self.capture.clone(),
            v_stored: self.template.clone(),
            bound_user_id: self.user_id.clone(),
        }
    }
}

/// A deterministic two-party world: shared pipeline and registry, a root
/// CA, and two fully enrolled identities. The same seed always builds the
/// same world, which makes it the common fixture for simulations, tests,
/// and the command-line tools.
pub struct DemoWorld {
    pub pipeline: Pipeline,
    pub ledger: Ledger,
    pub facts: InMemoryFacts,
    pub root_ca: KeyPair,
    pub buyer: DemoIdentity,
    pub merchant: DemoIdentity,
    bus: MessageBus,
    last_seq_seen: BTreeMap<String, u64>,
}

/// Enroll one party end to end on the given ledger: user registration under
/// a fresh KYC credential, profile binding, agent creation, and facts
/// publication.
#[allow(clippy::too_many_arguments)]
fn enroll_party(
    ledger: &mut Ledger,
    facts: &mut InMemoryFacts,
    issuer: &KeyPair,
    root_ca: &KeyPair,
    turn_commitment: ProgramCommitment,
    tag: &str,
    user_id: &str,
    agent_name: &str,
    capabilities: Vec<String>,
    roles: Vec<String>,
    seed: u64,
    embed_seed: i64,
) -> Result<DemoIdentity, RuntimeError> {
    let owner = KeyPair::derive(&[b"scenario.owner", tag.as_bytes(), &seed.to_be_bytes()]);
    let kyc = issue_kyc(
        issuer,
        &owner.public(),
        KycPredicates { is_legal_entity: true, not_sanctioned: true },
    );
    let (user_addr, _) = ledger.register_user(&kyc, owner.public(), user_id)?;

    let template = synthetic_embedding(embed_seed, 0);
    let capture = synthetic_embedding(embed_seed, 3);
    let base = ProfileConfig {
        biometric_template: None,
        human_identifier: String::new(),
        operational_params: BTreeMap::from([(
            "model".to_string(),
            format!("{tag}-assistant-7b"),
        )]),
        policy_rules: vec![format!("act only within the {tag} task scope")],
    };
    let profile = bind_owner(&base, user_id, template.clone(), false)?;

    let others = BTreeMap::from([("agent_version".to_string(), "1.0.0".to_string())]);
    let agent_id = make_agent_id(agent_name, turn_commitment, &profile, user_id, others)?;
    let attribute = AgentAttribute { capabilities: capabilities.clone(), roles };
    let facts_url = format!("facts/{tag}.json");
    let call = add_agent_call_bytes(&user_addr, &agent_id, &attribute, &facts_url);
    let sig = owner.sign(&call);
    let (agent_addr, _) = ledger.add_agent(&sig, user_addr, &agent_id, attribute, &facts_url)?;

    let mut doc = AgentFacts {
        agent_id: agent_id.text(),
        capabilities,
        endpoints: vec![("chat".to_string(), format!("https://{tag}.agents.example/chat"))],
        signature: None,
        trust_status: "active".to_string(),
    };
    doc.sign(&owner);
    facts.entries.insert(facts_url, doc);

    let server = KeyPair::derive(&[b"scenario.server", tag.as_bytes(), &seed.to_be_bytes()]);
    let certificate = issue_certificate(root_ca, "api.llm.example", server.public());
    let revocations = make_revocation_list(&owner, BTreeSet::new());

    Ok(DemoIdentity {
        instance: AgentInstance::new(profile, agent_id)?,
        owner,
        user_id: user_id.to_string(),
        agent_addr,
        template,
        capture,
        server,
        certificate,
        revocations,
        tail: None,
        turns: 0,
    })
}

/// Prove the two identity phases for a party against the given ledger,
/// leaving the phase-2 envelope as the party's chain tail.
pub fn prove_identity(
    pipeline: &Pipeline,
    ledger: &Ledger,
    party: &mut DemoIdentity,
) -> Result<(), RuntimeError> {
    let pi1 = pipeline.prove_phase1(&party.bio_statement())?;
    let slot_key = agentid_slot(&party.id_text());
    let bundle = ledger.get_storage_proof(party.agent_addr, slot_key, ledger.block_number())?;
    let stmt = ConfigStatement {
        r_storage: bundle.storage_root,
        expected_profile_hash: profile_hash(&party.instance.profile),
        slot_key,
        config_local: party.instance.profile.clone(),
        storage_path: bundle.storage_path,
        account_path: bundle.account_path,
        state_root: bundle.state_root,
    };
    let pi2 = pipeline.prove_phase2(&stmt, &pi1)?;
    party.tail = Some(pi2);
    party.instance.session = Some(SessionState::empty());
    Ok(())
}

/// Run one conversation turn for a party against its model endpoint and
/// extend its chain and session. `server_override` substitutes a different
/// key for the session, which honest parties never do.
#[allow(clippy::too_many_arguments)]
pub fn run_turn(
    pipeline: &Pipeline,
    root_ca: &KeyPair,
    party: &mut DemoIdentity,
    query: &[u8],
    response: &[u8],
    tool_name: &str,
    tool_params: &[u8],
    tls_seed: u64,
    server_override: Option<&KeyPair>,
) -> Result<(), RuntimeError> {
    let state_prev = party
        .instance
        .session
        .clone()
        .ok_or_else(|| RuntimeError::Scenario("turn before identity phases".to_string()))?;
    let server = server_override.unwrap_or(&party.server);
    let transcript = make_session(&party.certificate, server, query, response, tls_seed);
    let output = run_tool(tool_name, response, tool_params)
        .map_err(|e| RuntimeError::Scenario(format!("tool refused: {e}")))?;
    let state_next = state_prev.extend(query.to_vec(), response.to_vec(), output);
    let stmt = TurnStatement {
        h_prev: state_prev.commitment(),
        query_commitment: digest(query),
        response_commitment: digest(response),
        claim: ProvenanceClaim {
            server_name: party.certificate.subject_name.clone(),
            data_commitment: digest(response),
        },
        root_ca: root_ca.public(),
        h_next: state_next.commitment(),
        transcript,
        state_prev,
        tool_name: tool_name.to_string(),
        tool_params: tool_params.to_vec(),
        query: query.to_vec(),
    };
    let prior = party
        .tail
        .clone()
        .ok_or_else(|| RuntimeError::Scenario("turn before identity phases".to_string()))?;
    let env = pipeline.prove_turn(party.turns + 1, &stmt, &prior)?;
    party.tail = Some(env);
    party.turns += 1;
    party.instance.session = Some(state_next);
    Ok(())
}

impl DemoWorld {
    /// Build the world: one registry, one KYC issuer, one certificate root,
    /// and the buyer and merchant enrolled end to end.
    pub fn new(seed: u64) -> Result<Self, RuntimeError> {
        let pipeline = Pipeline::new(1 << 20, seed);
        let issuer = KeyPair::derive(&[b"scenario.kyc", &seed.to_be_bytes()]);
        let root_ca = KeyPair::derive(&[b"scenario.rootca", &seed.to_be_bytes()]);
        let mut ledger = Ledger::new(issuer.public());
        let mut facts = InMemoryFacts::default();
        let turn_cp = pipeline.commitments().turn;

        let buyer = enroll_party(
            &mut ledger,
            &mut facts,
            &issuer,
            &root_ca,
            turn_cp,
            "buyer",
            "org:acme:cn:procurement",
            "baid:agent:acme:buyer",
            vec!["procurement".to_string()],
            vec!["buyer".to_string()],
            seed,
            1,
        )?;
        let merchant = enroll_party(
            &mut ledger,
            &mut facts,
            &issuer,
            &root_ca,
            turn_cp,
            "merchant",
            "org:laptopretail:cn:sales-division",
            "baid:agent:laptopretail:salesadvisor",
            vec!["retail".to_string(), "fulfillment".to_string()],
            vec!["sales".to_string()],
            seed,
            2,
        )?;

        Ok(DemoWorld {
            pipeline,
            ledger,
            facts,
            root_ca,
            buyer,
            merchant,
            bus: MessageBus::new(),
            last_seq_seen: BTreeMap::new(),
        })
    }

    /// Issue a task credential for a party, gated on a fresh phase-1 proof.
    pub fn issue_task_credential(
        &self,
        party: &DemoIdentity,
        task_id: &str,
        task_definition: &str,
        scope: Vec<ScopeEntry>,
        valid_from: u64,
        valid_until: u64,
    ) -> Result<PermissionCredential, RuntimeError> {
        let gate = self.pipeline.prove_phase1(&party.bio_statement())?;
        let draft = CredentialDraft {
            agent_id: party.id_text(),
            user_id: party.user_id.clone(),
            task_id: task_id.to_string(),
            task_definition: task_definition.to_string(),
            security_level: 2,
            scope,
            valid_from,
            valid_until,
        };
        Ok(issue_credential(
            &party.instance.profile,
            &party.owner,
            draft,
            &gate,
            &self.pipeline.vk(),
        )?)
    }

    /// Package a party's current chain tail as its attestation bundle.
    pub fn finalize(&self, party: &DemoIdentity) -> Result<FinalAttestation, RuntimeError> {
        let tail = party
            .tail
            .as_ref()
            .ok_or_else(|| RuntimeError::Scenario("no chain to finalize".to_string()))?;
        Ok(self.pipeline.finalize_session(tail)?)
    }

    /// Route one message from sender to recipient through the bus, then pull
    /// it from the recipient's inbox, enforcing the per-sender sequence
    /// monotonicity that defeats transport-level replays.
    fn exchange(
        &mut self,
        from_buyer: bool,
        kind: MessageKind,
        payload: Vec<u8>,
    ) -> Option<NetMessage> {
        let (sender, receiver) = if from_buyer {
            (&mut self.buyer, &mut self.merchant)
        } else {
            (&mut self.merchant, &mut self.buyer)
        };
        let to = receiver.id_text();
        sender.instance.say(&to, kind, payload);
        self.bus.flush(&mut sender.instance);
        self.bus.deliver(&mut receiver.instance);

        let mut accepted = None;
        while let Some(msg) = receiver.instance.inbox.pop_front() {
            let last = self.last_seq_seen.entry(msg.from.clone()).or_insert(0);
            if msg.seq <= *last {
                // Transport replay: same or older sequence; discard.
                continue;
            }
            *last = msg.seq;
            accepted = Some(msg);
        }
        accepted
    }
}

/// Stand-in for a tampered agent program: accepts any prior, skips
/// provenance entirely, and emits whatever the statement claims. Exists so
/// simulations can demonstrate that substituted code is caught by the
/// registry's program commitment; never registered by honest parties.
struct CounterfeitTurnGuest;

impl Guest for CounterfeitTurnGuest {
    fn descriptor(&self) -> ProgramDescriptor {
        ProgramDescriptor {
            id: "baid.guest.turn.counterfeit".to_string(),
            version: "1.0.0".to_string(),
            io_schema: "unchecked passthrough".to_string(),
        }
    }

    fn evaluate(&self, env: &GuestEnv) -> Result<GuestOutput, GuestFault> {
        let publics = crate::pipeline::TurnPublic::decode(env.app_inputs)
            .map_err(|e| GuestFault::Constraint(e.to_string()))?;
        let out = crate::crypto::canonical_encode(&[
            &publics.h_next.0,
            &digest(b"counterfeit output").0,
        ])
        .expect("output parts below 2^32-1 bytes");
        Ok(GuestOutput { output: out, steps: 1 })
    }
}

/// Build the merchant's attack bundle for [`AttackKind::CodeSubstitution`]:
/// honest identity phases, then a turn proven by a counterfeit program.
fn counterfeit_turn_bundle(
    world: &DemoWorld,
    config: &ScenarioConfig,
) -> Result<FinalAttestation, RuntimeError> {
    let pipeline = &world.pipeline;
    let party = &world.merchant;

    let pi1 = pipeline.prove_phase1(&party.bio_statement())?;
    let slot_key = agentid_slot(&party.id_text());
    let proof = world.ledger.get_storage_proof(
        party.agent_addr,
        slot_key,
        world.ledger.block_number(),
    )?;
    let stmt = ConfigStatement {
        r_storage: proof.storage_root,
        expected_profile_hash: profile_hash(&party.instance.profile),
        slot_key,
        config_local: party.instance.profile.clone(),
        storage_path: proof.storage_path,
        account_path: proof.account_path,
        state_root: proof.state_root,
    };
    let pi2 = pipeline.prove_phase2(&stmt, &pi1)?;

    // The counterfeit turn fabricates stock without any transcript.
    let mut rogue_engine = ProofEngine::new();
    rogue_engine
        .register(std::sync::Arc::new(CounterfeitTurnGuest))
        .expect("fresh engine");
    let compiled = rogue_engine
        .compile(pipeline.params(), "baid.guest.turn.counterfeit")
        .expect("registered");
    let rogue_cp = compiled.commitment;

    let s0 = SessionState::empty();
    let query = b"stock status".to_vec();
    let answer = format!("{{\"{}\":99999}}", config.item).into_bytes();
    let output = b"fabricated".to_vec();
    let s1 = s0.extend(query.clone(), answer.clone(), output);
    let publics = crate::crypto::canonical_encode(&[
        b"baid.stmt.turn.v1".as_slice(),
        &1u64.to_be_bytes(),
        &s0.commitment().0,
        &digest(&query).0,
        &digest(&answer).0,
        b"api.llm.example",
        &digest(&answer).0,
        &world.root_ca.public().0,
        &s1.commitment().0,
    ])
    .expect("statement parts below 2^32-1 bytes");
    let tail = rogue_engine.prove(pipeline.params(), &compiled, &publics, b"", Some(&pi2))?;

    // The attacker derives claims under its own program list; the shape is
    // valid, only the program is wrong.
    let rogue_commitments = PipelineCommitments {
        phase1: pipeline.commitments().phase1,
        phase2: pipeline.commitments().phase2,
        turn: rogue_cp,
    };
    let claims = derive_session_claims(&pipeline.vk(), &rogue_commitments, &tail)?;
    Ok(FinalAttestation { tail, claims })
}

/// Build an impersonator's bundle for [`AttackKind::Impersonation`]: a full
/// honest pipeline run against a shadow registry the attacker controls, so
/// the chain verifies but the claimed agent id exists nowhere on the real
/// ledger.
fn shadow_identity_bundle(
    world: &DemoWorld,
    config: &ScenarioConfig,
) -> Result<FinalAttestation, RuntimeError> {
    let shadow_issuer = KeyPair::derive(&[b"scenario.shadow.kyc", &config.seed.to_be_bytes()]);
    let mut shadow_ledger = Ledger::new(shadow_issuer.public());
    let mut shadow_facts = InMemoryFacts::default();
    let mut shadow = enroll_party(
        &mut shadow_ledger,
        &mut shadow_facts,
        &shadow_issuer,
        &world.root_ca,
        world.pipeline.commitments().turn,
        "shadow",
        "org:shadow:cn:ops",
        "baid:agent:shadow:impostor",
        vec!["retail".to_string()],
        vec!["sales".to_string()],
        config.seed,
        3,
    )?;
    prove_identity(&world.pipeline, &shadow_ledger, &mut shadow)?;
    world.pipeline.finalize_session(shadow.tail.as_ref().expect("just proved"))
        .map_err(RuntimeError::from)
}

/// Re-splice an honest chain for [`AttackKind::ReplayReorder`]: the tail's
/// embedded prior is swapped for an earlier link, leaving the receipt stale.
fn spliced_bundle(honest: &FinalAttestation) -> Result<FinalAttestation, RuntimeError> {
    let chain = chain_envelopes(&honest.tail)?;
    if chain.len() < 4 {
        return Err(RuntimeError::Scenario("splice needs at least two turns".to_string()));
    }
    let tail = &honest.tail;
    let skipped_prior = &chain[chain.len() - 3];
    let app_inputs = tail
        .app_inputs()
        .map_err(|_| RuntimeError::Scenario("tail publics do not parse".to_string()))?;
    let forged = ProofEnvelope {
        program: tail.program,
        public_inputs: embed_public_inputs(Some(skipped_prior), &app_inputs),
        public_output: tail.public_output.clone(),
        prior_digest: tail.prior_digest,
        receipt: tail.receipt,
    };
    Ok(FinalAttestation { tail: forged, claims: honest.claims.clone() })
}

/// Execute the e-commerce workflow under the given configuration. Attack
/// variants reuse the same script with one adversarial substitution each;
/// the report records where the run stopped and why.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, RuntimeError> {
    let mut world = DemoWorld::new(config.seed)?;
    let vk = world.pipeline.vk();
    let amount = config.unit_price.saturating_mul(config.quantity);
    let buyer_id = world.buyer.id_text();
    let merchant_id = world.merchant.id_text();

    let mut report = ScenarioReport {
        completed: false,
        abort: None,
        buyer_agent_id: buyer_id.clone(),
        merchant_agent_id: merchant_id.clone(),
        discovered: Vec::new(),
        merchant_accepts_buyer: None,
        buyer_accepts_merchant: None,
        payment_verdict: None,
        amount,
        gas: Vec::new(),
        message_log: Vec::new(),
        buyer_state_commitments: Vec::new(),
    };
    macro_rules! abort {
        ($world:expr, $report:expr, $($msg:tt)*) => {{
            $report.abort = Some(format!($($msg)*));
            $report.gas = $world.ledger.gas_log().to_vec();
            $report.message_log = $world.bus.log().to_vec();
            return Ok($report);
        }};
    }

    // Request intake: both owners authenticate; task credentials are minted
    // behind that gate.
    prove_identity(&world.pipeline, &world.ledger, &mut world.buyer)?;
    prove_identity(&world.pipeline, &world.ledger, &mut world.merchant)?;
    let buyer_vc = world.issue_task_credential(
        &world.buyer,
        "task-procure-laptop",
        "purchase laptops within the approved budget",
        vec![
            ScopeEntry { action: "payment".to_string(), limit: config.payment_limit },
            ScopeEntry { action: "inventory_query".to_string(), limit: 0 },
        ],
        config.valid_from,
        config.valid_until,
    )?;
    let merchant_vc = world.issue_task_credential(
        &world.merchant,
        "task-sell-laptop",
        "quote and fulfill retail laptop orders",
        vec![ScopeEntry { action: "fulfillment".to_string(), limit: 0 }],
        config.valid_from,
        config.valid_until,
    )?;
    world.buyer.instance.credentials.push(buyer_vc.clone());
    world.merchant.instance.credentials.push(merchant_vc.clone());

    // Merchant's own model turn: a readiness check it can attest later.
    let merchant_stock =
        format!("{{\"{}\":{}}}", config.item, config.stock).into_bytes();
    run_turn(
        &world.pipeline,
        &world.root_ca,
        &mut world.merchant,
        b"fulfillment readiness",
        &merchant_stock,
        "check_inventory",
        config.item.as_bytes(),
        config.seed.wrapping_add(201),
        None,
    )?;

    // Discovery: the buyer looks for retail agents on the registry.
    let hits = world.ledger.discover_agent(
        &DiscoveryQuery::Capability("retail".to_string()),
        &world.facts,
    );
    report.discovered = hits.iter().map(|h| h.agent.attribute.name.clone()).collect();
    let Some(hit) = hits.iter().find(|h| h.agent.attribute.agent_id == merchant_id) else {
        abort!(world, report, "discovery: merchant not found on the registry");
    };
    if !hit.trusted {
        abort!(world, report, "discovery: merchant facts signature untrusted");
    }

    // Contact and mutual verification.
    world.exchange(true, MessageKind::Hello, buyer_id.clone().into_bytes());
    world.exchange(false, MessageKind::Hello, merchant_id.clone().into_bytes());

    let buyer_bundle = world.finalize(&world.buyer)?;
    let bundle_bytes = serde_json::to_vec(&buyer_bundle).expect("bundle serializes");
    world.exchange(true, MessageKind::AttestationBundle, bundle_bytes);
    world.exchange(
        true,
        MessageKind::CredentialPresentation,
        serde_json::to_vec(&buyer_vc).expect("credential serializes"),
    );
    let merchant_view = VerifierView {
        ledger: &world.ledger,
        vk: &vk,
        now: config.clock_now,
        revocations: &world.buyer.revocations,
    };
    let verdict_buyer = handle_verification_request(
        &merchant_view,
        &buyer_bundle,
        &buyer_vc,
        &ScopeRequest { action: "inventory_query".to_string(), amount: 0 },
    );
    report.merchant_accepts_buyer = Some(verdict_buyer);
    let kind = if verdict_buyer.accepted { MessageKind::Accept } else { MessageKind::Reject };
    world.exchange(false, kind, serde_json::to_vec(&verdict_buyer).expect("verdict serializes"));
    if !verdict_buyer.accepted {
        abort!(
            world,
            report,
            "mutual-auth: merchant rejected buyer ({:?})",
            verdict_buyer.reason
        );
    }

    // Merchant presents its bundle; attacks substitute it here.
    let merchant_bundle = match config.attack {
        Some(AttackKind::CodeSubstitution) => counterfeit_turn_bundle(&world, config)?,
        Some(AttackKind::Impersonation) => shadow_identity_bundle(&world, config)?,
        _ => world.finalize(&world.merchant)?,
    };
    world.exchange(
        false,
        MessageKind::AttestationBundle,
        serde_json::to_vec(&merchant_bundle).expect("bundle serializes"),
    );
    world.exchange(
        false,
        MessageKind::CredentialPresentation,
        serde_json::to_vec(&merchant_vc).expect("credential serializes"),
    );
    let buyer_view = VerifierView {
        ledger: &world.ledger,
        vk: &vk,
        now: config.clock_now,
        revocations: &world.merchant.revocations,
    };
    let verdict_merchant = handle_verification_request(
        &buyer_view,
        &merchant_bundle,
        &merchant_vc,
        &ScopeRequest { action: "fulfillment".to_string(), amount: 0 },
    );
    report.buyer_accepts_merchant = Some(verdict_merchant);
    let kind = if verdict_merchant.accepted { MessageKind::Accept } else { MessageKind::Reject };
    world.exchange(true, kind, serde_json::to_vec(&verdict_merchant).expect("verdict serializes"));
    if !verdict_merchant.accepted {
        abort!(
            world,
            report,
            "mutual-auth: buyer rejected merchant ({:?})",
            verdict_merchant.reason
        );
    }

    // Buyer turn 1: inventory check against its model endpoint. The
    // fabrication attack fakes the response without the server key and must
    // die at proving.
    let stock_response = format!("{{\"{}\":{}}}", config.item, config.stock).into_bytes();
    let inventory = if config.attack == Some(AttackKind::DataFabrication) {
        let rogue_server =
            KeyPair::derive(&[b"scenario.fabricator", &config.seed.to_be_bytes()]);
        let fabricated =
            format!("{{\"{}\":99999}}", config.item).into_bytes();
        run_turn(
            &world.pipeline,
            &world.root_ca,
            &mut world.buyer,
            b"check inventory",
            &fabricated,
            "check_inventory",
            config.item.as_bytes(),
            config.seed.wrapping_add(101),
            Some(&rogue_server),
        )
    } else {
        run_turn(
            &world.pipeline,
            &world.root_ca,
            &mut world.buyer,
            b"check inventory",
            &stock_response,
            "check_inventory",
            config.item.as_bytes(),
            config.seed.wrapping_add(101),
            None,
        )
    };
    if let Err(err) = inventory {
        if let RuntimeError::Prove(e) = err {
            abort!(world, report, "inventory turn: proving rejected the transcript: {e}");
        }
        return Err(err);
    }

    let order = OrderPayload { item: config.item.clone(), quantity: config.quantity };
    world.exchange(true, MessageKind::Order, serde_json::to_vec(&order).expect("order serializes"));

    // Buyer turn 2: price the order from the model's quote.
    let price_response =
        format!("{{\"{}\":{}}}", config.item, config.unit_price).into_bytes();
    let order_params =
        serde_json::to_vec(&vec![(config.item.clone(), config.quantity)]).expect("params");
    run_turn(
        &world.pipeline,
        &world.root_ca,
        &mut world.buyer,
        b"quote the order",
        &price_response,
        "compute_total",
        &order_params,
        config.seed.wrapping_add(102),
        None,
    )?;

    // Payment: the refreshed bundle accompanies the request; the replay
    // attack splices the chain here.
    let honest_bundle = world.finalize(&world.buyer)?;
    let payment_bundle = if config.attack == Some(AttackKind::ReplayReorder) {
        spliced_bundle(&honest_bundle)?
    } else {
        honest_bundle
    };
    let session_commitment = *payment_bundle
        .claims
        .state_commitments
        .last()
        .expect("claims always include h_0");
    let payment = PaymentPayload {
        amount,
        session_commitment,
        bundle: payment_bundle.clone(),
        credential: buyer_vc.clone(),
    };
    world.exchange(
        true,
        MessageKind::Payment,
        serde_json::to_vec(&payment).expect("payment serializes"),
    );

    // Merchant-side payment verification: freshness, then both layers.
    if payment_bundle.claims.response_commitments.len() < 2
        || payment_bundle.claims.state_commitments.last() != Some(&session_commitment)
    {
        abort!(world, report, "payment: stale attestation presented by buyer");
    }
    let merchant_view = VerifierView {
        ledger: &world.ledger,
        vk: &vk,
        now: config.clock_now,
        revocations: &world.buyer.revocations,
    };
    let verdict_payment = handle_verification_request(
        &merchant_view,
        &payment_bundle,
        &buyer_vc,
        &ScopeRequest { action: "payment".to_string(), amount },
    );
    report.payment_verdict = Some(verdict_payment);
    let kind = if verdict_payment.accepted { MessageKind::Accept } else { MessageKind::Reject };
    world.exchange(
        false,
        kind,
        serde_json::to_vec(&verdict_payment).expect("verdict serializes"),
    );
    if !verdict_payment.accepted {
        abort!(world, report, "payment: merchant rejected ({:?})", verdict_payment.reason);
    }

    report.completed = true;
    report.buyer_state_commitments = world
        .finalize(&world.buyer)?
        .claims
        .state_commitments;
    report.gas = world.ledger.gas_log().to_vec();
    report.message_log = world.bus.log().to_vec();
    Ok(report)
}

// ---- adversary suite ------------------------------------------------------------

/// One attack's outcome: whether the defenses held and what stopped it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: AttackKind,
    pub rejected: bool,
    pub abort: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub outcomes: Vec<AttackOutcome>,
    pub all_rejected: bool,
}

/// Expected defense fingerprint per attack; an attack counts as rejected
/// only when the run aborted AND the abort names the right defense.
fn defense_marker(attack: AttackKind) -> &'static str {
    match attack {
        AttackKind::CodeSubstitution => "CommitmentMismatch",
        AttackKind::ReplayReorder => "ChainInvalid",
        AttackKind::DataFabrication => "provenance",
        AttackKind::Impersonation => "Unresolvable",
    }
}

/// Run every attack variant of the scenario and check each is stopped by
/// the defense mapped to it.
pub fn adversary_suite(base: &ScenarioConfig) -> Result<SuiteReport, RuntimeError> {
    let mut outcomes = Vec::new();
    for attack in AttackKind::all() {
        let mut config = base.clone();
        config.attack = Some(attack);
        let report = run_scenario(&config)?;
        let abort = report.abort.clone().unwrap_or_default();
        let rejected = !report.completed && abort.contains(defense_marker(attack));
        outcomes.push(AttackOutcome { attack, rejected, abort });
    }
    let all_rejected = outcomes.iter().all(|o| o.rejected);
    Ok(SuiteReport { outcomes, all_rejected })
}
