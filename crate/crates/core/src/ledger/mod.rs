//! Simulated on-chain identity registry.
//!
//! A single-writer ledger holds user and agent identity contracts, mirrors
//! every contract field into a per-contract sparse Merkle storage trie, and
//! anchors each contract under a global state trie, so any stored slot can
//! be proven against the state root with an account path plus a storage
//! path. Each transaction is gas-metered from the storage writes it actually
//! performs (see [`gas`]), advances the block number, and appends a receipt
//! to the gas log. There is no consensus and no bytecode: the chain acts
//! purely as a tamper-evident registry.
//!
//! KYC is a predicate credential: an issuer-signed pair of boolean flags
//! over a commitment to the registrant's key, carrying no personal data.

pub mod gas;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::smt::{SparseTrie, TriePath};
use crate::crypto::{
    canonical_encode, digest, digest_parts, verify_sig, Digest, KeyPair, PublicKey, Signature,
};
use crate::identity::{AgentFacts, AgentIdentifier};
use gas::{GasMeter, GasReceipt};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("KYC credential rejected: {0}")]
    KycRejected(&'static str),
    #[error("user id `{0}` is already registered")]
    AlreadyRegistered(String),
    #[error("caller signature rejected")]
    Unauthorized,
    #[error("agent `{0}` is already bound")]
    AlreadyBound(String),
    #[error("agent identifier inconsistent: {0}")]
    IdMismatch(&'static str),
    #[error("operation targets a deregistered agent")]
    TerminalState,
    #[error("no contract at the given address")]
    NotFound,
    #[error("historical proofs unsupported: requested block {requested}, current block {current}")]
    HistoricalState { requested: u64, current: u64 },
    #[error("invalid status transition {from:?} -> {to:?}")]
    InvalidTransition { from: OperationalStatus, to: OperationalStatus },
}

/// Agent lifecycle states. Running and Stopped are interchangeable;
/// Deregistered is terminal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperationalStatus {
    Running,
    Stopped,
    Deregistered,
}

impl OperationalStatus {
    /// Whether the lifecycle permits moving from `self` to `next`.
    pub fn can_transition(self, next: OperationalStatus) -> bool {
        use OperationalStatus::*;
        matches!(
            (self, next),
            (Running, Stopped) | (Stopped, Running) | (Running, Deregistered) | (Stopped, Deregistered)
        )
    }

    fn code(self) -> u8 {
        match self {
            OperationalStatus::Running => 1,
            OperationalStatus::Stopped => 2,
            OperationalStatus::Deregistered => 3,
        }
    }
}

/// Boolean KYC predicates; no personal data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KycPredicates {
    pub is_legal_entity: bool,
    pub not_sanctioned: bool,
}

impl KycPredicates {
    pub fn all_true(&self) -> bool {
        self.is_legal_entity && self.not_sanctioned
    }
}

/// Issuer-signed predicate credential over a commitment to the subject's
/// registration key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KycCredential {
    pub subject_commitment: Digest,
    pub predicate_flags: KycPredicates,
    pub issuer_signature: Signature,
}

/// Commitment binding a KYC credential to a registration key.
pub fn kyc_subject_commitment(owner: &PublicKey) -> Digest {
    digest_parts(&[b"baid.kyc.subject.v1", &owner.0])
}

fn kyc_signing_bytes(subject: &Digest, flags: &KycPredicates) -> Vec<u8> {
    canonical_encode(&[
        b"baid.kyc.v1",
        &subject.0,
        &[flags.is_legal_entity as u8, flags.not_sanctioned as u8],
    ])
    .expect("kyc parts below 2^32-1 bytes")
}

/// Issue a predicate credential for `owner` under the issuer key.
pub fn issue_kyc(issuer: &KeyPair, owner: &PublicKey, flags: KycPredicates) -> KycCredential {
    let subject_commitment = kyc_subject_commitment(owner);
    let issuer_signature = issuer.sign(&kyc_signing_bytes(&subject_commitment, &flags));
    KycCredential { subject_commitment, predicate_flags: flags, issuer_signature }
}

/// Check issuer signature and subject binding; flag truth is the caller's
/// policy decision and is checked separately at registration.
pub fn verify_kyc(issuer: &PublicKey, cred: &KycCredential, owner: &PublicKey) -> bool {
    cred.subject_commitment == kyc_subject_commitment(owner)
        && verify_sig(
            issuer,
            &kyc_signing_bytes(&cred.subject_commitment, &cred.predicate_flags),
            &cred.issuer_signature,
        )
}

/// Caller-supplied agent metadata outside the identity digest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAttribute {
    pub capabilities: Vec<String>,
    pub roles: Vec<String>,
}

/// Full on-contract attribute record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub name: String,
    pub program_commitment: Digest,
    pub profile_hash: Digest,
    pub user_id: String,
    pub agent_id: String,
    pub capabilities: Vec<String>,
    pub roles: Vec<String>,
}

/// User identity contract: the owner key and the list of bound agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserIdentityContract {
    pub address: Digest,
    pub owner_pubkey: PublicKey,
    pub user_id: String,
    pub agent_binding_list: Vec<String>,
    storage: SparseTrie,
}

/// Agent identity contract: ownership, lifecycle status, attributes, and the
/// metadata URL, with version/timestamp audit fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentIdentityContract {
    pub address: Digest,
    pub owner_user: Digest,
    pub operational_status: OperationalStatus,
    pub attribute: AttributeRecord,
    pub agent_facts_url: String,
    pub version: u64,
    pub updated_at: u64,
    storage: SparseTrie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contract {
    User(UserIdentityContract),
    Agent(AgentIdentityContract),
}

impl Contract {
    fn storage(&self) -> &SparseTrie {
        match self {
            Contract::User(c) => &c.storage,
            Contract::Agent(c) => &c.storage,
        }
    }
}

// ---- storage slot layout ----------------------------------------------

fn slot(label: &str) -> Digest {
    digest_parts(&[b"baid.slot.v1", label.as_bytes()])
}

fn list_slot(label: &str, index: u64) -> Digest {
    digest_parts(&[b"baid.slot.list.v1", label.as_bytes(), &index.to_be_bytes()])
}

/// Storage slot anchoring an agent's identity digest, derived from the
/// textual agent id. Verifiers recompute this key independently.
pub fn agentid_slot(agent_id_text: &str) -> Digest {
    digest(
        &canonical_encode(&[b"agentid_slot", agent_id_text.as_bytes()])
            .expect("slot parts below 2^32-1 bytes"),
    )
}

/// Account leaf value binding a contract's storage root into the state trie.
pub fn account_hash(storage_root: &Digest) -> Digest {
    digest_parts(&[b"baid.account.v1", &storage_root.0])
}

/// Deterministic user contract address.
pub fn user_contract_address(user_id: &str, owner: &PublicKey) -> Digest {
    digest_parts(&[b"baid.user_contract.v1", user_id.as_bytes(), &owner.0])
}

/// Deterministic agent contract address.
pub fn agent_contract_address(agent_id_text: &str) -> Digest {
    digest_parts(&[b"baid.agent_contract.v1", agent_id_text.as_bytes()])
}

fn u64_value(v: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    out[24..].copy_from_slice(&v.to_be_bytes());
    out
}

fn status_value(s: OperationalStatus) -> [u8; 32] {
    let mut out = [0u8; 32];
    out[31] = s.code();
    out
}

fn text_value(s: &str) -> [u8; 32] {
    digest(s.as_bytes()).0
}

fn string_list_bytes(items: &[String]) -> Vec<u8> {
    let parts: Vec<&[u8]> = items.iter().map(|s| s.as_bytes()).collect();
    canonical_encode(&parts).expect("list parts below 2^32-1 bytes")
}

fn list_value(tag: &[u8], items: &[String]) -> [u8; 32] {
    digest_parts(&[tag, &string_list_bytes(items)]).0
}

/// The binding-length slot stores `len + 1` so an initialized empty list is
/// distinguishable from storage that was never touched.
fn binding_len_value(len: u64) -> [u8; 32] {
    u64_value(len + 1)
}

/// Write one slot, charging the meter for what the write actually did:
/// fresh stores and modifications price differently, and writing the value
/// a slot already holds charges nothing.
fn store(trie: &mut SparseTrie, meter: &mut GasMeter, key: Digest, value: [u8; 32]) {
    let prior = trie.get(&key.0);
    if prior == value {
        return;
    }
    if prior == [0u8; 32] {
        meter.charge_store_new();
    } else {
        meter.charge_store_mod();
    }
    trie.update(key.0, value);
}

// ---- call signing ------------------------------------------------------

/// Bytes the owner signs to authorize `add_agent`.
pub fn add_agent_call_bytes(
    user_addr: &Digest,
    agent: &AgentIdentifier,
    attribute: &AgentAttribute,
    facts_url: &str,
) -> Vec<u8> {
    canonical_encode(&[
        b"baid.call.add_agent.v1",
        &user_addr.0,
        &agent.id_digest.0,
        &string_list_bytes(&attribute.capabilities),
        &string_list_bytes(&attribute.roles),
        facts_url.as_bytes(),
    ])
    .expect("call parts below 2^32-1 bytes")
}

/// Bytes the owner signs to authorize `update_agent`.
pub fn update_agent_call_bytes(
    agent_addr: &Digest,
    attribute: &AgentAttribute,
    facts_url: &str,
) -> Vec<u8> {
    canonical_encode(&[
        b"baid.call.update_agent.v1",
        &agent_addr.0,
        &string_list_bytes(&attribute.capabilities),
        &string_list_bytes(&attribute.roles),
        facts_url.as_bytes(),
    ])
    .expect("call parts below 2^32-1 bytes")
}

/// Bytes the owner signs to authorize `remove_agent`.
pub fn remove_agent_call_bytes(agent_addr: &Digest) -> Vec<u8> {
    canonical_encode(&[b"baid.call.remove_agent.v1", &agent_addr.0])
        .expect("call parts below 2^32-1 bytes")
}

// ---- proofs ------------------------------------------------------------

/// Dual-path storage proof: the account path anchors the contract's storage
/// root under the state root, the storage path anchors the slot value under
/// the storage root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageProofBundle {
    pub contract_addr: Digest,
    pub slot_key: Digest,
    pub block_number: u64,
    pub state_root: Digest,
    pub storage_root: Digest,
    pub account_path: TriePath,
    pub storage_path: TriePath,
    #[serde(with = "crate::crypto::hexarr")]
    pub value: [u8; 32],
}

/// Full structural check of a proof bundle against its own state root.
pub fn verify_proof_bundle(bundle: &StorageProofBundle) -> bool {
    bundle.account_path.key == bundle.contract_addr.0
        && bundle.storage_path.key == bundle.slot_key.0
        && bundle.account_path.value == account_hash(&bundle.storage_root).0
        && bundle.storage_path.value == bundle.value
        && crate::crypto::smt::verify_path(&bundle.state_root, &bundle.account_path)
        && crate::crypto::smt::verify_path(&bundle.storage_root, &bundle.storage_path)
}

// ---- discovery ---------------------------------------------------------

/// Resolves an agent-facts URL (or file path) to its document.
pub trait FactsResolver {
    fn resolve(&self, url: &str) -> Option<AgentFacts>;
}

/// Facts store keyed by URL; the usual choice for tests and simulations.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct InMemoryFacts {
    pub entries: BTreeMap<String, AgentFacts>,
}

impl FactsResolver for InMemoryFacts {
    fn resolve(&self, url: &str) -> Option<AgentFacts> {
        self.entries.get(url).cloned()
    }
}

/// Resolves facts URLs as filesystem paths, optionally under a base
/// directory.
#[derive(Clone, Debug, Default)]
pub struct FsFacts {
    pub base: Option<PathBuf>,
}

impl FactsResolver for FsFacts {
    fn resolve(&self, url: &str) -> Option<AgentFacts> {
        let path = match &self.base {
            Some(base) => base.join(url),
            None => PathBuf::from(url),
        };
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscoveryQuery {
    Capability(String),
    Name(String),
}

/// One discovery result: the contract record, its resolved facts (when the
/// resolver found any), and whether the facts signature checked out under
/// the owner's key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveredAgent {
    pub agent: AgentIdentityContract,
    pub facts: Option<AgentFacts>,
    pub trusted: bool,
}

// ---- the ledger --------------------------------------------------------

/// Single-writer registry state. Snapshots serialize to JSON and restore
/// losslessly, state root included.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ledger {
    block_number: u64,
    accounts: BTreeMap<Digest, Contract>,
    state_trie: SparseTrie,
    gas_log: Vec<GasReceipt>,
    kyc_issuer: PublicKey,
    kyc_registry: BTreeSet<Digest>,
    users: BTreeMap<String, Digest>,
    agents: BTreeMap<String, Digest>,
}

impl Ledger {
    /// Fresh ledger trusting `kyc_issuer` for registration credentials.
    pub fn new(kyc_issuer: PublicKey) -> Self {
        Ledger {
            block_number: 0,
            accounts: BTreeMap::new(),
            state_trie: SparseTrie::new(),
            gas_log: Vec::new(),
            kyc_issuer,
            kyc_registry: BTreeSet::new(),
            users: BTreeMap::new(),
            agents: BTreeMap::new(),
        }
    }

    pub fn block_number(&self) -> u64 {
        self.block_number
    }

    pub fn state_root(&self) -> Digest {
        self.state_trie.root()
    }

    pub fn gas_log(&self) -> &[GasReceipt] {
        &self.gas_log
    }

    pub fn kyc_issuer(&self) -> PublicKey {
        self.kyc_issuer
    }

    pub fn user(&self, addr: &Digest) -> Option<&UserIdentityContract> {
        match self.accounts.get(addr) {
            Some(Contract::User(c)) => Some(c),
            _ => None,
        }
    }

    pub fn agent(&self, addr: &Digest) -> Option<&AgentIdentityContract> {
        match self.accounts.get(addr) {
            Some(Contract::Agent(c)) => Some(c),
            _ => None,
        }
    }

    pub fn user_address(&self, user_id: &str) -> Option<Digest> {
        self.users.get(user_id).copied()
    }

    pub fn agent_address(&self, agent_id_text: &str) -> Option<Digest> {
        self.agents.get(agent_id_text).copied()
    }

    fn sync_account(&mut self, addr: Digest) {
        if let Some(contract) = self.accounts.get(&addr) {
            let root = contract.storage().root();
            self.state_trie.update(addr.0, account_hash(&root).0);
        }
    }

    /// Create a user identity contract after KYC checks pass.
    pub fn register_user(
        &mut self,
        kyc: &KycCredential,
        owner_pubkey: PublicKey,
        user_id: &str,
    ) -> Result<(Digest, GasReceipt), LedgerError> {
        if !verify_kyc(&self.kyc_issuer, kyc, &owner_pubkey) {
            return Err(LedgerError::KycRejected("issuer signature or subject mismatch"));
        }
        if !kyc.predicate_flags.all_true() {
            return Err(LedgerError::KycRejected("predicate flags not satisfied"));
        }
        if self.users.contains_key(user_id) {
            return Err(LedgerError::AlreadyRegistered(user_id.to_string()));
        }

        let address = user_contract_address(user_id, &owner_pubkey);
        let mut meter = GasMeter::new();
        meter.charge_kyc_verify();
        meter.charge_contract_create();

        let mut storage = SparseTrie::new();
        store(&mut storage, &mut meter, slot("owner_pubkey"), owner_pubkey.0);
        store(&mut storage, &mut meter, slot("user_id"), text_value(user_id));
        store(&mut storage, &mut meter, slot("agent_binding_len"), binding_len_value(0));
        meter.charge_event(); // UserRegistered

        let contract = UserIdentityContract {
            address,
            owner_pubkey,
            user_id: user_id.to_string(),
            agent_binding_list: Vec::new(),
            storage,
        };
        self.accounts.insert(address, Contract::User(contract));
        self.users.insert(user_id.to_string(), address);
        self.kyc_registry.insert(kyc.subject_commitment);
        self.sync_account(address);
        self.block_number += 1;

        let receipt = meter.finish("register_user");
        self.gas_log.push(receipt.clone());
        Ok((address, receipt))
    }

    /// Create an agent identity contract and bind it to the user, after
    /// verifying the owner's call signature and the identifier's internal
    /// consistency.
    pub fn add_agent(
        &mut self,
        caller_sig: &Signature,
        user_addr: Digest,
        agent: &AgentIdentifier,
        attribute: AgentAttribute,
        facts_url: &str,
    ) -> Result<(Digest, GasReceipt), LedgerError> {
        let user = self.user(&user_addr).ok_or(LedgerError::NotFound)?;
        let call = add_agent_call_bytes(&user_addr, agent, &attribute, facts_url);
        if !verify_sig(&user.owner_pubkey, &call, caller_sig) {
            return Err(LedgerError::Unauthorized);
        }
        if agent.recompute_digest() != agent.id_digest {
            return Err(LedgerError::IdMismatch("digest does not cover the stated fields"));
        }
        if agent.user_id != user.user_id {
            return Err(LedgerError::IdMismatch("identifier names a different user id"));
        }
        let text = agent.text();
        if self.agents.contains_key(&text) {
            return Err(LedgerError::AlreadyBound(text));
        }
        let binding_index = user.agent_binding_list.len() as u64;

        let address = agent_contract_address(&text);
        let new_block = self.block_number + 1;
        let mut meter = GasMeter::new();
        meter.charge_sig_verify();
        meter.charge_contract_create();

        let mut storage = SparseTrie::new();
        store(&mut storage, &mut meter, slot("owner_user"), user_addr.0);
        store(&mut storage, &mut meter, slot("status"), status_value(OperationalStatus::Running));
        store(&mut storage, &mut meter, slot("name"), text_value(&agent.name));
        store(&mut storage, &mut meter, slot("program_commitment"), agent.program_commitment.0 .0);
        store(&mut storage, &mut meter, slot("profile_hash"), agent.profile_hash.0);
        store(&mut storage, &mut meter, slot("user_id"), text_value(&agent.user_id));
        store(&mut storage, &mut meter, slot("agent_id"), agent.id_digest.0);
        store(&mut storage, &mut meter, slot("capabilities"), list_value(b"baid.caps.v1", &attribute.capabilities));
        store(&mut storage, &mut meter, slot("roles"), list_value(b"baid.roles.v1", &attribute.roles));
        store(&mut storage, &mut meter, slot("facts_url"), text_value(facts_url));
        store(&mut storage, &mut meter, slot("version"), u64_value(1));
        store(&mut storage, &mut meter, slot("updated_at"), u64_value(new_block));
        store(&mut storage, &mut meter, agentid_slot(&text), agent.id_digest.0);

        let record = AttributeRecord {
            name: agent.name.clone(),
            program_commitment: agent.program_commitment.0,
            profile_hash: agent.profile_hash,
            user_id: agent.user_id.clone(),
            agent_id: text.clone(),
            capabilities: attribute.capabilities,
            roles: attribute.roles,
        };
        let contract = AgentIdentityContract {
            address,
            owner_user: user_addr,
            operational_status: OperationalStatus::Running,
            attribute: record,
            agent_facts_url: facts_url.to_string(),
            version: 1,
            updated_at: new_block,
            storage,
        };
        self.accounts.insert(address, Contract::Agent(contract));
        self.agents.insert(text.clone(), address);

        // Append to the user's binding list: one fresh element slot plus a
        // length-slot modification.
        if let Some(Contract::User(user)) = self.accounts.get_mut(&user_addr) {
            store(
                &mut user.storage,
                &mut meter,
                list_slot("agent_binding", binding_index),
                agent.id_digest.0,
            );
            store(
                &mut user.storage,
                &mut meter,
                slot("agent_binding_len"),
                binding_len_value(binding_index + 1),
            );
            user.agent_binding_list.push(text);
        }
        meter.charge_event(); // AgentAdded
        meter.charge_event(); // BindingAppended

        self.sync_account(address);
        self.sync_account(user_addr);
        self.block_number = new_block;

        let receipt = meter.finish("add_agent");
        self.gas_log.push(receipt.clone());
        Ok((address, receipt))
    }

    /// Authorize a call against the agent's owning user; shared by update
    /// and remove.
    fn authorize_agent_call(
        &self,
        agent_addr: &Digest,
        call: &[u8],
        caller_sig: &Signature,
    ) -> Result<(), LedgerError> {
        let agent = self.agent(agent_addr).ok_or(LedgerError::NotFound)?;
        let owner = self.user(&agent.owner_user).ok_or(LedgerError::NotFound)?;
        if !verify_sig(&owner.owner_pubkey, call, caller_sig) {
            return Err(LedgerError::Unauthorized);
        }
        if agent.operational_status == OperationalStatus::Deregistered {
            return Err(LedgerError::TerminalState);
        }
        Ok(())
    }

    /// Replace an agent's mutable attributes; bumps version and timestamp.
    pub fn update_agent(
        &mut self,
        caller_sig: &Signature,
        agent_addr: Digest,
        new_attribute: AgentAttribute,
        new_facts_url: &str,
    ) -> Result<GasReceipt, LedgerError> {
        let call = update_agent_call_bytes(&agent_addr, &new_attribute, new_facts_url);
        self.authorize_agent_call(&agent_addr, &call, caller_sig)?;

        let new_block = self.block_number + 1;
        let mut meter = GasMeter::new();
        meter.charge_sig_verify();

        let Some(Contract::Agent(agent)) = self.accounts.get_mut(&agent_addr) else {
            return Err(LedgerError::NotFound);
        };
        store(&mut agent.storage, &mut meter, slot("capabilities"), list_value(b"baid.caps.v1", &new_attribute.capabilities));
        store(&mut agent.storage, &mut meter, slot("roles"), list_value(b"baid.roles.v1", &new_attribute.roles));
        store(&mut agent.storage, &mut meter, slot("facts_url"), text_value(new_facts_url));
        let new_version = agent.version + 1;
        store(&mut agent.storage, &mut meter, slot("version"), u64_value(new_version));
        store(&mut agent.storage, &mut meter, slot("updated_at"), u64_value(new_block));
        meter.charge_event(); // AgentUpdated

        agent.attribute.capabilities = new_attribute.capabilities;
        agent.attribute.roles = new_attribute.roles;
        agent.agent_facts_url = new_facts_url.to_string();
        agent.version = new_version;
        agent.updated_at = new_block;

        self.sync_account(agent_addr);
        self.block_number = new_block;

        let receipt = meter.finish("update_agent");
        self.gas_log.push(receipt.clone());
        Ok(receipt)
    }

    /// Deregister an agent: terminal status, binding removed, record kept
    /// for audit.
    pub fn remove_agent(
        &mut self,
        caller_sig: &Signature,
        agent_addr: Digest,
    ) -> Result<GasReceipt, LedgerError> {
        let call = remove_agent_call_bytes(&agent_addr);
        self.authorize_agent_call(&agent_addr, &call, caller_sig)?;

        let agent = self.agent(&agent_addr).expect("authorized above");
        let from = agent.operational_status;
        if !from.can_transition(OperationalStatus::Deregistered) {
            return Err(LedgerError::InvalidTransition { from, to: OperationalStatus::Deregistered });
        }
        let user_addr = agent.owner_user;
        let text = agent.attribute.agent_id.clone();

        let new_block = self.block_number + 1;
        let mut meter = GasMeter::new();
        meter.charge_sig_verify();

        let Some(Contract::Agent(agent)) = self.accounts.get_mut(&agent_addr) else {
            return Err(LedgerError::NotFound);
        };
        store(&mut agent.storage, &mut meter, slot("status"), status_value(OperationalStatus::Deregistered));
        store(&mut agent.storage, &mut meter, slot("updated_at"), u64_value(new_block));
        agent.operational_status = OperationalStatus::Deregistered;
        agent.updated_at = new_block;

        // Swap-remove from the binding list: the vacated tail slot clears,
        // and when the target was not the tail, the tail value moves into
        // its position first.
        if let Some(Contract::User(user)) = self.accounts.get_mut(&user_addr) {
            if let Some(idx) = user.agent_binding_list.iter().position(|t| *t == text) {
                let last = user.agent_binding_list.len() - 1;
                if idx != last {
                    let moved = crate::identity::AgentIdentifier::digest_from_text(
                        &user.agent_binding_list[last],
                    )
                    .expect("binding list holds well-formed ids");
                    store(&mut user.storage, &mut meter, list_slot("agent_binding", idx as u64), moved.0);
                }
                store(&mut user.storage, &mut meter, list_slot("agent_binding", last as u64), [0u8; 32]);
                store(&mut user.storage, &mut meter, slot("agent_binding_len"), binding_len_value(last as u64));
                user.agent_binding_list.swap_remove(idx);
            }
        }
        meter.charge_event(); // AgentDeregistered
        meter.charge_event(); // BindingRemoved

        self.sync_account(agent_addr);
        self.sync_account(user_addr);
        self.block_number = new_block;

        let receipt = meter.finish("remove_agent");
        self.gas_log.push(receipt.clone());
        Ok(receipt)
    }

    /// Produce the dual-path proof for one storage slot at the current
    /// block.
    pub fn get_storage_proof(
        &self,
        contract_addr: Digest,
        slot_key: Digest,
        block_number: u64,
    ) -> Result<StorageProofBundle, LedgerError> {
        if block_number != self.block_number {
            return Err(LedgerError::HistoricalState {
                requested: block_number,
                current: self.block_number,
            });
        }
        let contract = self.accounts.get(&contract_addr).ok_or(LedgerError::NotFound)?;
        let storage = contract.storage();
        let storage_root = storage.root();
        let storage_path = storage.prove(&slot_key.0);
        let account_path = self.state_trie.prove(&contract_addr.0);
        Ok(StorageProofBundle {
            contract_addr,
            slot_key,
            block_number,
            state_root: self.state_trie.root(),
            storage_root,
            value: storage_path.value,
            account_path,
            storage_path,
        })
    }

    /// List Running agents matching the query, with facts resolution and
    /// signature vetting. Entries with unresolvable or badly-signed facts
    /// stay listed, flagged untrusted.
    pub fn discover_agent(
        &self,
        query: &DiscoveryQuery,
        resolver: &dyn FactsResolver,
    ) -> Vec<DiscoveredAgent> {
        let mut out = Vec::new();
        for addr in self.agents.values() {
            let Some(agent) = self.agent(addr) else { continue };
            if agent.operational_status != OperationalStatus::Running {
                continue;
            }
            let matches = match query {
                DiscoveryQuery::Capability(c) => agent.attribute.capabilities.iter().any(|x| x == c),
                DiscoveryQuery::Name(n) => agent.attribute.name == *n,
            };
            if !matches {
                continue;
            }
            let facts = resolver.resolve(&agent.agent_facts_url);
            let trusted = match (&facts, self.user(&agent.owner_user)) {
                (Some(f), Some(owner)) => f.verify(&owner.owner_pubkey),
                _ => false,
            };
            out.push(DiscoveredAgent { agent: agent.clone(), facts, trusted });
        }
        out
    }
}
