//! `baid`: batch-friendly command line over the agent identity framework.
//!
//! Every command emits exactly one machine-readable JSON document on
//! standard output (CI can diff it) and keeps diagnostics on standard
//! error. Exit code 0 means success or verified-true, 1 means a
//! verification answered false, 2 means bad input. All key material,
//! profiles, and simulated sessions derive from `--seed`, so a command
//! line reproduces its output byte for byte.
//!
//! State lives under `BAID_HOME` (default: the working directory):
//! `ledger.json` is the registry snapshot, `vk.json` the verifying key
//! written by proving commands, `agents/<id>.json` the local enrollment
//! records, and `facts/` the published agent-facts documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use baid_core::credential::{
    issue_credential, make_revocation_list, CredentialDraft, PermissionCredential,
    RevocationList, ScopeEntry, ScopeRequest,
};
use baid_core::crypto::{digest_parts, KeyPair};
use baid_core::engine::VerifyingKey;
use baid_core::identity::{
    bind_owner, make_agent_id, profile_hash, AgentFacts, AgentIdentifier, EmbeddingVector,
    ProfileConfig,
};
use baid_core::ledger::{
    add_agent_call_bytes, agentid_slot, issue_kyc, remove_agent_call_bytes,
    update_agent_call_bytes, verify_proof_bundle, AgentAttribute, DiscoveryQuery, FsFacts,
    KycPredicates, Ledger,
};
use baid_core::pipeline::{
    BiometricStatement, ConfigStatement, FinalAttestation, Pipeline, PipelineCommitments,
    SessionState,
};
use baid_core::provenance::issue_certificate;
use baid_core::runtime::{
    adversary_suite, handle_verification_request, run_scenario, run_turn, synthetic_embedding,
    AgentInstance, AttackKind, DemoIdentity, RuntimeError, ScenarioConfig, VerifierView,
};

/// Step bound shared with the library's own simulations, so seeds produce
/// the same verifying keys here and there.
const PIPELINE_STEPS: u64 = 1 << 20;

#[derive(Parser, Debug)]
#[command(name = "baid", version, about = "Agent identity registry, proving, and verification")]
struct Cli {
    /// Ledger snapshot path (default: $BAID_HOME/ledger.json).
    #[arg(long, global = true)]
    ledger: Option<PathBuf>,

    /// Verifying-key path; proving commands write it, verify-attestation
    /// reads it (default: $BAID_HOME/vk.json).
    #[arg(long, global = true)]
    vk: Option<PathBuf>,

    /// Biometric threshold numerator.
    #[arg(long, global = true, default_value_t = 3)]
    tau_num: u64,

    /// Biometric threshold denominator.
    #[arg(long, global = true, default_value_t = 4)]
    tau_den: u64,

    /// Master seed; every key, profile, and simulated session derives
    /// from it.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Also write the JSON document to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create the user identity contract (initializes the ledger snapshot
    /// on first use).
    RegisterUser(RegisterUserArgs),

    /// Create an agent identity contract bound to a registered user, plus
    /// its local enrollment record and signed facts document.
    AddAgent(AddAgentArgs),

    /// Replace an agent's capabilities, roles, and facts URL.
    UpdateAgent(UpdateAgentArgs),

    /// Deregister an agent (terminal; the record stays for audit).
    RemoveAgent(RemoveAgentArgs),

    /// Produce and check the dual Merkle proof for an agent's identity
    /// slot at the current block.
    StorageProof(StorageProofArgs),

    /// List running agents matching a capability or name, with facts
    /// resolution and signature vetting.
    Discover(DiscoverArgs),

    /// Issue an owner-signed permission credential, gated on a fresh
    /// biometric proof.
    IssueVc(IssueVcArgs),

    /// Prove a full session: biometric phase, configuration phase, then
    /// conversation turns; outputs the final attestation bundle.
    ProveSession(ProveSessionArgs),

    /// Verify an attestation bundle against the registry and a presented
    /// credential; exit 0 only if the counterparty would be accepted.
    VerifyAttestation(VerifyAttestationArgs),

    /// Run the two-agent purchase simulation, optionally under one attack
    /// or the whole adversary suite.
    RunScenario(RunScenarioArgs),

    /// Report recorded gas receipts grouped by lifecycle operation.
    GasReport,
}

#[derive(Args, Debug)]
struct RegisterUserArgs {
    /// Organization-scoped user identifier, e.g. org:acme:cn:procurement.
    #[arg(long)]
    user_id: String,
}

#[derive(Args, Debug)]
struct AddAgentArgs {
    /// Owning user's identifier (must already be registered).
    #[arg(long)]
    user_id: String,

    /// Agent name; part of the identity digest.
    #[arg(long)]
    name: String,

    /// Capabilities, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    capabilities: Vec<String>,

    /// Roles, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    roles: Vec<String>,

    /// Facts document path, relative to BAID_HOME (default: facts/<name>.json).
    #[arg(long)]
    facts_url: Option<String>,

    /// Model identifier recorded in the agent's profile.
    #[arg(long, default_value = "assistant-7b")]
    model: String,
}

#[derive(Args, Debug)]
struct UpdateAgentArgs {
    /// Agent identifier text (agentid:<64 hex>).
    #[arg(long)]
    agent_id: String,

    /// Replacement capabilities, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    capabilities: Vec<String>,

    /// Replacement roles, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    roles: Vec<String>,

    /// Replacement facts path (default: keep the current one).
    #[arg(long)]
    facts_url: Option<String>,
}

#[derive(Args, Debug)]
struct RemoveAgentArgs {
    /// Agent identifier text (agentid:<64 hex>).
    #[arg(long)]
    agent_id: String,
}

#[derive(Args, Debug)]
struct StorageProofArgs {
    /// Agent identifier text (agentid:<64 hex>).
    #[arg(long)]
    agent_id: String,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct DiscoverArgs {
    /// Match agents advertising this capability.
    #[arg(long)]
    capability: Option<String>,

    /// Match agents by name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct IssueVcArgs {
    /// Agent identifier text (must be enrolled through add-agent).
    #[arg(long)]
    agent_id: String,

    /// Task identifier.
    #[arg(long)]
    task_id: String,

    /// Human-readable task definition.
    #[arg(long)]
    task_definition: String,

    /// Scoped action name.
    #[arg(long, default_value = "payment")]
    action: String,

    /// Upper bound for the scoped action.
    #[arg(long, default_value_t = 1000)]
    limit: u64,

    /// Validity window start (inclusive), in simulation clock units.
    #[arg(long, default_value_t = 100)]
    valid_from: u64,

    /// Validity window end (exclusive).
    #[arg(long, default_value_t = 200)]
    valid_until: u64,

    /// Security level recorded in the credential.
    #[arg(long, default_value_t = 1)]
    security_level: u32,
}

#[derive(Args, Debug)]
struct ProveSessionArgs {
    /// Agent identifier text (must be enrolled through add-agent).
    #[arg(long)]
    agent_id: String,

    /// Query sent each turn.
    #[arg(long, default_value = "list inventory")]
    query: String,

    /// Model endpoint response recorded each turn.
    #[arg(long, default_value = "ok")]
    response: String,

    /// Tool re-executed over the response: echo, check_inventory, or
    /// compute_total.
    #[arg(long, default_value = "echo")]
    tool: String,

    /// Tool parameters (format depends on the tool).
    #[arg(long, default_value = "")]
    tool_params: String,

    /// Number of conversation turns to prove.
    #[arg(long, default_value_t = 1)]
    turns: u64,
}

#[derive(Args, Debug)]
struct VerifyAttestationArgs {
    /// Attestation bundle file: either a bare bundle or a prove-session
    /// document.
    #[arg(long)]
    bundle: PathBuf,

    /// Permission credential file (issue-vc output).
    #[arg(long)]
    credential: PathBuf,

    /// Verifier clock, in simulation units.
    #[arg(long, default_value_t = 150)]
    now: u64,

    /// Requested action to check against the credential's scope.
    #[arg(long, default_value = "payment")]
    action: String,

    /// Requested amount for the action.
    #[arg(long, default_value_t = 1)]
    amount: u64,

    /// Owner-signed revocation list file (default: an empty list signed
    /// with the seed-derived owner key).
    #[arg(long)]
    revocations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunScenarioArgs {
    /// Inject one attack; the command succeeds when the attack is stopped.
    #[arg(long, value_enum, conflicts_with = "suite")]
    attack: Option<AttackName>,

    /// Run all four attacks; the command succeeds when every one is
    /// rejected with its expected defense.
    #[arg(long)]
    suite: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackName {
    CodeSubstitution,
    ReplayReorder,
    DataFabrication,
    Impersonation,
}

impl From<AttackName> for AttackKind {
    fn from(name: AttackName) -> Self {
        match name {
            AttackName::CodeSubstitution => AttackKind::CodeSubstitution,
            AttackName::ReplayReorder => AttackKind::ReplayReorder,
            AttackName::DataFabrication => AttackKind::DataFabrication,
            AttackName::Impersonation => AttackKind::Impersonation,
        }
    }
}

// ---- outcome plumbing --------------------------------------------------------

/// How a command ends besides plain success: a negative verification
/// verdict (the document still prints, exit 1) or unusable input (exit 2).
enum Failure {
    Rejected(Value),
    Input(String),
}

fn input<E: std::fmt::Display>(err: E) -> Failure {
    Failure::Input(err.to_string())
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (document, code) = match run(&cli) {
        Ok(doc) => (Some(doc), ExitCode::SUCCESS),
        Err(Failure::Rejected(doc)) => (Some(doc), ExitCode::from(1)),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            (None, ExitCode::from(2))
        }
    };
    if let Some(doc) = document {
        let text = serde_json::to_string_pretty(&doc).expect("document serialization cannot fail");
        println!("{text}");
        if let Some(path) = &cli.out {
            if let Err(err) = write_file(path, &(text + "\n")) {
                eprintln!("error: cannot write {}: {err}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    code
}

fn run(cli: &Cli) -> CmdResult {
    let ctx = Context::resolve(cli)?;
    match &cli.cmd {
        Command::RegisterUser(args) => cmd_register_user(&ctx, args),
        Command::AddAgent(args) => cmd_add_agent(&ctx, args),
        Command::UpdateAgent(args) => cmd_update_agent(&ctx, args),
        Command::RemoveAgent(args) => cmd_remove_agent(&ctx, args),
        Command::StorageProof(args) => cmd_storage_proof(&ctx, args),
        Command::Discover(args) => cmd_discover(&ctx, args),
        Command::IssueVc(args) => cmd_issue_vc(&ctx, args),
        Command::ProveSession(args) => cmd_prove_session(&ctx, args),
        Command::VerifyAttestation(args) => cmd_verify_attestation(&ctx, args),
        Command::RunScenario(args) => cmd_run_scenario(&ctx, args),
        Command::GasReport => cmd_gas_report(&ctx),
    }
}

// ---- context and derivations -------------------------------------------------

struct Context {
    home: PathBuf,
    ledger_path: PathBuf,
    vk_path: PathBuf,
    seed: u64,
    tau: (u64, u64),
}

impl Context {
    fn resolve(cli: &Cli) -> Result<Self, Failure> {
        if cli.tau_num == 0 || cli.tau_den == 0 || cli.tau_num > cli.tau_den {
            return Err(Failure::Input(format!(
                "threshold {}/{} must satisfy 0 < num/den <= 1",
                cli.tau_num, cli.tau_den
            )));
        }
        let home = std::env::var_os("BAID_HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Context {
            ledger_path: cli.ledger.clone().unwrap_or_else(|| home.join("ledger.json")),
            vk_path: cli.vk.clone().unwrap_or_else(|| home.join("vk.json")),
            home,
            seed: cli.seed,
            tau: (cli.tau_num, cli.tau_den),
        })
    }

    fn kyc_issuer(&self) -> KeyPair {
        KeyPair::derive(&[b"baid.cli.kyc", &self.seed.to_be_bytes()])
    }

    fn owner_key(&self, user_id: &str) -> KeyPair {
        KeyPair::derive(&[b"baid.cli.owner", &self.seed.to_be_bytes(), user_id.as_bytes()])
    }

    fn root_ca(&self) -> KeyPair {
        KeyPair::derive(&[b"baid.cli.rootca", &self.seed.to_be_bytes()])
    }

    fn model_server(&self) -> KeyPair {
        KeyPair::derive(&[b"baid.cli.server", &self.seed.to_be_bytes()])
    }

    /// Deterministic per-user biometric template.
    fn template(&self, user_id: &str) -> EmbeddingVector {
        let d = digest_parts(&[b"baid.cli.embed", &self.seed.to_be_bytes(), user_id.as_bytes()]);
        let compact = u64::from_be_bytes(d.0[..8].try_into().expect("eight bytes")) % 100_000;
        synthetic_embedding(compact as i64, 0)
    }

    /// The profile enrolled for a user's agents: owner binding, template,
    /// model parameter, and the standing policy rule.
    fn profile(&self, user_id: &str, model: &str) -> ProfileConfig {
        let mut params = BTreeMap::new();
        params.insert("model".to_string(), model.to_string());
        let base = ProfileConfig {
            biometric_template: None,
            human_identifier: String::new(),
            operational_params: params,
            policy_rules: vec!["no-pii-disclosure".to_string()],
        };
        bind_owner(&base, user_id, self.template(user_id), false)
            .expect("fresh profile accepts its first binding")
    }

    fn pipeline(&self) -> Pipeline {
        Pipeline::new(PIPELINE_STEPS, self.seed)
    }

    fn load_ledger(&self) -> Result<Ledger, Failure> {
        let bytes = fs::read(&self.ledger_path).map_err(|_| {
            Failure::Input(format!(
                "no ledger snapshot at {}; run register-user first",
                self.ledger_path.display()
            ))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Input(format!("ledger snapshot is not valid JSON: {e}")))
    }

    fn save_ledger(&self, ledger: &Ledger) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(ledger).expect("snapshot serialization cannot fail");
        write_file(&self.ledger_path, &(text + "\n"))
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", self.ledger_path.display())))
    }

    fn save_vk(&self, vk: &VerifyingKey) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(vk).expect("key serialization cannot fail");
        write_file(&self.vk_path, &(text + "\n"))
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", self.vk_path.display())))
    }

    fn load_vk(&self) -> Result<VerifyingKey, Failure> {
        let bytes = fs::read(&self.vk_path).map_err(|_| {
            Failure::Input(format!(
                "no verifying key at {}; run prove-session or issue-vc first",
                self.vk_path.display()
            ))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Input(format!("verifying key is not valid JSON: {e}")))
    }

    fn record_path(&self, agent_id_text: &str) -> Result<PathBuf, Failure> {
        let hex = agent_id_text
            .strip_prefix("agentid:")
            .ok_or_else(|| Failure::Input(format!("malformed agent id `{agent_id_text}`")))?;
        Ok(self.home.join("agents").join(format!("{hex}.json")))
    }

    fn save_record(&self, record: &EnrollmentRecord) -> Result<(), Failure> {
        let path = self.record_path(&record.identifier.text())?;
        let text = serde_json::to_string_pretty(record).expect("record serialization cannot fail");
        write_file(&path, &(text + "\n"))
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
    }

    fn load_record(&self, agent_id_text: &str) -> Result<EnrollmentRecord, Failure> {
        let path = self.record_path(agent_id_text)?;
        let bytes = fs::read(&path).map_err(|_| {
            Failure::Input(format!(
                "no enrollment record at {}; run add-agent first",
                path.display()
            ))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Input(format!("enrollment record is not valid JSON: {e}")))
    }
}

/// Local sidecar written at enrollment: everything needed to re-prove the
/// agent's identity later (the registry stores only hashes).
#[derive(Serialize, Deserialize)]
struct EnrollmentRecord {
    identifier: AgentIdentifier,
    profile: ProfileConfig,
}

fn write_file(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)
}

/// Facts documents live under BAID_HOME; keep the URL inside it.
fn check_facts_url(url: &str) -> Result<(), Failure> {
    let path = Path::new(url);
    if path.is_absolute() || url.split('/').any(|seg| seg == "..") || url.is_empty() {
        return Err(Failure::Input(format!(
            "facts url `{url}` must be a relative path without parent components"
        )));
    }
    Ok(())
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("value serialization cannot fail")
}

// ---- registry commands -------------------------------------------------------

fn cmd_register_user(ctx: &Context, args: &RegisterUserArgs) -> CmdResult {
    let issuer = ctx.kyc_issuer();
    let mut ledger = if ctx.ledger_path.exists() {
        let ledger = ctx.load_ledger()?;
        if ledger.kyc_issuer() != issuer.public() {
            return Err(Failure::Input(format!(
                "ledger at {} was initialized under a different seed",
                ctx.ledger_path.display()
            )));
        }
        ledger
    } else {
        Ledger::new(issuer.public())
    };

    let owner = ctx.owner_key(&args.user_id);
    let kyc = issue_kyc(
        &issuer,
        &owner.public(),
        KycPredicates { is_legal_entity: true, not_sanctioned: true },
    );
    let (address, receipt) = ledger
        .register_user(&kyc, owner.public(), &args.user_id)
        .map_err(input)?;
    ctx.save_ledger(&ledger)?;

    Ok(json!({
        "user_id": args.user_id,
        "user_address": to_value(&address),
        "owner_pubkey": to_value(&owner.public()),
        "block_number": ledger.block_number(),
        "state_root": to_value(&ledger.state_root()),
        "gas": to_value(&receipt),
    }))
}

/// Resolve an agent's owning user and check that this seed reproduces the
/// registered owner key.
fn owner_for_agent(
    ctx: &Context,
    ledger: &Ledger,
    agent_id_text: &str,
) -> Result<(baid_core::crypto::Digest, String, KeyPair), Failure> {
    let agent_addr = ledger
        .agent_address(agent_id_text)
        .ok_or_else(|| Failure::Input(format!("no agent registered as `{agent_id_text}`")))?;
    let agent = ledger.agent(&agent_addr).expect("address came from the index");
    let user = ledger
        .user(&agent.owner_user)
        .ok_or_else(|| Failure::Input("agent's owning user is missing".to_string()))?;
    let owner = ctx.owner_key(&user.user_id);
    if owner.public() != user.owner_pubkey {
        return Err(Failure::Input(format!(
            "seed {} does not reproduce the owner key registered for {}",
            ctx.seed, user.user_id
        )));
    }
    Ok((agent_addr, user.user_id.clone(), owner))
}

fn write_facts(
    ctx: &Context,
    owner: &KeyPair,
    agent_id_text: &str,
    name: &str,
    capabilities: &[String],
    facts_url: &str,
) -> Result<AgentFacts, Failure> {
    check_facts_url(facts_url)?;
    let mut facts = AgentFacts {
        agent_id: agent_id_text.to_string(),
        capabilities: capabilities.to_vec(),
        endpoints: vec![("https".to_string(), format!("{name}.agents.example"))],
        signature: None,
        trust_status: "verified".to_string(),
    };
    facts.sign(owner);
    let path = ctx.home.join(facts_url);
    let text = serde_json::to_string_pretty(&facts).expect("facts serialization cannot fail");
    write_file(&path, &(text + "\n"))
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(facts)
}

fn cmd_add_agent(ctx: &Context, args: &AddAgentArgs) -> CmdResult {
    let mut ledger = ctx.load_ledger()?;
    let user_addr = ledger
        .user_address(&args.user_id)
        .ok_or_else(|| Failure::Input(format!("user `{}` is not registered", args.user_id)))?;
    let owner = ctx.owner_key(&args.user_id);
    let user = ledger.user(&user_addr).expect("address came from the index");
    if owner.public() != user.owner_pubkey {
        return Err(Failure::Input(format!(
            "seed {} does not reproduce the owner key registered for {}",
            ctx.seed, args.user_id
        )));
    }

    let profile = ctx.profile(&args.user_id, &args.model);
    let mut others = BTreeMap::new();
    others.insert("agent_version".to_string(), "1.0.0".to_string());
    let identifier = make_agent_id(
        &args.name,
        PipelineCommitments::standard().turn,
        &profile,
        &args.user_id,
        others,
    )
    .map_err(input)?;

    let facts_url = args
        .facts_url
        .clone()
        .unwrap_or_else(|| format!("facts/{}.json", args.name));
    let attribute = AgentAttribute {
        capabilities: args.capabilities.clone(),
        roles: args.roles.clone(),
    };
    let call = add_agent_call_bytes(&user_addr, &identifier, &attribute, &facts_url);
    let (agent_addr, receipt) = ledger
        .add_agent(&owner.sign(&call), user_addr, &identifier, attribute, &facts_url)
        .map_err(input)?;

    write_facts(ctx, &owner, &identifier.text(), &args.name, &args.capabilities, &facts_url)?;
    ctx.save_record(&EnrollmentRecord { identifier: identifier.clone(), profile })?;
    ctx.save_ledger(&ledger)?;

    Ok(json!({
        "agent_id": identifier.text(),
        "agent_address": to_value(&agent_addr),
        "profile_hash": to_value(&identifier.profile_hash),
        "program_commitment": to_value(&identifier.program_commitment),
        "facts_url": facts_url,
        "block_number": ledger.block_number(),
        "state_root": to_value(&ledger.state_root()),
        "gas": to_value(&receipt),
    }))
}

fn cmd_update_agent(ctx: &Context, args: &UpdateAgentArgs) -> CmdResult {
    let mut ledger = ctx.load_ledger()?;
    let (agent_addr, _user_id, owner) = owner_for_agent(ctx, &ledger, &args.agent_id)?;
    let current = ledger.agent(&agent_addr).expect("resolved above");
    let name = current.attribute.name.clone();
    let facts_url = args
        .facts_url
        .clone()
        .unwrap_or_else(|| current.agent_facts_url.clone());

    let attribute = AgentAttribute {
        capabilities: args.capabilities.clone(),
        roles: args.roles.clone(),
    };
    let call = update_agent_call_bytes(&agent_addr, &attribute, &facts_url);
    let receipt = ledger
        .update_agent(&owner.sign(&call), agent_addr, attribute, &facts_url)
        .map_err(input)?;

    write_facts(ctx, &owner, &args.agent_id, &name, &args.capabilities, &facts_url)?;
    ctx.save_ledger(&ledger)?;

    Ok(json!({
        "agent_id": args.agent_id,
        "facts_url": facts_url,
        "version": ledger.agent(&agent_addr).expect("still present").version,
        "block_number": ledger.block_number(),
        "state_root": to_value(&ledger.state_root()),
        "gas": to_value(&receipt),
    }))
}

fn cmd_remove_agent(ctx: &Context, args: &RemoveAgentArgs) -> CmdResult {
    let mut ledger = ctx.load_ledger()?;
    let (agent_addr, _user_id, owner) = owner_for_agent(ctx, &ledger, &args.agent_id)?;
    let call = remove_agent_call_bytes(&agent_addr);
    let receipt = ledger.remove_agent(&owner.sign(&call), agent_addr).map_err(input)?;
    ctx.save_ledger(&ledger)?;

    Ok(json!({
        "agent_id": args.agent_id,
        "operational_status": to_value(&ledger.agent(&agent_addr).expect("record kept").operational_status),
        "block_number": ledger.block_number(),
        "state_root": to_value(&ledger.state_root()),
        "gas": to_value(&receipt),
    }))
}

fn cmd_storage_proof(ctx: &Context, args: &StorageProofArgs) -> CmdResult {
    let ledger = ctx.load_ledger()?;
    let agent_addr = ledger
        .agent_address(&args.agent_id)
        .ok_or_else(|| Failure::Input(format!("no agent registered as `{}`", args.agent_id)))?;
    let bundle = ledger
        .get_storage_proof(agent_addr, agentid_slot(&args.agent_id), ledger.block_number())
        .map_err(input)?;
    let verified = verify_proof_bundle(&bundle);
    let document = json!({
        "agent_id": args.agent_id,
        "verified": verified,
        "bundle": to_value(&bundle),
    });
    if verified {
        Ok(document)
    } else {
        Err(Failure::Rejected(document))
    }
}

fn cmd_discover(ctx: &Context, args: &DiscoverArgs) -> CmdResult {
    let ledger = ctx.load_ledger()?;
    let (query, description) = match (&args.capability, &args.name) {
        (Some(cap), None) => (DiscoveryQuery::Capability(cap.clone()), json!({"capability": cap})),
        (None, Some(name)) => (DiscoveryQuery::Name(name.clone()), json!({"name": name})),
        _ => unreachable!("clap enforces exactly one selector"),
    };
    let resolver = FsFacts { base: Some(ctx.home.clone()) };
    let agents = ledger.discover_agent(&query, &resolver);
    Ok(json!({
        "query": description,
        "count": agents.len(),
        "agents": to_value(&agents),
    }))
}

// ---- proving commands ----------------------------------------------------------

/// Shared setup for the proving commands: load the enrollment record,
/// cross-check it against the registry, and derive the owner key.
fn proving_context(
    ctx: &Context,
    ledger: &Ledger,
    agent_id_text: &str,
) -> Result<(EnrollmentRecord, baid_core::crypto::Digest, String, KeyPair), Failure> {
    let record = ctx.load_record(agent_id_text)?;
    let (agent_addr, user_id, owner) = owner_for_agent(ctx, ledger, agent_id_text)?;
    let agent = ledger.agent(&agent_addr).expect("resolved above");
    if agent.attribute.profile_hash != profile_hash(&record.profile) {
        return Err(Failure::Input(
            "enrollment record does not reproduce the registered profile hash".to_string(),
        ));
    }
    if record.identifier.text() != agent_id_text {
        return Err(Failure::Input(
            "enrollment record belongs to a different agent".to_string(),
        ));
    }
    Ok((record, agent_addr, user_id, owner))
}

fn biometric_statement(
    ctx: &Context,
    user_id: &str,
    profile: &ProfileConfig,
) -> Result<BiometricStatement, Failure> {
    let template = profile
        .biometric_template
        .clone()
        .ok_or_else(|| Failure::Input("enrolled profile has no biometric template".to_string()))?;
    Ok(BiometricStatement {
        tau_num: ctx.tau.0,
        tau_den: ctx.tau.1,
        user_id: user_id.to_string(),
        v_capture: template.clone(),
        v_stored: template,
        bound_user_id: user_id.to_string(),
    })
}

fn rejected_proof<E: std::fmt::Display>(stage: &str, err: E) -> Failure {
    Failure::Rejected(json!({
        "proved": false,
        "stage": stage,
        "error": err.to_string(),
    }))
}

fn cmd_issue_vc(ctx: &Context, args: &IssueVcArgs) -> CmdResult {
    let ledger = ctx.load_ledger()?;
    let (record, _agent_addr, user_id, owner) = proving_context(ctx, &ledger, &args.agent_id)?;
    if args.valid_from >= args.valid_until {
        return Err(Failure::Input(format!(
            "validity window [{}, {}) is empty",
            args.valid_from, args.valid_until
        )));
    }

    let pipeline = ctx.pipeline();
    ctx.save_vk(&pipeline.vk())?;
    let stmt = biometric_statement(ctx, &user_id, &record.profile)?;
    let auth = pipeline
        .prove_phase1(&stmt)
        .map_err(|e| rejected_proof("biometric", e))?;

    let draft = CredentialDraft {
        agent_id: args.agent_id.clone(),
        user_id,
        task_id: args.task_id.clone(),
        task_definition: args.task_definition.clone(),
        security_level: args.security_level,
        scope: vec![ScopeEntry { action: args.action.clone(), limit: args.limit }],
        valid_from: args.valid_from,
        valid_until: args.valid_until,
    };
    let credential = issue_credential(&record.profile, &owner, draft, &auth, &pipeline.vk())
        .map_err(|e| rejected_proof("issuance", e))?;
    Ok(to_value(&credential))
}

fn cmd_prove_session(ctx: &Context, args: &ProveSessionArgs) -> CmdResult {
    if args.turns == 0 {
        return Err(Failure::Input("a session needs at least one turn".to_string()));
    }
    let ledger = ctx.load_ledger()?;
    let (record, agent_addr, user_id, owner) = proving_context(ctx, &ledger, &args.agent_id)?;

    let pipeline = ctx.pipeline();
    ctx.save_vk(&pipeline.vk())?;
    let root_ca = ctx.root_ca();
    let server = ctx.model_server();
    let certificate = issue_certificate(&root_ca, "api.llm.example", server.public());
    let template = record
        .profile
        .biometric_template
        .clone()
        .ok_or_else(|| Failure::Input("enrolled profile has no biometric template".to_string()))?;

    let mut party = DemoIdentity {
        instance: AgentInstance::new(record.profile.clone(), record.identifier.clone())
            .map_err(input)?,
        owner,
        user_id: user_id.clone(),
        agent_addr,
        capture: template.clone(),
        template,
        server,
        certificate,
        revocations: make_revocation_list(&ctx.owner_key(&user_id), BTreeSet::new()),
        tail: None,
        turns: 0,
    };

    // Phase 1: biometric authentication at the configured threshold.
    let stmt = biometric_statement(ctx, &user_id, &record.profile)?;
    let pi1 = pipeline
        .prove_phase1(&stmt)
        .map_err(|e| rejected_proof("biometric", e))?;

    // Phase 2: configuration integrity against the current registry state.
    let slot_key = agentid_slot(&args.agent_id);
    let bundle = ledger
        .get_storage_proof(agent_addr, slot_key, ledger.block_number())
        .map_err(input)?;
    let cfg_stmt = ConfigStatement {
        r_storage: bundle.storage_root,
        expected_profile_hash: profile_hash(&record.profile),
        slot_key,
        config_local: record.profile.clone(),
        storage_path: bundle.storage_path,
        account_path: bundle.account_path,
        state_root: bundle.state_root,
    };
    let pi2 = pipeline
        .prove_phase2(&cfg_stmt, &pi1)
        .map_err(|e| rejected_proof("configuration", e))?;
    party.tail = Some(pi2);
    party.instance.session = Some(SessionState::empty());

    // Turns: model exchange with provenance plus deterministic tool
    // re-execution, threaded through the session commitment chain.
    for t in 0..args.turns {
        let tls_seed = ctx.seed.wrapping_mul(1000).wrapping_add(t);
        run_turn(
            &pipeline,
            &root_ca,
            &mut party,
            args.query.as_bytes(),
            args.response.as_bytes(),
            &args.tool,
            args.tool_params.as_bytes(),
            tls_seed,
            None,
        )
        .map_err(|e| match e {
            RuntimeError::Prove(err) => rejected_proof("turn", err),
            other => input(other),
        })?;
    }

    let tail = party.tail.as_ref().expect("turns extend the chain");
    let attestation: FinalAttestation = pipeline
        .finalize_session(tail)
        .map_err(|e| rejected_proof("finalize", e))?;
    Ok(json!({
        "agent_id": args.agent_id,
        "turns": args.turns,
        "attestation": to_value(&attestation),
    }))
}

fn cmd_verify_attestation(ctx: &Context, args: &VerifyAttestationArgs) -> CmdResult {
    let ledger = ctx.load_ledger()?;
    let vk = ctx.load_vk()?;

    let bundle_bytes = fs::read(&args.bundle)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.bundle.display())))?;
    let bundle_value: Value = serde_json::from_slice(&bundle_bytes)
        .map_err(|e| Failure::Input(format!("bundle is not valid JSON: {e}")))?;
    let attestation_value = bundle_value.get("attestation").unwrap_or(&bundle_value);
    let attestation: FinalAttestation = serde_json::from_value(attestation_value.clone())
        .map_err(|e| Failure::Input(format!("bundle is not an attestation document: {e}")))?;

    let credential_bytes = fs::read(&args.credential)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.credential.display())))?;
    let credential: PermissionCredential = serde_json::from_slice(&credential_bytes)
        .map_err(|e| Failure::Input(format!("credential file is not valid JSON: {e}")))?;

    let revocations: RevocationList = match &args.revocations {
        Some(path) => {
            let bytes = fs::read(path)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| Failure::Input(format!("revocation list is not valid JSON: {e}")))?
        }
        None => make_revocation_list(
            &ctx.owner_key(&attestation.claims.user_id),
            BTreeSet::new(),
        ),
    };

    let view = VerifierView { ledger: &ledger, vk: &vk, now: args.now, revocations: &revocations };
    let request = ScopeRequest { action: args.action.clone(), amount: args.amount };
    let verdict = handle_verification_request(&view, &attestation, &credential, &request);

    let document = json!({
        "agent_id": attestation.claims.agent_id,
        "requested": {"action": args.action, "amount": args.amount, "now": args.now},
        "verdict": to_value(&verdict),
    });
    if verdict.accepted {
        Ok(document)
    } else {
        Err(Failure::Rejected(document))
    }
}

// ---- simulation commands -------------------------------------------------------

fn cmd_run_scenario(ctx: &Context, args: &RunScenarioArgs) -> CmdResult {
    let mut config = ScenarioConfig { seed: ctx.seed, ..ScenarioConfig::default() };
    if args.suite {
        let report = adversary_suite(&config).map_err(input)?;
        let document = to_value(&report);
        return if report.all_rejected { Ok(document) } else { Err(Failure::Rejected(document)) };
    }
    config.attack = args.attack.map(AttackKind::from);
    let report = run_scenario(&config).map_err(input)?;
    let expected = match config.attack {
        None => report.completed,
        Some(_) => !report.completed,
    };
    let document = to_value(&report);
    if expected {
        Ok(document)
    } else {
        Err(Failure::Rejected(document))
    }
}

fn cmd_gas_report(ctx: &Context) -> CmdResult {
    let ledger = ctx.load_ledger()?;
    // Row order matches the lifecycle cost table: registration, binding,
    // deregistration, update.
    let order = ["register_user", "add_agent", "remove_agent", "update_agent"];
    let rows: Vec<Value> = order
        .iter()
        .map(|op| {
            let receipts: Vec<Value> = ledger
                .gas_log()
                .iter()
                .filter(|r| r.op_name == *op)
                .map(to_value)
                .collect();
            json!({"op_name": op, "count": receipts.len(), "receipts": receipts})
        })
        .collect();
    Ok(json!({
        "block_number": ledger.block_number(),
        "rows": rows,
    }))
}
