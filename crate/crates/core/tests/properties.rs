//! Randomized invariant suite. Each module's contract is exercised over
//! generated inputs with proptest; deterministic companion loops cover the
//! exact-count tamper checks (256 signature and AEAD bit flips, 500 envelope
//! field mutations, every bit of one Merkle path).

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::Ratio;
use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use baid_core::credential::{
    issue_credential, make_revocation_list, validate_credential, CredentialDraft,
    PermissionCredential, RevocationList, ScopeEntry, ScopeRequest,
};
use baid_core::crypto::smt::{verify_path, SparseTrie};
use baid_core::crypto::{
    aead_open, aead_seal, canonical_decode, canonical_encode, digest, digest_parts, verify_sig,
    Digest, KeyPair, PublicKey, AEAD_KEY_LEN, AEAD_NONCE_LEN,
};
use baid_core::engine::{
    embed_public_inputs, setup, verify_chain_tail, verify_envelope, EchoGuest, ProofEngine,
    ProofEnvelope, ProgramCommitment, PublicParams, VerifyingKey,
};
use baid_core::identity::{
    bind_owner, make_agent_id, profile_hash, EmbeddingVector, ProfileConfig, EMBEDDING_DIM,
};
use baid_core::ledger::{
    add_agent_call_bytes, agent_contract_address, agentid_slot, issue_kyc,
    remove_agent_call_bytes, update_agent_call_bytes, verify_proof_bundle, AgentAttribute,
    KycPredicates, Ledger, LedgerError, OperationalStatus,
};
use baid_core::pipeline::guests::cosine_at_least;
use baid_core::pipeline::{BiometricStatement, Pipeline, SessionState};

// ---- shared strategies -----------------------------------------------------

fn parts_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 0..6)
}

fn bytes32() -> impl Strategy<Value = [u8; 32]> {
    prop::array::uniform32(any::<u8>())
}

fn embedding_strategy() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-2000i64..=2000, EMBEDDING_DIM)
}

fn flip_bit(bytes: &mut [u8], bit: usize) {
    bytes[(bit / 8) % bytes.len().max(1)] ^= 1 << (bit % 8);
}

// ---- canonical encoding ----------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Encoding round-trips exactly, and distinct part lists can never
    /// encode (or digest) to the same bytes, including lists that differ
    /// only in where one part ends and the next begins.
    #[test]
    fn canonical_encoding_round_trips_and_separates(
        a in parts_strategy(),
        b in parts_strategy(),
    ) {
        let a_refs: Vec<&[u8]> = a.iter().map(Vec::as_slice).collect();
        let b_refs: Vec<&[u8]> = b.iter().map(Vec::as_slice).collect();
        let ea = canonical_encode(&a_refs).unwrap();
        let eb = canonical_encode(&b_refs).unwrap();
        prop_assert_eq!(canonical_decode(&ea).unwrap(), a.clone());
        prop_assert_eq!(canonical_decode(&eb).unwrap(), b.clone());
        if a == b {
            prop_assert_eq!(&ea, &eb);
        } else {
            prop_assert_ne!(&ea, &eb);
            prop_assert_ne!(digest(&ea), digest(&eb));
            prop_assert_ne!(digest_parts(&a_refs), digest_parts(&b_refs));
        }
    }
}

// ---- sparse Merkle trie ----------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For tries of up to 64 random keys, a genuine inclusion path
    /// verifies, and flipping any randomly chosen bit of the path's key,
    /// value, one sibling, or the root makes verification fail.
    #[test]
    fn trie_paths_fail_under_random_bit_flips(
        entries in prop::collection::vec((bytes32(), bytes32()), 1..=64),
        target in any::<prop::sample::Index>(),
        site in 0usize..4,
        bit in any::<usize>(),
    ) {
        let mut trie = SparseTrie::new();
        for (k, v) in &entries {
            trie.update(*k, *v);
        }
        let root = trie.root();
        let key = entries[target.index(entries.len())].0;
        let path = trie.prove(&key);
        prop_assert!(verify_path(&root, &path));

        let mut mutated = path.clone();
        let mut mutated_root = root;
        match site {
            0 => flip_bit(&mut mutated.key, bit),
            1 => flip_bit(&mut mutated.value, bit),
            2 => {
                let idx = (bit / 256) % mutated.siblings.len();
                flip_bit(&mut mutated.siblings[idx].0, bit);
            }
            _ => flip_bit(&mut mutated_root.0, bit),
        }
        prop_assert!(
            !verify_path(&mutated_root, &mutated),
            "a single flipped bit went unnoticed (site {})",
            site
        );
    }
}

/// Exhaustive form of the same statement: every single bit in one complete
/// inclusion path (key, value, and all 256 siblings) is load-bearing.
#[test]
fn every_bit_of_a_trie_path_is_load_bearing() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut trie = SparseTrie::new();
    let mut keys = Vec::new();
    for _ in 0..64 {
        let mut k = [0u8; 32];
        let mut v = [0u8; 32];
        rng.fill_bytes(&mut k);
        rng.fill_bytes(&mut v);
        trie.update(k, v);
        keys.push(k);
    }
    let root = trie.root();
    let path = trie.prove(&keys[20]);
    assert!(verify_path(&root, &path));

    let mut rejected = 0u64;
    for bit in 0..256 {
        let mut m = path.clone();
        flip_bit(&mut m.key, bit);
        assert!(!verify_path(&root, &m), "key bit {bit} not covered");
        rejected += 1;
    }
    for bit in 0..256 {
        let mut m = path.clone();
        flip_bit(&mut m.value, bit);
        assert!(!verify_path(&root, &m), "value bit {bit} not covered");
        rejected += 1;
    }
    for (i, _) in path.siblings.iter().enumerate() {
        for bit in 0..256 {
            let mut m = path.clone();
            flip_bit(&mut m.siblings[i].0, bit);
            assert!(!verify_path(&root, &m), "sibling {i} bit {bit} not covered");
            rejected += 1;
        }
    }
    for bit in 0..256 {
        let mut r = root;
        flip_bit(&mut r.0, bit);
        assert!(!verify_path(&r, &path), "root bit {bit} not covered");
        rejected += 1;
    }
    assert_eq!(rejected, 256 + 256 + 256 * 256 + 256);
}

// ---- signatures and AEAD ---------------------------------------------------

/// 256 random single-bit flips across signature, message, and public key;
/// every one must break verification while the untouched triple passes.
#[test]
fn signatures_reject_single_bit_flips() {
    let mut rng = ChaCha20Rng::seed_from_u64(29);
    for i in 0..256u64 {
        let keypair = KeyPair::derive(&[b"properties.sig", &i.to_be_bytes()]);
        let mut message = vec![0u8; 1 + (rng.next_u64() % 64) as usize];
        rng.fill_bytes(&mut message);
        let sig = keypair.sign(&message);
        assert!(verify_sig(&keypair.public(), &message, &sig));

        let bit = rng.next_u64() as usize;
        match i % 3 {
            0 => {
                let mut s = sig;
                flip_bit(&mut s.0, bit);
                assert!(!verify_sig(&keypair.public(), &message, &s), "flip {i} in signature");
            }
            1 => {
                let mut m = message.clone();
                flip_bit(&mut m, bit);
                assert!(!verify_sig(&keypair.public(), &m, &sig), "flip {i} in message");
            }
            _ => {
                let mut p = keypair.public();
                flip_bit(&mut p.0, bit);
                assert!(!verify_sig(&p, &message, &sig), "flip {i} in public key");
            }
        }
    }
}

/// 256 random single-bit flips across ciphertext, tag, key, nonce, and
/// associated data; every one must make the AEAD open fail.
#[test]
fn aead_rejects_single_bit_flips() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    for i in 0..256u64 {
        let mut key = [0u8; AEAD_KEY_LEN];
        let mut nonce = [0u8; AEAD_NONCE_LEN];
        let mut plaintext = vec![0u8; 1 + (rng.next_u64() % 48) as usize];
        let mut aad = vec![0u8; 1 + (rng.next_u64() % 32) as usize];
        rng.fill_bytes(&mut key);
        rng.fill_bytes(&mut nonce);
        rng.fill_bytes(&mut plaintext);
        rng.fill_bytes(&mut aad);
        let (ciphertext, tag) = aead_seal(&key, &nonce, &plaintext, &aad);
        assert_eq!(aead_open(&key, &nonce, &ciphertext, &tag, &aad).unwrap(), plaintext);

        let bit = rng.next_u64() as usize;
        let open = |c: &[u8], t: &[u8; 16], k: &[u8; AEAD_KEY_LEN], n: &[u8; AEAD_NONCE_LEN], a: &[u8]| {
            aead_open(k, n, c, t, a).is_err()
        };
        let rejected = match i % 5 {
            0 => {
                let mut c = ciphertext.clone();
                flip_bit(&mut c, bit);
                open(&c, &tag, &key, &nonce, &aad)
            }
            1 => {
                let mut t = tag;
                flip_bit(&mut t, bit);
                open(&ciphertext, &t, &key, &nonce, &aad)
            }
            2 => {
                let mut k = key;
                flip_bit(&mut k, bit);
                open(&ciphertext, &tag, &k, &nonce, &aad)
            }
            3 => {
                let mut n = nonce;
                flip_bit(&mut n, bit);
                open(&ciphertext, &tag, &key, &n, &aad)
            }
            _ => {
                let mut a = aad.clone();
                flip_bit(&mut a, bit);
                open(&ciphertext, &tag, &key, &nonce, &a)
            }
        };
        assert!(rejected, "flip {i} went unnoticed");
    }
}

// ---- proof envelopes -------------------------------------------------------

fn echo_chain(seed: u64, length: usize) -> (PublicParams, VerifyingKey, ProofEngine, Vec<ProofEnvelope>) {
    let (pp, vk) = setup(1 << 16, seed);
    let mut engine = ProofEngine::new();
    engine.register(Arc::new(EchoGuest)).unwrap();
    let compiled = engine.compile(&pp, "echo").unwrap();
    let mut chain: Vec<ProofEnvelope> = Vec::new();
    for i in 0..length {
        let payload = format!("payload-{seed}-{i}");
        let env = engine
            .prove(&pp, &compiled, payload.as_bytes(), b"", chain.last())
            .unwrap();
        chain.push(env);
    }
    (pp, vk, engine, chain)
}

/// Rebuild a chain in the given link order, carrying each link's original
/// receipt: the forgery a reordering adversary can actually produce.
fn reassemble(chain: &[ProofEnvelope], order: &[usize]) -> ProofEnvelope {
    let mut prev: Option<ProofEnvelope> = None;
    for &i in order {
        let original = &chain[i];
        let app_inputs = original.app_inputs().unwrap();
        let env = ProofEnvelope {
            program: original.program,
            public_inputs: embed_public_inputs(prev.as_ref(), &app_inputs),
            public_output: original.public_output.clone(),
            prior_digest: prev.as_ref().map(ProofEnvelope::digest),
            receipt: original.receipt,
        };
        prev = Some(env);
    }
    prev.unwrap()
}

/// 500 random single-field mutations over the links of an honest chain:
/// program commitment, public inputs, output, prior digest, or receipt.
/// Every mutated envelope must fail verification.
#[test]
fn envelopes_reject_any_field_mutation() {
    let (_pp, vk, _engine, chain) = echo_chain(31, 3);
    for env in &chain {
        assert!(verify_envelope(&vk, env));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let mut rejected = 0u32;
    for k in 0..500u32 {
        let mut env = chain[k as usize % chain.len()].clone();
        let bit = rng.next_u64() as usize;
        match k % 5 {
            0 => flip_bit(&mut env.program.0 .0, bit),
            1 => flip_bit(&mut env.public_inputs, bit),
            2 => flip_bit(&mut env.public_output, bit),
            3 => {
                env.prior_digest = match env.prior_digest {
                    Some(mut d) => {
                        flip_bit(&mut d.0, bit);
                        Some(d)
                    }
                    None => Some(digest(b"forged prior")),
                };
            }
            _ => flip_bit(&mut env.receipt.0, bit),
        }
        assert!(!verify_envelope(&vk, &env), "mutation {k} went unnoticed");
        rejected += 1;
    }
    assert_eq!(rejected, 500);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// Honest chains of any tried length verify completely; swapping any
    /// two links (keeping the original receipts) is always detected.
    #[test]
    fn honest_chains_verify_and_transpositions_fail(
        seed in any::<u64>(),
        len in 2usize..=5,
        pick in any::<prop::sample::Index>(),
    ) {
        let (_pp, vk, _engine, chain) = echo_chain(seed, len);
        let report = verify_chain_tail(&vk, chain.last().unwrap(), &[]);
        prop_assert!(report.ok);
        prop_assert_eq!(report.length, len);
        prop_assert_eq!(report.first_failure_depth, None);

        // Enumerate the transpositions and pick one.
        let mut swaps = Vec::new();
        for i in 0..len {
            for j in (i + 1)..len {
                swaps.push((i, j));
            }
        }
        let (i, j) = swaps[pick.index(swaps.len())];
        let mut order: Vec<usize> = (0..len).collect();
        order.swap(i, j);
        let forged = reassemble(&chain, &order);
        let report = verify_chain_tail(&vk, &forged, &[]);
        prop_assert!(!report.ok, "swap ({}, {}) went unnoticed", i, j);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Extending over a corrupted prior is refused at prove time, while the
    /// same extension over the honest prior succeeds.
    #[test]
    fn proving_halts_on_corrupted_priors(
        seed in any::<u64>(),
        len in 1usize..=4,
        bit in any::<usize>(),
    ) {
        let (pp, _vk, engine, chain) = echo_chain(seed, len);
        let compiled = engine.compile(&pp, "echo").unwrap();
        prop_assert!(engine
            .prove(&pp, &compiled, b"extension", b"", chain.last())
            .is_ok());

        let mut bad = chain.last().unwrap().clone();
        flip_bit(&mut bad.receipt.0, bit);
        prop_assert!(engine
            .prove(&pp, &compiled, b"extension", b"", Some(&bad))
            .is_err());
    }
}

// ---- agent identity --------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The identity digest covers all five inputs: perturbing any one of
    /// them produces a different digest, and the textual form parses back
    /// to the same digest.
    #[test]
    fn agent_ids_bind_every_input(
        name in "[a-z][a-z0-9-]{0,15}",
        prog_seed in bytes32(),
        user_id in "org:[a-z]{2,8}:cn:[a-z]{2,8}",
        params in prop::collection::btree_map("[a-z]{1,8}", "[a-z0-9]{0,8}", 0..3),
        others in prop::collection::btree_map("[a-z]{1,8}", "[a-z0-9]{0,8}", 0..3),
        perturb in 0usize..5,
    ) {
        let c_p = ProgramCommitment(Digest(prog_seed));
        let cfg = ProfileConfig {
            biometric_template: None,
            human_identifier: user_id.clone(),
            operational_params: params,
            policy_rules: vec!["rule".to_string()],
        };
        let base = make_agent_id(&name, c_p, &cfg, &user_id, others.clone()).unwrap();
        prop_assert_eq!(base.recompute_digest(), base.id_digest);
        prop_assert_eq!(
            baid_core::identity::AgentIdentifier::digest_from_text(&base.text()).unwrap(),
            base.id_digest
        );

        let variant = match perturb {
            0 => make_agent_id(&format!("{name}x"), c_p, &cfg, &user_id, others).unwrap(),
            1 => {
                let mut d = prog_seed;
                d[0] ^= 1;
                make_agent_id(&name, ProgramCommitment(Digest(d)), &cfg, &user_id, others).unwrap()
            }
            2 => {
                let mut cfg2 = cfg.clone();
                // Uppercase key: generated parameter names are lowercase, so
                // this insertion always changes the profile.
                cfg2.operational_params.insert("ZZ".to_string(), "1".to_string());
                make_agent_id(&name, c_p, &cfg2, &user_id, others).unwrap()
            }
            3 => make_agent_id(&name, c_p, &cfg, &format!("{user_id}x"), others).unwrap(),
            _ => {
                let mut o2 = others.clone();
                o2.insert("ZZ".to_string(), "1".to_string());
                make_agent_id(&name, c_p, &cfg, &user_id, o2).unwrap()
            }
        };
        prop_assert_ne!(variant.id_digest, base.id_digest, "input {} not bound", perturb);
    }

    /// Serializing a profile to JSON and parsing it back preserves both the
    /// structure and its hash, template included.
    #[test]
    fn profile_hash_survives_json_round_trip(
        human in "[a-z:]{0,24}",
        params in prop::collection::btree_map("[a-z]{1,8}", "[ -~]{0,12}", 0..4),
        rules in prop::collection::vec("[ -~]{0,16}", 0..4),
        template in prop::option::of(embedding_strategy()),
    ) {
        let cfg = ProfileConfig {
            biometric_template: template.map(|t| EmbeddingVector::new(t).unwrap()),
            human_identifier: human,
            operational_params: params,
            policy_rules: rules,
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let parsed: ProfileConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(profile_hash(&parsed), profile_hash(&cfg));
        prop_assert_eq!(parsed.canonical_bytes(), cfg.canonical_bytes());
    }
}

// ---- session state ---------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// A session trace round-trips through its canonical bytes, keeps the
    /// turn index equal to the history length, and every appended turn
    /// moves the commitment.
    #[test]
    fn session_states_round_trip_and_commit_canonically(
        turns in prop::collection::vec(
            (
                prop::collection::vec(any::<u8>(), 0..24),
                prop::collection::vec(any::<u8>(), 0..24),
                prop::collection::vec(any::<u8>(), 0..24),
            ),
            0..6,
        ),
    ) {
        let mut state = SessionState::empty();
        let mut commitments = vec![state.commitment()];
        for (q, a, o) in &turns {
            state = state.extend(q.clone(), a.clone(), o.clone());
            commitments.push(state.commitment());
        }
        prop_assert_eq!(state.turn_index, turns.len() as u64);
        prop_assert_eq!(state.history.len(), turns.len());

        let bytes = state.canonical_bytes();
        let parsed = SessionState::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&parsed, &state);
        prop_assert_eq!(digest(&bytes), state.commitment());

        // The commitment chain never repeats: each turn folds in.
        let distinct: BTreeSet<Digest> = commitments.iter().copied().collect();
        prop_assert_eq!(distinct.len(), commitments.len());
    }
}

// ---- registry lifecycle ----------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum LifecycleOp {
    Add,
    Update,
    Remove,
}

fn lifecycle_ops() -> impl Strategy<Value = Vec<(usize, LifecycleOp)>> {
    prop::collection::vec(
        (0usize..3, prop_oneof![
            Just(LifecycleOp::Add),
            Just(LifecycleOp::Update),
            Just(LifecycleOp::Remove),
        ]),
        1..12,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random operation sequences against the registry match a reference
    /// lifecycle model: re-adding a bound identifier fails, operations on
    /// deregistered agents fail terminally, successes advance exactly one
    /// block and move the state root, failures change nothing, and final
    /// storage proofs bind to the final root only.
    #[test]
    fn registry_lifecycle_matches_model(ops in lifecycle_ops()) {
        let issuer = KeyPair::derive(&[b"properties.kyc"]);
        let owner = KeyPair::derive(&[b"properties.owner"]);
        let user_id = "org:props:cn:owner";
        let mut ledger = Ledger::new(issuer.public());
        let kyc = issue_kyc(&issuer, &owner.public(), KycPredicates {
            is_legal_entity: true,
            not_sanctioned: true,
        });
        let (user_addr, _) = ledger.register_user(&kyc, owner.public(), user_id).unwrap();

        let cfg = ProfileConfig {
            human_identifier: user_id.to_string(),
            ..ProfileConfig::default()
        };
        let agents: Vec<_> = (0..3)
            .map(|i: u64| {
                let c_p = ProgramCommitment(digest_parts(&[b"properties.prog", &i.to_be_bytes()]));
                make_agent_id(&format!("agent-{i}"), c_p, &cfg, user_id, BTreeMap::new()).unwrap()
            })
            .collect();

        // None = never added; Some(status) mirrors the contract's state.
        let mut model: [Option<OperationalStatus>; 3] = [None, None, None];
        let mut roots = vec![ledger.state_root()];

        for (step, &(slot, op)) in ops.iter().enumerate() {
            let agent = &agents[slot];
            let addr = agent_contract_address(&agent.text());
            let block_before = ledger.block_number();
            let root_before = ledger.state_root();

            let outcome: Result<(), LedgerError> = match op {
                LifecycleOp::Add => {
                    let attr = AgentAttribute {
                        capabilities: vec!["cap".to_string()],
                        roles: vec!["role".to_string()],
                    };
                    let url = format!("facts/{slot}.json");
                    let call = add_agent_call_bytes(&user_addr, agent, &attr, &url);
                    ledger
                        .add_agent(&owner.sign(&call), user_addr, agent, attr, &url)
                        .map(|_| ())
                }
                LifecycleOp::Update => {
                    let attr = AgentAttribute {
                        capabilities: vec![format!("cap-{step}")],
                        roles: vec![format!("role-{step}")],
                    };
                    let url = format!("facts/{slot}-{step}.json");
                    let call = update_agent_call_bytes(&addr, &attr, &url);
                    ledger.update_agent(&owner.sign(&call), addr, attr, &url).map(|_| ())
                }
                LifecycleOp::Remove => {
                    let call = remove_agent_call_bytes(&addr);
                    ledger.remove_agent(&owner.sign(&call), addr).map(|_| ())
                }
            };

            let expected_ok = match (op, model[slot]) {
                (LifecycleOp::Add, None) => Ok(()),
                (LifecycleOp::Add, Some(_)) => Err("bound"),
                (_, None) => Err("missing"),
                (_, Some(OperationalStatus::Deregistered)) => Err("terminal"),
                (LifecycleOp::Update, Some(_)) => Ok(()),
                (LifecycleOp::Remove, Some(_)) => Ok(()),
            };

            match expected_ok {
                Ok(()) => {
                    prop_assert!(outcome.is_ok(), "step {}: expected success, got {:?}", step, outcome);
                    model[slot] = match op {
                        LifecycleOp::Add => Some(OperationalStatus::Running),
                        LifecycleOp::Update => model[slot],
                        LifecycleOp::Remove => Some(OperationalStatus::Deregistered),
                    };
                    prop_assert_eq!(ledger.block_number(), block_before + 1);
                    prop_assert_ne!(ledger.state_root(), root_before);
                    roots.push(ledger.state_root());
                }
                Err(kind) => {
                    match (kind, &outcome) {
                        ("bound", Err(LedgerError::AlreadyBound(_)))
                        | ("missing", Err(LedgerError::NotFound))
                        | ("terminal", Err(LedgerError::TerminalState)) => {}
                        _ => prop_assert!(
                            false,
                            "step {}: expected {} error, got {:?}",
                            step,
                            kind,
                            outcome
                        ),
                    }
                    prop_assert_eq!(ledger.block_number(), block_before);
                    prop_assert_eq!(ledger.state_root(), root_before);
                }
            }
        }

        // Final contract status matches the model, and inclusion proofs
        // bind to the final state root and to no earlier one.
        let final_root = ledger.state_root();
        for (slot, status) in model.iter().enumerate() {
            let agent = &agents[slot];
            let addr = agent_contract_address(&agent.text());
            match status {
                None => prop_assert!(ledger.agent(&addr).is_none()),
                Some(expected) => {
                    prop_assert_eq!(ledger.agent(&addr).unwrap().operational_status, *expected);
                    let bundle = ledger
                        .get_storage_proof(addr, agentid_slot(&agent.text()), ledger.block_number())
                        .unwrap();
                    prop_assert_eq!(bundle.value, agent.id_digest.0);
                    prop_assert_eq!(bundle.state_root, final_root);
                    prop_assert!(verify_proof_bundle(&bundle));
                    for earlier in roots.iter().filter(|r| **r != final_root) {
                        let mut stale = bundle.clone();
                        stale.state_root = *earlier;
                        prop_assert!(
                            !verify_proof_bundle(&stale),
                            "proof accepted against a superseded root"
                        );
                    }
                }
            }
        }

        // The binding list mirrors exactly the model's live agents.
        let live: BTreeSet<String> = model
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(OperationalStatus::Running))
            .map(|(slot, _)| agents[slot].text())
            .collect();
        let listed: BTreeSet<String> = ledger
            .user(&user_addr)
            .unwrap()
            .agent_binding_list
            .iter()
            .cloned()
            .collect();
        prop_assert_eq!(listed, live);
    }
}

// ---- permission credentials --------------------------------------------------

struct CredentialFixture {
    credential: PermissionCredential,
    owner_pubkey: PublicKey,
    clean: RevocationList,
    revoking: RevocationList,
}

fn credential_fixture() -> &'static CredentialFixture {
    static FIXTURE: OnceLock<CredentialFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let owner = KeyPair::derive(&[b"properties.credential.owner"]);
        let user_id = "org:props:cn:owner";
        let template = EmbeddingVector::new(
            (0..EMBEDDING_DIM as i64).map(|i| (i % 19) * 50 - 400).collect(),
        )
        .unwrap();
        let cfg = bind_owner(&ProfileConfig::default(), user_id, template.clone(), false).unwrap();
        let pipeline = Pipeline::new(1 << 22, 11);
        let stmt = BiometricStatement {
            tau_num: 3,
            tau_den: 4,
            user_id: user_id.to_string(),
            v_capture: template.clone(),
            v_stored: template,
            bound_user_id: user_id.to_string(),
        };
        let auth = pipeline.prove_phase1(&stmt).unwrap();
        let draft = CredentialDraft {
            agent_id: "agentid:0000000000000000000000000000000000000000000000000000000000000000"
                .to_string(),
            user_id: user_id.to_string(),
            task_id: "task-props".to_string(),
            task_definition: "bounded property probe".to_string(),
            security_level: 1,
            scope: vec![ScopeEntry { action: "payment".to_string(), limit: 1000 }],
            valid_from: 100,
            valid_until: 200,
        };
        let credential =
            issue_credential(&cfg, &owner, draft, &auth, &pipeline.vk()).unwrap();
        let clean = make_revocation_list(&owner, BTreeSet::new());
        let revoking = make_revocation_list(
            &owner,
            [credential.revocation_id].into_iter().collect(),
        );
        CredentialFixture { credential, owner_pubkey: owner.public(), clean, revoking }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Against a fixed credential (payment limit 1000, window [100, 200)):
    /// each validation step reflects exactly its own facts regardless of the
    /// others, the verdict is their conjunction, and scope acceptance is
    /// monotone downward in the amount.
    #[test]
    fn credential_checks_stay_independent_and_scope_is_monotone(
        now in 0u64..300,
        amount in 0u64..3000,
        revoked in any::<bool>(),
        wrong_action in any::<bool>(),
    ) {
        let fx = credential_fixture();
        let action = if wrong_action { "transfer" } else { "payment" };
        let request = ScopeRequest { action: action.to_string(), amount };
        let revocations = if revoked { &fx.revoking } else { &fx.clean };
        let report =
            validate_credential(&fx.credential, &fx.owner_pubkey, now, &request, revocations);

        prop_assert!(report.signature_ok);
        prop_assert_eq!(report.window_ok, (100..200).contains(&now));
        prop_assert_eq!(report.scope_ok, !wrong_action && amount <= 1000);
        prop_assert_eq!(report.revocation_ok, !revoked);
        prop_assert_eq!(
            report.verdict,
            report.signature_ok && report.window_ok && report.scope_ok && report.revocation_ok
        );

        // Downward monotonicity: anything cheaper than an accepted amount
        // is also accepted, all other facts held fixed.
        if report.scope_ok {
            let cheaper = ScopeRequest { action: action.to_string(), amount: amount / 2 };
            let second =
                validate_credential(&fx.credential, &fx.owner_pubkey, now, &cheaper, revocations);
            prop_assert!(second.scope_ok);
        }
    }
}

// ---- biometric threshold ---------------------------------------------------

/// Exact rational reference: cosine(a, b) >= num/den with no rounding,
/// requiring a strictly positive dot product.
fn rational_oracle(a: &[i64], b: &[i64], num: u64, den: u64) -> bool {
    let dot: BigInt = a.iter().zip(b).map(|(&x, &y)| BigInt::from(x) * BigInt::from(y)).sum();
    if dot <= BigInt::from(0) {
        return false;
    }
    let na: BigInt = a.iter().map(|&x| BigInt::from(x) * BigInt::from(x)).sum();
    let nb: BigInt = b.iter().map(|&y| BigInt::from(y) * BigInt::from(y)).sum();
    let lhs = Ratio::new(&dot * &dot, na * nb);
    let rhs = Ratio::new(BigInt::from(num) * BigInt::from(num), BigInt::from(den) * BigInt::from(den));
    lhs >= rhs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// The integer-only threshold decision agrees with exact rational
    /// arithmetic on random vectors and thresholds.
    #[test]
    fn threshold_decision_matches_exact_rational_oracle(
        a in embedding_strategy(),
        b in embedding_strategy(),
        den in 1u64..=1000,
        num_seed in any::<u64>(),
    ) {
        prop_assume!(a.iter().any(|&c| c != 0));
        prop_assume!(b.iter().any(|&c| c != 0));
        let num = 1 + num_seed % den;
        let va = EmbeddingVector::new(a.clone()).unwrap();
        let vb = EmbeddingVector::new(b.clone()).unwrap();
        let got = cosine_at_least(&va, &vb, num, den).unwrap();
        let expected = rational_oracle(&a, &b, num, den);
        prop_assert_eq!(got, expected, "tau {}/{}", num, den);
    }
}
