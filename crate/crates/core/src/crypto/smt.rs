//! Sparse binary Merkle trie over 256-bit keys.
//!
//! The trie is logically complete with depth 256: every 32-byte key maps to a
//! leaf, and an absent key is indistinguishable from one holding the all-zero
//! value. Only non-zero leaves are stored; hashes of fully-empty subtrees are
//! precomputed once per process. A membership proof carries one sibling hash
//! per level, ordered leaf to root, so vacancy proofs (value = zero) and
//! occupancy proofs verify through the same path check.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{digest_parts, hexarr, Digest};

/// Number of levels between the root and a leaf.
pub const TRIE_DEPTH: usize = 256;

const LEAF_TAG: &[u8] = b"smt.leaf";
const NODE_TAG: &[u8] = b"smt.node";

/// Leaf hash: domain-tagged digest of the 32-byte value.
pub fn leaf_hash(value: &[u8; 32]) -> Digest {
    digest_parts(&[LEAF_TAG, value])
}

/// Inner-node hash: domain-tagged digest of the two child hashes.
pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    digest_parts(&[NODE_TAG, &left.0, &right.0])
}

/// `empties()[h]` is the hash of a fully-empty subtree of height `h`;
/// index 0 is the empty leaf, index [`TRIE_DEPTH`] the empty root.
fn empties() -> &'static [Digest; TRIE_DEPTH + 1] {
    static TABLE: OnceLock<[Digest; TRIE_DEPTH + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [Digest::ZERO; TRIE_DEPTH + 1];
        table[0] = leaf_hash(&[0u8; 32]);
        for h in 1..=TRIE_DEPTH {
            table[h] = node_hash(&table[h - 1], &table[h - 1]);
        }
        table
    })
}

/// Bit `i` of `key`, most-significant first: bit 0 is the high bit of byte 0.
fn key_bit(key: &[u8; 32], i: usize) -> u8 {
    (key[i / 8] >> (7 - (i % 8))) & 1
}

/// Membership path for one key: the value at the leaf (zero when vacant) and
/// one sibling hash per level, ordered leaf to root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriePath {
    #[serde(with = "hexarr")]
    pub key: [u8; 32],
    #[serde(with = "hexarr")]
    pub value: [u8; 32],
    pub siblings: Vec<Digest>,
}

impl TriePath {
    /// True when the path asserts the key is unset.
    pub fn is_vacant(&self) -> bool {
        self.value == [0u8; 32]
    }
}

/// Sparse Merkle trie storing only non-zero leaves. Serializes as a JSON
/// object mapping hex keys to hex values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseTrie {
    leaves: BTreeMap<[u8; 32], [u8; 32]>,
}

impl Serialize for SparseTrie {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = ser.serialize_map(Some(self.leaves.len()))?;
        for (k, v) in &self.leaves {
            map.serialize_entry(&hex::encode(k), &hex::encode(v))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SparseTrie {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(de)?;
        let mut leaves = BTreeMap::new();
        for (k, v) in raw {
            let key: [u8; 32] = hex::decode(&k)
                .map_err(serde::de::Error::custom)?
                .try_into()
                .map_err(|_| serde::de::Error::custom("trie key must be 32 hex-encoded bytes"))?;
            let value: [u8; 32] = hex::decode(&v)
                .map_err(serde::de::Error::custom)?
                .try_into()
                .map_err(|_| serde::de::Error::custom("trie value must be 32 hex-encoded bytes"))?;
            if value != [0u8; 32] {
                leaves.insert(key, value);
            }
        }
        Ok(SparseTrie { leaves })
    }
}

impl SparseTrie {
    pub fn new() -> Self {
        SparseTrie { leaves: BTreeMap::new() }
    }

    /// Set `key` to `value`. Writing the all-zero value clears the key, so
    /// the trie never distinguishes "deleted" from "never written".
    pub fn update(&mut self, key: [u8; 32], value: [u8; 32]) {
        if value == [0u8; 32] {
            self.leaves.remove(&key);
        } else {
            self.leaves.insert(key, value);
        }
    }

    /// Current value at `key`; zero when unset.
    pub fn get(&self, key: &[u8; 32]) -> [u8; 32] {
        self.leaves.get(key).copied().unwrap_or([0u8; 32])
    }

    pub fn contains(&self, key: &[u8; 32]) -> bool {
        self.leaves.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Root hash over the full 2^256-leaf keyspace.
    pub fn root(&self) -> Digest {
        let entries: Vec<(&[u8; 32], &[u8; 32])> = self.leaves.iter().collect();
        subtree_hash(&entries, 0)
    }

    /// Build the membership path for `key` against the current root. Works
    /// for vacant keys too, producing a zero-value path.
    pub fn prove(&self, key: &[u8; 32]) -> TriePath {
        let entries: Vec<(&[u8; 32], &[u8; 32])> = self.leaves.iter().collect();
        let mut siblings = Vec::with_capacity(TRIE_DEPTH);
        let mut span = &entries[..];
        for depth in 0..TRIE_DEPTH {
            let split = span.partition_point(|(k, _)| key_bit(k, depth) == 0);
            let (zeros, ones) = span.split_at(split);
            if key_bit(key, depth) == 0 {
                siblings.push(subtree_hash(ones, depth + 1));
                span = zeros;
            } else {
                siblings.push(subtree_hash(zeros, depth + 1));
                span = ones;
            }
        }
        siblings.reverse();
        TriePath { key: *key, value: self.get(key), siblings }
    }
}

/// Hash of the subtree at `depth` containing exactly `entries`, which must be
/// sorted by key and share their first `depth` key bits.
fn subtree_hash(entries: &[(&[u8; 32], &[u8; 32])], depth: usize) -> Digest {
    if entries.is_empty() {
        return empties()[TRIE_DEPTH - depth];
    }
    if depth == TRIE_DEPTH {
        debug_assert_eq!(entries.len(), 1, "distinct keys cannot share all 256 bits");
        return leaf_hash(entries[0].1);
    }
    let split = entries.partition_point(|(k, _)| key_bit(k, depth) == 0);
    let left = subtree_hash(&entries[..split], depth + 1);
    let right = subtree_hash(&entries[split..], depth + 1);
    node_hash(&left, &right)
}

/// Check `path` against `root`: recomputes the leaf-to-root fold and compares.
/// Structural defects (wrong sibling count) are simply `false`.
pub fn verify_path(root: &Digest, path: &TriePath) -> bool {
    if path.siblings.len() != TRIE_DEPTH {
        return false;
    }
    let mut cur = leaf_hash(&path.value);
    for (level, sibling) in path.siblings.iter().enumerate() {
        let bit = key_bit(&path.key, TRIE_DEPTH - 1 - level);
        cur = if bit == 0 {
            node_hash(&cur, sibling)
        } else {
            node_hash(sibling, &cur)
        };
    }
    cur == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest as _, Sha256};

    /// Length-prefixed hash computed with raw sha2 calls, independent of the
    /// encoding helpers under test.
    fn raw_tagged(parts: &[&[u8]]) -> [u8; 32] {
        let mut buf = Vec::new();
        for p in parts {
            buf.extend_from_slice(&(p.len() as u32).to_be_bytes());
            buf.extend_from_slice(p);
        }
        let mut h = Sha256::new();
        h.update(&buf);
        h.finalize().into()
    }

    #[test]
    fn empty_root_matches_manual_fold() {
        let mut cur = raw_tagged(&[b"smt.leaf", &[0u8; 32]]);
        for _ in 0..TRIE_DEPTH {
            cur = raw_tagged(&[b"smt.node", &cur, &cur]);
        }
        assert_eq!(SparseTrie::new().root(), Digest(cur));
    }

    #[test]
    fn single_leftmost_leaf_matches_manual_fold() {
        // Key 0x00..00 descends left at every level, so each sibling is the
        // empty subtree of matching height.
        let key = [0u8; 32];
        let value = [0xAB; 32];
        let mut trie = SparseTrie::new();
        trie.update(key, value);

        let mut cur = raw_tagged(&[b"smt.leaf", &value]);
        let mut empty = raw_tagged(&[b"smt.leaf", &[0u8; 32]]);
        for _ in 0..TRIE_DEPTH {
            cur = raw_tagged(&[b"smt.node", &cur, &empty]);
            empty = raw_tagged(&[b"smt.node", &empty, &empty]);
        }
        assert_eq!(trie.root(), Digest(cur));
    }

    #[test]
    fn get_returns_zero_for_absent() {
        let trie = SparseTrie::new();
        assert_eq!(trie.get(&[5u8; 32]), [0u8; 32]);
    }

    #[test]
    fn zero_write_equals_deletion() {
        let empty_root = SparseTrie::new().root();
        let mut trie = SparseTrie::new();
        trie.update([5u8; 32], [1u8; 32]);
        assert_ne!(trie.root(), empty_root);
        trie.update([5u8; 32], [0u8; 32]);
        assert_eq!(trie.root(), empty_root);
        assert!(trie.is_empty());
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let (a, b, c) = ([1u8; 32], [2u8; 32], [0xF0; 32]);
        let mut t1 = SparseTrie::new();
        t1.update(a, [10u8; 32]);
        t1.update(b, [20u8; 32]);
        t1.update(c, [30u8; 32]);
        let mut t2 = SparseTrie::new();
        t2.update(c, [30u8; 32]);
        t2.update(a, [10u8; 32]);
        t2.update(b, [20u8; 32]);
        assert_eq!(t1.root(), t2.root());
    }

    #[test]
    fn overwrite_reflects_latest_value() {
        let mut t1 = SparseTrie::new();
        t1.update([9u8; 32], [1u8; 32]);
        t1.update([9u8; 32], [2u8; 32]);
        let mut t2 = SparseTrie::new();
        t2.update([9u8; 32], [2u8; 32]);
        assert_eq!(t1.root(), t2.root());
        assert_eq!(t1.get(&[9u8; 32]), [2u8; 32]);
    }

    #[test]
    fn proof_round_trip_occupied_and_vacant() {
        let mut trie = SparseTrie::new();
        trie.update([1u8; 32], [10u8; 32]);
        trie.update([0x80; 32], [20u8; 32]);
        let root = trie.root();

        let occupied = trie.prove(&[1u8; 32]);
        assert_eq!(occupied.value, [10u8; 32]);
        assert!(verify_path(&root, &occupied));

        let vacant = trie.prove(&[7u8; 32]);
        assert!(vacant.is_vacant());
        assert!(verify_path(&root, &vacant));
    }

    #[test]
    fn tampered_value_fails_verification() {
        let mut trie = SparseTrie::new();
        trie.update([1u8; 32], [10u8; 32]);
        let root = trie.root();
        let mut path = trie.prove(&[1u8; 32]);
        path.value = [11u8; 32];
        assert!(!verify_path(&root, &path));
    }

    #[test]
    fn tampered_sibling_fails_verification() {
        let mut trie = SparseTrie::new();
        trie.update([1u8; 32], [10u8; 32]);
        trie.update([2u8; 32], [20u8; 32]);
        let root = trie.root();
        let mut path = trie.prove(&[1u8; 32]);
        path.siblings[0].0[0] ^= 1;
        assert!(!verify_path(&root, &path));
    }

    #[test]
    fn short_path_rejected() {
        let mut trie = SparseTrie::new();
        trie.update([1u8; 32], [10u8; 32]);
        let root = trie.root();
        let mut path = trie.prove(&[1u8; 32]);
        path.siblings.pop();
        assert!(!verify_path(&root, &path));
    }

    #[test]
    fn stale_root_rejects_current_proof() {
        let mut trie = SparseTrie::new();
        trie.update([1u8; 32], [10u8; 32]);
        let old_root = trie.root();
        trie.update([2u8; 32], [20u8; 32]);
        let path = trie.prove(&[1u8; 32]);
        assert!(verify_path(&trie.root(), &path));
        assert!(!verify_path(&old_root, &path));
    }
}
