//! EVM-inspired gas metering for the registry operations.
//!
//! Storage pricing follows the EVM schedule: a store that turns a zero slot
//! non-zero costs 20,000 gas, and any store touching an already-populated
//! slot costs 5,000 (clearing refunds are out of scope). The remaining
//! constants (transaction base, KYC-verification surcharge, contract
//! instantiation, signature check, and event logging) were fitted by
//! solving the four registry operations' cost equations against reference
//! measurements from an EVM deployment of this registry design:
//! 390,325 gas to register a user, 507,763 to add an agent, 128,837 to
//! update one, and 124,117 to remove one.
//!
//! The fit is exact for registration and agent addition. A single linear
//! cost table cannot also land update and removal exactly while keeping
//! both at or below one third of registration cost (the measured update
//! figure sits at 0.3301 × registration), so those two operations price
//! slightly under their measurements: update meters 128,375 (-0.36%) and
//! removal 123,750 (-0.30%), both well inside the ±5% reproduction band
//! the tests enforce.

use serde::{Deserialize, Serialize};

/// Flat per-transaction cost of entering the registry gateway.
pub const ENTRYPOINT_BASE: u64 = 100_000;
/// Checking a KYC predicate credential during user registration.
pub const KYC_VERIFY: u64 = 110_937;
/// Verifying one caller signature.
pub const SIG_VERIFY: u64 = 3_000;
/// Instantiating an identity contract from its template (clone pattern).
pub const CONTRACT_CREATE: u64 = 119_013;
/// Storing a non-zero value into a zero slot.
pub const SSTORE_NEW: u64 = 20_000;
/// Storing into a slot that already holds a non-zero value.
pub const SSTORE_MOD: u64 = 5_000;
/// Emitting one event record.
pub const LOG_EVENT: u64 = 375;

/// One line of a receipt: `units` charges of `unit_cost` gas for `cost_item`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasLine {
    pub cost_item: String,
    pub units: u64,
    pub unit_cost: u64,
}

/// Metered cost of one registry transaction. `gas_used` always equals the
/// sum over the breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReceipt {
    pub op_name: String,
    pub gas_used: u64,
    pub breakdown: Vec<GasLine>,
}

impl GasReceipt {
    /// Recompute the total from the breakdown; true when consistent.
    pub fn is_consistent(&self) -> bool {
        let total: u64 = self.breakdown.iter().map(|l| l.units * l.unit_cost).sum();
        total == self.gas_used
    }
}

/// Accumulates charges during one transaction and closes into a receipt.
/// Stores are tallied from what the state writes actually did, so receipts
/// cannot drift from the storage layer.
#[derive(Debug, Default)]
pub struct GasMeter {
    base: u64,
    kyc_verifies: u64,
    sig_verifies: u64,
    contract_creates: u64,
    stores_new: u64,
    stores_mod: u64,
    events: u64,
}

impl GasMeter {
    pub fn new() -> Self {
        GasMeter { base: 1, ..Default::default() }
    }

    pub fn charge_kyc_verify(&mut self) {
        self.kyc_verifies += 1;
    }

    pub fn charge_sig_verify(&mut self) {
        self.sig_verifies += 1;
    }

    pub fn charge_contract_create(&mut self) {
        self.contract_creates += 1;
    }

    pub fn charge_store_new(&mut self) {
        self.stores_new += 1;
    }

    pub fn charge_store_mod(&mut self) {
        self.stores_mod += 1;
    }

    pub fn charge_event(&mut self) {
        self.events += 1;
    }

    /// Close the meter into a receipt. Zero-count items are omitted.
    pub fn finish(self, op_name: &str) -> GasReceipt {
        let items = [
            ("entrypoint_base", self.base, ENTRYPOINT_BASE),
            ("kyc_verify", self.kyc_verifies, KYC_VERIFY),
            ("sig_verify", self.sig_verifies, SIG_VERIFY),
            ("contract_create", self.contract_creates, CONTRACT_CREATE),
            ("sstore_new", self.stores_new, SSTORE_NEW),
            ("sstore_mod", self.stores_mod, SSTORE_MOD),
            ("log_event", self.events, LOG_EVENT),
        ];
        let breakdown: Vec<GasLine> = items
            .into_iter()
            .filter(|(_, units, _)| *units > 0)
            .map(|(cost_item, units, unit_cost)| GasLine {
                cost_item: cost_item.to_string(),
                units,
                unit_cost,
            })
            .collect();
        let gas_used = breakdown.iter().map(|l| l.units * l.unit_cost).sum();
        GasReceipt { op_name: op_name.to_string(), gas_used, breakdown }
    }
}
