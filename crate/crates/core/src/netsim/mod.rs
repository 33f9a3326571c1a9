//! Deterministic discrete-event harness. A [`Scenario`] describes the
//! deployment (endpoint count, per-tick process budget, cost table,
//! engine parameters) and the seeded actors driving it: honest clients,
//! bulk authentication waves, and the attacker models. [`run`] executes
//! it tick by tick and returns a byte-stable [`SimReport`].

mod actors;
mod report;
mod run;
mod server;

pub use actors::{ActorClass, CaptureEntry};
pub use report::{
    BlockSample, DeliveryRow, Disposition, ModelStats, OutcomeCounts, SimEvent, SimReport,
    TickRow, TrafficStats, UnitTotals, EVENT_LOG_CAP,
};
pub use run::{run, SimError};
pub use server::{Server, ServerReply};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::ServiceCategory;
use crate::{Tick, Units};

/// Process-unit cost of each server action.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    /// Inspecting a clear header or a fixed-format request.
    #[serde(default = "d_header_inspect")]
    pub header_inspect: Units,
    /// Opening one sealed body.
    #[serde(default = "d_open_body")]
    pub open_body: Units,
    /// Full stamp verification of one packet.
    #[serde(default = "d_stamp_check")]
    pub stamp_check: Units,
    /// Dropping a datagram from its header alone.
    #[serde(default = "d_drop")]
    pub drop: Units,
    /// One validation round-trip to the signature authority.
    #[serde(default = "d_siv_validate")]
    pub siv_validate: Units,
    /// One black-list entry comparison.
    #[serde(default = "d_blacklist_probe")]
    pub blacklist_probe: Units,
    /// Designing one packet of a transfer plan.
    #[serde(default = "d_plan_packet")]
    pub plan_packet: Units,
    /// Scanning one assembled byte.
    #[serde(default = "d_scan_byte")]
    pub scan_byte: Units,
}

fn d_header_inspect() -> Units {
    1
}
fn d_open_body() -> Units {
    3
}
fn d_stamp_check() -> Units {
    5
}
fn d_drop() -> Units {
    1
}
fn d_siv_validate() -> Units {
    10
}
fn d_blacklist_probe() -> Units {
    1
}
fn d_plan_packet() -> Units {
    2
}
fn d_scan_byte() -> Units {
    0
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            header_inspect: d_header_inspect(),
            open_body: d_open_body(),
            stamp_check: d_stamp_check(),
            drop: d_drop(),
            siv_validate: d_siv_validate(),
            blacklist_probe: d_blacklist_probe(),
            plan_packet: d_plan_packet(),
            scan_byte: d_scan_byte(),
        }
    }
}

impl CostTable {
    /// Nominal cost of one full authentication request.
    pub fn processes_per_request(&self) -> Units {
        self.header_inspect + self.siv_validate
    }

    /// Cost of one expected replayed datagram (opened, then dropped as a
    /// duplicate).
    pub fn expected_packet_cost(&self) -> Units {
        self.header_inspect + self.open_body + self.drop
    }
}

/// Tunable engine parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    /// Black-list entries probed per lookup.
    #[serde(default = "d_check_depth")]
    pub check_depth: u32,
    /// Fixed per-source block time before load scaling.
    #[serde(default = "d_fixed_block_ticks")]
    pub fixed_block_ticks: Tick,
    /// Payload bytes per designed packet.
    #[serde(default = "d_payload_cap")]
    pub payload_cap: u32,
    /// Stamp freshness window.
    #[serde(default = "d_stamp_max_age")]
    pub stamp_max_age: Tick,
    /// Ticket (and session) lifetime.
    #[serde(default = "d_ticket_lifetime")]
    pub ticket_lifetime: Tick,
    /// Charge unexpected datagrams the full check instead of the header
    /// drop, modelling a system without per-endpoint expectations.
    #[serde(default)]
    pub force_full_check: bool,
}

fn d_check_depth() -> u32 {
    64
}
fn d_fixed_block_ticks() -> Tick {
    10
}
fn d_payload_cap() -> u32 {
    1024
}
fn d_stamp_max_age() -> Tick {
    500
}
fn d_ticket_lifetime() -> Tick {
    10_000
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            check_depth: d_check_depth(),
            fixed_block_ticks: d_fixed_block_ticks(),
            payload_cap: d_payload_cap(),
            stamp_max_age: d_stamp_max_age(),
            ticket_lifetime: d_ticket_lifetime(),
            force_full_check: false,
        }
    }
}

/// A group of identical honest clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HonestClientSpec {
    #[serde(default = "d_one_u32")]
    pub count: u32,
    /// Issuer whose policy row grants this client its services.
    pub issuer: u16,
    #[serde(default)]
    pub first_start: Tick,
    /// Start-tick spacing between clients of this group.
    #[serde(default)]
    pub stagger: Tick,
    #[serde(default = "d_one_u32")]
    pub transfers_per_client: u32,
    pub transfer_size: u64,
    pub category: ServiceCategory,
    #[serde(default = "d_one_u32")]
    pub packets_per_tick: u32,
    /// Optional hex byte string embedded across the first fragment
    /// boundary of each transfer (exercises whole-message scanning).
    #[serde(default)]
    pub content_marker_hex: Option<String>,
    /// Hold the final packet of each transfer back this many ticks.
    #[serde(default)]
    pub stall_last_packet: Tick,
    /// Ask for an endpoint rotation between transfers.
    #[serde(default)]
    pub rotate_between_transfers: bool,
}

fn d_one_u32() -> u32 {
    1
}

/// Bulk authentication load: `rate` fresh registered signatures per tick,
/// each from a new source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthWaveSpec {
    pub rate: u64,
    #[serde(default)]
    pub start: Tick,
    pub stop: Tick,
    pub issuer: u16,
}

/// Adversary behaviours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackerModel {
    /// Format-valid requests with unregistered signatures from one source.
    FloodFixedSource,
    /// Same, but rotating the source per request.
    FloodRotatingSource,
    /// Random field or byte mutations of captured packets.
    MaliciousMutator,
    /// Exact resends of captured packets to uniformly chosen endpoints.
    Replayer,
    /// Clear-header rewrites of captured packets sent to their endpoint.
    Spoofer,
}

impl AttackerModel {
    pub fn name(&self) -> &'static str {
        match self {
            AttackerModel::FloodFixedSource => "FLOOD_FIXED_SOURCE",
            AttackerModel::FloodRotatingSource => "FLOOD_ROTATING_SOURCE",
            AttackerModel::MaliciousMutator => "MALICIOUS_MUTATOR",
            AttackerModel::Replayer => "REPLAYER",
            AttackerModel::Spoofer => "SPOOFER",
        }
    }
}

/// Which part of a captured packet the mutator may rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MutationTarget {
    PlanId,
    Seq,
    PayloadLen,
    Source,
    Dest,
    Kind,
    BodyByte,
}

pub const ALL_MUTATION_TARGETS: [MutationTarget; 7] = [
    MutationTarget::PlanId,
    MutationTarget::Seq,
    MutationTarget::PayloadLen,
    MutationTarget::Source,
    MutationTarget::Dest,
    MutationTarget::Kind,
    MutationTarget::BodyByte,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub model: AttackerModel,
    /// Datagrams injected per tick inside the window.
    pub rate: u64,
    #[serde(default)]
    pub start: Tick,
    pub stop: Tick,
    /// Restrict the mutator to these targets (default: all).
    #[serde(default)]
    pub mutation_targets: Option<Vec<MutationTarget>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRuleConfig {
    pub id: String,
    pub pattern_hex: String,
}

/// Standalone registry row (beyond the auto-registered actor signatures).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureEntry {
    pub issuer: u16,
    pub serial: u64,
}

/// One complete simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Endpoint count at the authenticated channel.
    pub endpoints: u16,
    /// Process units the server may spend per tick.
    pub units_per_tick: Units,
    pub duration: Tick,
    #[serde(default)]
    pub costs: CostTable,
    #[serde(default)]
    pub engine: EngineParams,
    /// Issuer id to granted services.
    pub policy: BTreeMap<u16, Vec<ServiceCategory>>,
    #[serde(default)]
    pub scan_rules: Vec<ScanRuleConfig>,
    #[serde(default)]
    pub honest_clients: Vec<HonestClientSpec>,
    #[serde(default)]
    pub auth_waves: Vec<AuthWaveSpec>,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub extra_signatures: Vec<SignatureEntry>,
}

/// A scenario field failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: String::from(field),
        message: message.into(),
    }
}

impl Scenario {
    /// Checks every invariant a run relies on; field names in errors match
    /// the JSON schema.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoints == 0 {
            return Err(err("endpoints", "must be at least 1"));
        }
        if self.units_per_tick == 0 {
            return Err(err("units_per_tick", "must be positive"));
        }
        if self.duration == 0 {
            return Err(err("duration", "must be positive"));
        }
        let c = &self.costs;
        for (name, value) in [
            ("costs.header_inspect", c.header_inspect),
            ("costs.open_body", c.open_body),
            ("costs.stamp_check", c.stamp_check),
            ("costs.drop", c.drop),
            ("costs.siv_validate", c.siv_validate),
            ("costs.plan_packet", c.plan_packet),
        ] {
            if value == 0 {
                return Err(err(name, "must be positive"));
            }
        }
        if c.drop >= c.stamp_check {
            return Err(err(
                "costs.drop",
                "header drops must cost less than a full check",
            ));
        }
        if self.units_per_tick < c.processes_per_request() {
            return Err(err(
                "units_per_tick",
                "cannot serve even one authentication request",
            ));
        }
        let e = &self.engine;
        if e.payload_cap == 0 {
            return Err(err("engine.payload_cap", "must be positive"));
        }
        if e.stamp_max_age == 0 {
            return Err(err("engine.stamp_max_age", "must be positive"));
        }
        if e.ticket_lifetime == 0 {
            return Err(err("engine.ticket_lifetime", "must be positive"));
        }
        if e.check_depth == 0 {
            return Err(err("engine.check_depth", "must be positive"));
        }
        for (issuer, services) in &self.policy {
            if services.is_empty() {
                return Err(err(
                    "policy",
                    alloc::format!("issuer {issuer} grants no services"),
                ));
            }
        }
        for rule in &self.scan_rules {
            if decode_hex(&rule.pattern_hex).is_none() {
                return Err(err(
                    "scan_rules.pattern_hex",
                    alloc::format!("rule `{}` is not valid hex", rule.id),
                ));
            }
        }
        let mut max_cost = c.processes_per_request();
        for (idx, spec) in self.honest_clients.iter().enumerate() {
            let field = alloc::format!("honest_clients[{idx}]");
            let services = self
                .policy
                .get(&spec.issuer)
                .ok_or_else(|| err(&field, alloc::format!("issuer {} has no policy row", spec.issuer)))?;
            if !services.contains(&spec.category) {
                return Err(err(
                    &field,
                    alloc::format!("issuer {} does not grant {:?}", spec.issuer, spec.category),
                ));
            }
            if spec.transfer_size == 0 {
                return Err(err(&field, "transfer_size must be positive"));
            }
            if spec.packets_per_tick == 0 {
                return Err(err(&field, "packets_per_tick must be positive"));
            }
            if let Some(marker) = &spec.content_marker_hex {
                if decode_hex(marker).is_none() {
                    return Err(err(&field, "content_marker_hex is not valid hex"));
                }
            }
            let packets = spec.transfer_size.div_ceil(u64::from(e.payload_cap));
            let plan_cost = c.header_inspect + c.open_body + c.plan_packet * packets;
            let final_fragment_cost =
                c.header_inspect + c.open_body + c.stamp_check + c.scan_byte * spec.transfer_size;
            max_cost = max_cost.max(plan_cost).max(final_fragment_cost);
        }
        if self.units_per_tick < max_cost {
            return Err(err(
                "units_per_tick",
                "smaller than the most expensive single datagram in this scenario",
            ));
        }
        for (idx, wave) in self.auth_waves.iter().enumerate() {
            let field = alloc::format!("auth_waves[{idx}]");
            if !self.policy.contains_key(&wave.issuer) {
                return Err(err(&field, alloc::format!("issuer {} has no policy row", wave.issuer)));
            }
            if wave.stop <= wave.start {
                return Err(err(&field, "stop must be after start"));
            }
        }
        for (idx, attacker) in self.attackers.iter().enumerate() {
            let field = alloc::format!("attackers[{idx}]");
            if attacker.stop <= attacker.start {
                return Err(err(&field, "stop must be after start"));
            }
            if let Some(targets) = &attacker.mutation_targets {
                if targets.is_empty() {
                    return Err(err(&field, "mutation_targets must not be empty"));
                }
            }
        }
        for (idx, sig) in self.extra_signatures.iter().enumerate() {
            if !self.policy.contains_key(&sig.issuer) {
                return Err(err(
                    &alloc::format!("extra_signatures[{idx}]"),
                    alloc::format!("issuer {} has no policy row", sig.issuer),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn decode_hex(s: &str) -> Option<Vec<u8>> {
    hex::decode(s).ok()
}
