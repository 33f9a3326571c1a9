//! Run accounting: per-disposition counters, unit attribution by actor
//! class, per-tick series, and the bounded event log. Reports are plain
//! data with a stable serialization so identical runs serialize to
//! identical bytes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::{Tick, Units};

/// Final disposition of one datagram, across both channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    CaReplyPublicKey,
    CaAuthIssued,
    CaAuthInvalid,
    CaDropMalformed,
    CaDropRateLimited,
    CaDropBlacklisted,
    CaDropAlreadyAuthenticated,
    AccForwarded,
    AccPlanDelivered,
    AccNextEndpointSent,
    AccRejected,
    AccDropUnexpected,
    AccDropGarbled,
    AccDropSpoofed,
    AccDropDuplicate,
    AccDropUnknownPlan,
    AccDropStampGarbled,
    AccDropStampStale,
    AccDropStampMismatch,
}

impl Disposition {
    pub fn is_acc(self) -> bool {
        !matches!(
            self,
            Disposition::CaReplyPublicKey
                | Disposition::CaAuthIssued
                | Disposition::CaAuthInvalid
                | Disposition::CaDropMalformed
                | Disposition::CaDropRateLimited
                | Disposition::CaDropBlacklisted
                | Disposition::CaDropAlreadyAuthenticated
        )
    }

    /// Whether the datagram was fully served rather than dropped.
    pub fn is_drop(self) -> bool {
        matches!(
            self,
            Disposition::CaDropMalformed
                | Disposition::CaDropRateLimited
                | Disposition::CaDropBlacklisted
                | Disposition::CaDropAlreadyAuthenticated
                | Disposition::AccDropUnexpected
                | Disposition::AccDropGarbled
                | Disposition::AccDropSpoofed
                | Disposition::AccDropDuplicate
                | Disposition::AccDropUnknownPlan
                | Disposition::AccDropStampGarbled
                | Disposition::AccDropStampStale
                | Disposition::AccDropStampMismatch
        )
    }
}

/// One counter per disposition.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub ca_reply_public_key: u64,
    pub ca_auth_issued: u64,
    pub ca_auth_invalid: u64,
    pub ca_drop_malformed: u64,
    pub ca_drop_rate_limited: u64,
    pub ca_drop_blacklisted: u64,
    pub ca_drop_already_authenticated: u64,
    pub acc_forwarded: u64,
    pub acc_plan_delivered: u64,
    pub acc_next_endpoint_sent: u64,
    pub acc_rejected: u64,
    pub acc_drop_unexpected: u64,
    pub acc_drop_garbled: u64,
    pub acc_drop_spoofed: u64,
    pub acc_drop_duplicate: u64,
    pub acc_drop_unknown_plan: u64,
    pub acc_drop_stamp_garbled: u64,
    pub acc_drop_stamp_stale: u64,
    pub acc_drop_stamp_mismatch: u64,
}

impl OutcomeCounts {
    pub fn record(&mut self, d: Disposition) {
        let slot = match d {
            Disposition::CaReplyPublicKey => &mut self.ca_reply_public_key,
            Disposition::CaAuthIssued => &mut self.ca_auth_issued,
            Disposition::CaAuthInvalid => &mut self.ca_auth_invalid,
            Disposition::CaDropMalformed => &mut self.ca_drop_malformed,
            Disposition::CaDropRateLimited => &mut self.ca_drop_rate_limited,
            Disposition::CaDropBlacklisted => &mut self.ca_drop_blacklisted,
            Disposition::CaDropAlreadyAuthenticated => &mut self.ca_drop_already_authenticated,
            Disposition::AccForwarded => &mut self.acc_forwarded,
            Disposition::AccPlanDelivered => &mut self.acc_plan_delivered,
            Disposition::AccNextEndpointSent => &mut self.acc_next_endpoint_sent,
            Disposition::AccRejected => &mut self.acc_rejected,
            Disposition::AccDropUnexpected => &mut self.acc_drop_unexpected,
            Disposition::AccDropGarbled => &mut self.acc_drop_garbled,
            Disposition::AccDropSpoofed => &mut self.acc_drop_spoofed,
            Disposition::AccDropDuplicate => &mut self.acc_drop_duplicate,
            Disposition::AccDropUnknownPlan => &mut self.acc_drop_unknown_plan,
            Disposition::AccDropStampGarbled => &mut self.acc_drop_stamp_garbled,
            Disposition::AccDropStampStale => &mut self.acc_drop_stamp_stale,
            Disposition::AccDropStampMismatch => &mut self.acc_drop_stamp_mismatch,
        };
        *slot += 1;
    }

    pub fn total(&self) -> u64 {
        self.ca_reply_public_key
            + self.ca_auth_issued
            + self.ca_auth_invalid
            + self.ca_drop_malformed
            + self.ca_drop_rate_limited
            + self.ca_drop_blacklisted
            + self.ca_drop_already_authenticated
            + self.acc_total()
    }

    pub fn acc_total(&self) -> u64 {
        self.acc_forwarded
            + self.acc_plan_delivered
            + self.acc_next_endpoint_sent
            + self.acc_rejected
            + self.acc_drop_unexpected
            + self.acc_drop_garbled
            + self.acc_drop_spoofed
            + self.acc_drop_duplicate
            + self.acc_drop_unknown_plan
            + self.acc_drop_stamp_garbled
            + self.acc_drop_stamp_stale
            + self.acc_drop_stamp_mismatch
    }
}

/// Process units attributed per actor class. Client generators (honest
/// clients and authentication waves) count as honest.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct UnitTotals {
    pub total: Units,
    pub honest: Units,
    pub attacker: Units,
}

/// Request counts and attacker packet accounting used by the comparator.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct TrafficStats {
    /// Datagrams handled for honest actors (clients and waves).
    pub honest_requests: u64,
    /// Datagrams handled for attackers.
    pub attacker_requests: u64,
    /// Attacker datagrams handled at the authenticated channel.
    pub attacker_acc_processed: u64,
    /// ...of which passed the header expectation check.
    pub attacker_acc_passed_header: u64,
    /// ...of which were dropped unopened at header cost.
    pub attacker_acc_failed_header: u64,
    /// Units consumed by attacker datagrams past the header check.
    pub attacker_acc_passed_units: Units,
}

/// Per-attacker-model accounting.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct ModelStats {
    pub processed: u64,
    pub passed_header: u64,
    pub units_total: Units,
    pub units_passed: Units,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TickRow {
    pub tick: Tick,
    pub injected: u64,
    pub processed: u64,
    /// Requests that took the full authentication path this tick.
    pub ca_served: u64,
    pub units_used: Units,
    pub queue_depth: u64,
}

/// One armed block window: the load sample and the resulting duration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BlockSample {
    pub tick: Tick,
    pub served: u64,
    pub capacity: u64,
    pub duration: Tick,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeliveryRow {
    pub tick: Tick,
    pub plan_id: u64,
    pub client: u64,
    pub size: u64,
    pub digest_hex: String,
    pub digest_matches: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind")]
pub enum SimEvent {
    AuthIssued { tick: Tick, client: u64, source: u32 },
    AuthRejected { tick: Tick, source: u32 },
    PlanCreated { tick: Tick, client: u64, plan_id: u64, packets: u64 },
    TransferDelivered { tick: Tick, client: u64, plan_id: u64, size: u64 },
    ThreatDropped { tick: Tick, client: u64, plan_id: u64, rule: String },
    SessionTerminated { tick: Tick, client: u64, reason: String },
}

/// Hard cap on retained events; the counters carry the analytical load.
pub const EVENT_LOG_CAP: usize = 4096;

/// Full accounting for one deterministic run.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub endpoints: u16,
    pub units_per_tick: Units,
    pub duration: Tick,
    /// Nominal full-request cost (header inspection plus validation).
    pub processes_per_request: Units,
    pub fixed_block_ticks: Tick,
    /// Cost of one expected replayed datagram (header, open, drop).
    pub expected_packet_cost: Units,
    pub full_check_cost: Units,
    pub drop_cost: Units,
    pub injected: u64,
    pub processed: u64,
    pub queued_at_end: u64,
    /// Datagrams the gateway rejected unopened at the header stage.
    pub gateway_header_rejects: u64,
    /// Sealed-body opens the gateway attempted.
    pub gateway_open_attempts: u64,
    /// Round-trips made to the signature authority.
    pub siv_validate_calls: u64,
    pub counts: OutcomeCounts,
    pub units: UnitTotals,
    pub traffic: TrafficStats,
    pub models: BTreeMap<String, ModelStats>,
    pub per_tick: Vec<TickRow>,
    pub block_samples: Vec<BlockSample>,
    pub deliveries: Vec<DeliveryRow>,
    pub events: Vec<SimEvent>,
    pub events_dropped: u64,
}
