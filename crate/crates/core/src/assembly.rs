//! Buffers verified fragments, reassembles whole transfers, and runs the
//! rule scanner over the joined bytes before anything reaches the server
//! sink. Per-packet checks are not enough on their own: a threat split
//! across two clean fragments only shows up here, after the join.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::ClientId;

/// One substring rule of the scanner chain.
#[derive(Debug, Clone)]
pub struct ScanRule {
    pub id: String,
    pub pattern: Vec<u8>,
}

/// Ordered rule list; the first matching rule wins.
#[derive(Debug, Clone, Default)]
pub struct ScanRuleSet {
    rules: Vec<ScanRule>,
}

impl ScanRuleSet {
    pub fn new(rules: Vec<ScanRule>) -> Self {
        Self { rules }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn scan(&self, assembled: &[u8]) -> ScanOutcome {
        for rule in &self.rules {
            if !rule.pattern.is_empty()
                && assembled
                    .windows(rule.pattern.len())
                    .any(|w| w == rule.pattern.as_slice())
            {
                return ScanOutcome::Threat {
                    rule: rule.id.clone(),
                };
            }
        }
        ScanOutcome::Clean
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanOutcome {
    /// Deliver to the server.
    Clean,
    /// Drop the transfer and stop communication with the client.
    Threat { rule: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestOutcome {
    Buffered,
    /// All fragments present; bytes concatenated in sequence order.
    Completed(Vec<u8>),
}

/// The fragment's length disagrees with the plan entry, or the slot is
/// unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverflowFragment;

#[derive(Debug, Clone)]
struct PlanBuffer {
    client: ClientId,
    expected_lens: Vec<u32>,
    content_digest: [u8; 32],
    fragments: Vec<Option<Vec<u8>>>,
    received: usize,
}

/// In-memory reassembly buffers keyed by plan, with exactly-once delivery
/// accounting.
#[derive(Debug, Default)]
pub struct AssemblyChecker {
    buffers: BTreeMap<u64, PlanBuffer>,
    delivered: BTreeSet<u64>,
}

impl AssemblyChecker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Announces a plan's fragment layout before any packet arrives.
    pub fn register_plan(
        &mut self,
        plan_id: u64,
        client: ClientId,
        expected_lens: &[u32],
        content_digest: [u8; 32],
    ) {
        self.buffers.insert(
            plan_id,
            PlanBuffer {
                client,
                expected_lens: expected_lens.to_vec(),
                content_digest,
                fragments: alloc::vec![None; expected_lens.len()],
                received: 0,
            },
        );
    }

    pub fn content_digest(&self, plan_id: u64) -> Option<[u8; 32]> {
        self.buffers.get(&plan_id).map(|b| b.content_digest)
    }

    /// True iff ingesting (plan, seq) now would complete the plan.
    pub fn would_complete(&self, plan_id: u64, seq: u32) -> bool {
        self.buffers.get(&plan_id).is_some_and(|b| {
            b.received + 1 == b.fragments.len()
                && (seq as usize) < b.fragments.len()
                && b.fragments[seq as usize].is_none()
        })
    }

    pub fn total_size(&self, plan_id: u64) -> Option<u64> {
        self.buffers
            .get(&plan_id)
            .map(|b| b.expected_lens.iter().map(|l| u64::from(*l)).sum())
    }

    /// Stores one verified fragment. When the last slot fills, returns the
    /// whole transfer concatenated in sequence order.
    pub fn ingest(
        &mut self,
        plan_id: u64,
        seq: u32,
        payload: Vec<u8>,
    ) -> Result<IngestOutcome, OverflowFragment> {
        let buffer = self.buffers.get_mut(&plan_id).ok_or(OverflowFragment)?;
        let slot = seq as usize;
        if slot >= buffer.expected_lens.len()
            || payload.len() != buffer.expected_lens[slot] as usize
        {
            return Err(OverflowFragment);
        }
        if buffer.fragments[slot].is_none() {
            buffer.fragments[slot] = Some(payload);
            buffer.received += 1;
        }
        if buffer.received == buffer.fragments.len() {
            let mut assembled = Vec::with_capacity(
                buffer.expected_lens.iter().map(|l| *l as usize).sum(),
            );
            for fragment in &buffer.fragments {
                assembled.extend_from_slice(fragment.as_ref().unwrap());
            }
            Ok(IngestOutcome::Completed(assembled))
        } else {
            Ok(IngestOutcome::Buffered)
        }
    }

    /// Records a delivery; returns false if this plan already delivered.
    pub fn mark_delivered(&mut self, plan_id: u64) -> bool {
        self.delivered.insert(plan_id)
    }

    pub fn delivered_count(&self) -> usize {
        self.delivered.len()
    }

    /// Drops buffers for a terminated client.
    pub fn purge_client(&mut self, client: ClientId) {
        self.buffers.retain(|_, b| b.client != client);
    }
}
