//! Transfer planning and duplicate suppression. The manager designs every
//! packet of a transfer up front: headers, stamps from the stamp engine,
//! and receive endpoints from the director. On the receive side it owns
//! the per-plan bitmap that stops duplicated packets.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::director::EndpointDirector;
use crate::model::{
    ClientId, PacketHeader, PacketKind, PlanEntry, SeqBitmap, ServiceCategory, SourceAddr, Ticket,
    TransferPlan, TransferSpec,
};
use crate::stamp::StampEngine;
use crate::Tick;

/// Plan id 0 is reserved for the control stream; real plans start at 1.
pub const CONTROL_PLAN_ID: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanError {
    /// `total_size` was zero.
    EmptyTransfer,
    /// The ticket does not cover the requested service category (or has
    /// expired).
    ServiceNotPermitted,
    /// The client has no live session at the director.
    UnknownClient,
}

/// Receive-side verdict for one data packet, checked before any stamp
/// work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptOutcome {
    /// First sighting of this (plan, seq): pass to stamp verification.
    ToStampCheck,
    /// The bitmap bit was already set.
    DropDuplicate,
    /// No such plan, or the sequence is outside it.
    DropUnknownPlan,
}

/// Stores plans and enforces once-only packet acceptance.
pub struct PacketManager {
    plans: BTreeMap<u64, TransferPlan>,
    payload_cap: u32,
    next_plan_id: u64,
}

impl PacketManager {
    pub fn new(payload_cap: u32) -> Self {
        assert!(payload_cap > 0, "payload capacity must be positive");
        Self {
            plans: BTreeMap::new(),
            payload_cap,
            next_plan_id: CONTROL_PLAN_ID + 1,
        }
    }

    pub fn payload_cap(&self) -> u32 {
        self.payload_cap
    }

    pub fn plan(&self, plan_id: u64) -> Option<&TransferPlan> {
        self.plans.get(&plan_id)
    }

    pub fn plan_count(&self) -> usize {
        self.plans.len()
    }

    /// Designs all packets for `spec`: ceil(total_size / payload_cap)
    /// entries, each with a stamped header and an assigned endpoint, plus
    /// the next session endpoint for the client. The plan is stored and
    /// returned for delivery.
    #[allow(clippy::too_many_arguments)]
    pub fn plan_transfer(
        &mut self,
        spec: TransferSpec,
        category: ServiceCategory,
        ticket: &Ticket,
        src: SourceAddr,
        now: Tick,
        stamps: &mut StampEngine,
        director: &mut EndpointDirector,
    ) -> Result<&TransferPlan, PlanError> {
        if spec.total_size == 0 {
            return Err(PlanError::EmptyTransfer);
        }
        if !ticket.is_live(now) || !ticket.permits(category) {
            return Err(PlanError::ServiceNotPermitted);
        }
        if director.session_endpoint(spec.client).is_none() {
            return Err(PlanError::UnknownClient);
        }

        let plan_id = self.next_plan_id;
        let count = spec.total_size.div_ceil(u64::from(self.payload_cap));
        let mut entries = Vec::with_capacity(count as usize);
        let mut remaining = spec.total_size;
        for seq in 0..count as u32 {
            let payload_len = remaining.min(u64::from(self.payload_cap)) as u32;
            remaining -= u64::from(payload_len);
            let dest = director
                .assign_endpoint(plan_id, seq, src, spec.client, now)
                .map_err(|_| PlanError::UnknownClient)?;
            let header = PacketHeader {
                plan_id,
                seq,
                payload_len,
                source: src,
                dest,
                kind: PacketKind::Data,
            };
            let stamp = stamps.issue_stamp(&header, now);
            entries.push(PlanEntry {
                header,
                stamp,
                endpoint: dest,
            });
        }
        let next_endpoint = director
            .next_endpoint(spec.client, now)
            .map_err(|_| PlanError::UnknownClient)?;

        self.next_plan_id += 1;
        let plan = TransferPlan {
            plan_id,
            spec,
            entries,
            next_endpoint,
            received: SeqBitmap::new(count as usize),
        };
        Ok(self.plans.entry(plan_id).or_insert(plan))
    }

    /// Read-only preview of [`Self::accept_packet`].
    pub fn peek_accept(&self, header: &PacketHeader) -> AcceptOutcome {
        match self.plans.get(&header.plan_id) {
            None => AcceptOutcome::DropUnknownPlan,
            Some(plan) => {
                if header.seq as usize >= plan.entries.len() {
                    AcceptOutcome::DropUnknownPlan
                } else if plan.received.is_set(header.seq as usize) {
                    AcceptOutcome::DropDuplicate
                } else {
                    AcceptOutcome::ToStampCheck
                }
            }
        }
    }

    /// Marks the packet's sequence bit; only the first sighting goes on to
    /// stamp verification.
    pub fn accept_packet(&mut self, header: &PacketHeader) -> AcceptOutcome {
        let outcome = self.peek_accept(header);
        if outcome == AcceptOutcome::ToStampCheck {
            let plan = self.plans.get_mut(&header.plan_id).unwrap();
            plan.received.set(header.seq as usize);
        }
        outcome
    }

    /// Drops every plan owned by `client` (session ended).
    pub fn expire_client_plans(&mut self, client: ClientId) {
        self.plans.retain(|_, plan| plan.spec.client != client);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stamp::{FreshnessWindow, StampKey, VerifyOutcome};
    use alloc::string::ToString;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn setup(payload_cap: u32, endpoints: u16) -> (PacketManager, StampEngine, EndpointDirector, Ticket) {
        let manager = PacketManager::new(payload_cap);
        let stamps = StampEngine::new(StampKey::from_bytes([2u8; 32]));
        let mut director = EndpointDirector::new(endpoints);
        let ticket = Ticket {
            client: ClientId(1),
            services: [ServiceCategory::FileUpload, ServiceCategory::Message]
                .into_iter()
                .collect(),
            issued_at: 0,
            expires_at: 10_000,
        };
        director.register_client(ClientId(1), SourceAddr(7), 0, ticket.expires_at);
        (manager, stamps, director, ticket)
    }

    fn spec(total_size: u64) -> TransferSpec {
        TransferSpec {
            client: ClientId(1),
            total_size,
            name: "upload".to_string(),
            content_digest: [0u8; 32],
        }
    }

    #[test]
    fn ceiling_split_sizes_payloads() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        let plan = m
            .plan_transfer(spec(2500), ServiceCategory::FileUpload, &t, SourceAddr(7), 0, &mut s, &mut d)
            .unwrap();
        let lens: Vec<u32> = plan.entries.iter().map(|e| e.header.payload_len).collect();
        assert_eq!(lens, alloc::vec![1000, 1000, 500]);
        assert_eq!(
            plan.entries.iter().map(|e| u64::from(e.header.payload_len)).sum::<u64>(),
            2500
        );
    }

    #[test]
    fn exact_fit_is_one_packet() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        let plan = m
            .plan_transfer(spec(1000), ServiceCategory::Message, &t, SourceAddr(7), 0, &mut s, &mut d)
            .unwrap();
        assert_eq!(plan.entries.len(), 1);
    }

    #[test]
    fn empty_transfer_is_refused() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        assert_eq!(
            m.plan_transfer(spec(0), ServiceCategory::Message, &t, SourceAddr(7), 0, &mut s, &mut d)
                .err(),
            Some(PlanError::EmptyTransfer)
        );
    }

    #[test]
    fn uncovered_category_is_refused() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        assert_eq!(
            m.plan_transfer(spec(10), ServiceCategory::Query, &t, SourceAddr(7), 0, &mut s, &mut d)
                .err(),
            Some(PlanError::ServiceNotPermitted)
        );
    }

    #[test]
    fn expired_ticket_is_refused() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        assert_eq!(
            m.plan_transfer(spec(10), ServiceCategory::Message, &t, SourceAddr(7), 10_000, &mut s, &mut d)
                .err(),
            Some(PlanError::ServiceNotPermitted)
        );
    }

    #[test]
    fn plans_self_verify_over_random_specs() {
        let (mut m, mut s, mut d, t) = setup(512, 4);
        let window = FreshnessWindow::new(500);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..1_000 {
            let size = 1 + u64::from(rng.next_u32() % 4096);
            let mut sp = spec(size);
            sp.name = alloc::format!("t{i}");
            let plan = m
                .plan_transfer(sp, ServiceCategory::Message, &t, SourceAddr(7), 1, &mut s, &mut d)
                .unwrap();
            assert_eq!(plan.entries.len() as u64, size.div_ceil(512));
            for entry in &plan.entries {
                assert_eq!(entry.endpoint, entry.header.dest);
                assert_eq!(
                    s.verify_stamp(&entry.stamp, &entry.header, 1, window),
                    VerifyOutcome::Ok
                );
                // The published packet expectation matches the plan entry.
                let exp = d
                    .packet_expectation(entry.header.plan_id, entry.header.seq)
                    .unwrap();
                assert_eq!(exp.endpoint, entry.endpoint);
            }
        }
    }

    #[test]
    fn duplicates_and_unknown_plans_are_dropped() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        let plan_id = {
            let plan = m
                .plan_transfer(spec(1500), ServiceCategory::Message, &t, SourceAddr(7), 0, &mut s, &mut d)
                .unwrap();
            plan.plan_id
        };
        let header = m.plan(plan_id).unwrap().entries[0].header;
        assert_eq!(m.accept_packet(&header), AcceptOutcome::ToStampCheck);
        assert_eq!(m.accept_packet(&header), AcceptOutcome::DropDuplicate);

        let mut unknown = header;
        unknown.plan_id = 999;
        assert_eq!(m.accept_packet(&unknown), AcceptOutcome::DropUnknownPlan);

        let mut out_of_range = header;
        out_of_range.seq = 99;
        assert_eq!(m.accept_packet(&out_of_range), AcceptOutcome::DropUnknownPlan);
    }

    #[test]
    fn all_arrival_orders_fill_the_bitmap() {
        let orders = [
            [0usize, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for order in orders {
            let (mut m, mut s, mut d, t) = setup(1000, 2);
            let plan_id = m
                .plan_transfer(spec(2500), ServiceCategory::Message, &t, SourceAddr(7), 0, &mut s, &mut d)
                .unwrap()
                .plan_id;
            let headers: Vec<PacketHeader> =
                m.plan(plan_id).unwrap().entries.iter().map(|e| e.header).collect();
            for idx in order {
                assert_eq!(m.accept_packet(&headers[idx]), AcceptOutcome::ToStampCheck);
            }
            assert!(m.plan(plan_id).unwrap().received.all_set());
        }
    }

    #[test]
    fn expire_client_plans_removes_ownership() {
        let (mut m, mut s, mut d, t) = setup(1000, 2);
        let plan_id = m
            .plan_transfer(spec(100), ServiceCategory::Message, &t, SourceAddr(7), 0, &mut s, &mut d)
            .unwrap()
            .plan_id;
        m.expire_client_plans(ClientId(1));
        assert!(m.plan(plan_id).is_none());
    }
}
