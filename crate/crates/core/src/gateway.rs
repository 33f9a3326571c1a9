//! Multi-endpoint intake for authenticated traffic. Anything an endpoint
//! was not told to expect dies at header cost, before any decryption. What
//! remains is opened under the per-packet key, compared against the sealed
//! inner header to catch clear-header rewrites, de-duplicated, stamp
//! verified, and only then buffered for reassembly.
//!
//! Handling is split into a read-only [`AccGateway::assess`] that yields a
//! verdict with a computable process-unit cost, and a mutating
//! [`AccGateway::commit`]. The simulator uses the split to enforce its
//! per-tick budget exactly; [`AccGateway::receive`] composes the two for
//! direct use.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::assembly::{AssemblyChecker, IngestOutcome, ScanOutcome, ScanRuleSet};
use crate::crypto::{self, packet_key, MasterKey};
use crate::director::EndpointDirector;
use crate::filter::FilterEngine;
use crate::model::{
    ClientId, EndpointId, Packet, PacketKind, ServiceCategory, SourceAddr, Ticket, TransferSpec,
};
use crate::packets::{AcceptOutcome, PacketManager, PlanError, CONTROL_PLAN_ID};
use crate::stamp::{FreshnessWindow, StampEngine, VerifyOutcome};
use crate::wire::{
    self, ControlReply, ControlRequest, GrantEntry, PlanGrant, RejectReason,
};
use crate::{Tick, Units};

/// Final disposition of one datagram at the authenticated channel.
///
/// The first three drops are the gateway's own checks; the rest record
/// where the downstream engines stopped the datagram, so every received
/// datagram maps to exactly one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GatewayOutcome {
    /// No live expectation matched the clear header; dropped unopened.
    DropUnexpected,
    /// The sealed body failed to open or was structurally invalid.
    DropGarbled,
    /// The body opened but its inner header disagrees with the clear one.
    DropSpoofed,
    /// The packet manager had already seen this (plan, seq).
    DropDuplicate,
    /// No such plan slot existed at the packet manager.
    DropUnknownPlan,
    /// Stamp token failed to open.
    DropStampGarbled,
    /// Stamp outside its freshness window.
    DropStampStale,
    /// Stamp bound to a different header.
    DropStampMismatch,
    /// Data packet passed everything and reached the assembly buffers.
    Forwarded,
    /// Transfer request answered with a designed plan.
    PlanDelivered,
    /// Endpoint rotation request answered.
    NextEndpointSent,
    /// Authentic control request refused by policy.
    Rejected,
}

/// Read-only view over the engines the gateway consults.
pub struct EngineView<'a> {
    pub packets: &'a PacketManager,
    pub stamps: &'a StampEngine,
    pub director: &'a EndpointDirector,
    pub assembly: &'a AssemblyChecker,
}

/// Mutable access used when committing a verdict.
pub struct EngineMut<'a> {
    pub packets: &'a mut PacketManager,
    pub stamps: &'a mut StampEngine,
    pub director: &'a mut EndpointDirector,
    pub assembly: &'a mut AssemblyChecker,
    pub filter: &'a mut FilterEngine,
    pub rules: &'a ScanRuleSet,
}

impl<'a> EngineMut<'a> {
    fn view(&self) -> EngineView<'_> {
        EngineView {
            packets: self.packets,
            stamps: self.stamps,
            director: self.director,
            assembly: self.assembly,
        }
    }
}

/// Authenticated client state held by the gateway.
#[derive(Clone)]
pub struct Session {
    pub client: ClientId,
    pub source: SourceAddr,
    pub master: MasterKey,
    pub ticket: Ticket,
    /// Next client-to-server control sequence (even; replies take odd).
    pub expect_ctrl_seq: u32,
    pub terminated: bool,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GatewayStats {
    /// Datagrams rejected at the header stage, unopened.
    pub header_rejects: u64,
    /// Sealed-body open attempts; never exceeds accepted headers.
    pub open_attempts: u64,
}

/// What [`AccGateway::assess`] decided about one datagram.
#[derive(Debug, Clone)]
pub enum AccVerdict {
    Unexpected,
    Garbled,
    Spoofed,
    Duplicate,
    UnknownPlan,
    StampFailed {
        client: ClientId,
        verdict: VerifyOutcome,
    },
    DataOk {
        client: ClientId,
        plan_id: u64,
        seq: u32,
        payload: Vec<u8>,
        /// Set when this fragment completes the plan; scanning cost applies.
        assembled_len: Option<u64>,
    },
    CtrlPlan {
        client: ClientId,
        reply_seq: u32,
        spec: TransferSpec,
        category: ServiceCategory,
        packet_count: u64,
    },
    CtrlRotate {
        client: ClientId,
        reply_seq: u32,
    },
    CtrlRejected {
        client: ClientId,
        reply_seq: u32,
        reason: RejectReason,
    },
}

impl AccVerdict {
    /// Whether handling this verdict opened the sealed body.
    pub fn opened(&self) -> bool {
        !matches!(self, AccVerdict::Unexpected)
    }

    /// Process-unit cost of this verdict. With `force_full_check` the
    /// header-level early drop is suppressed in the cost model: unexpected
    /// datagrams are charged the full check instead of the drop, which is
    /// what a system without per-endpoint expectations would pay.
    pub fn cost(&self, costs: &GatewayCosts, force_full_check: bool) -> Units {
        match self {
            AccVerdict::Unexpected => {
                if force_full_check {
                    costs.stamp_check
                } else {
                    costs.drop
                }
            }
            AccVerdict::Garbled
            | AccVerdict::Spoofed
            | AccVerdict::Duplicate
            | AccVerdict::UnknownPlan => costs.header_inspect + costs.open_body + costs.drop,
            AccVerdict::StampFailed { .. } => {
                costs.header_inspect + costs.open_body + costs.stamp_check + costs.drop
            }
            AccVerdict::DataOk { assembled_len, .. } => {
                costs.header_inspect
                    + costs.open_body
                    + costs.stamp_check
                    + assembled_len.map_or(0, |len| costs.scan_byte * len)
            }
            AccVerdict::CtrlPlan { packet_count, .. } => {
                costs.header_inspect + costs.open_body + costs.plan_packet * packet_count
            }
            AccVerdict::CtrlRotate { .. } => costs.header_inspect + costs.open_body,
            AccVerdict::CtrlRejected { .. } => {
                costs.header_inspect + costs.open_body + costs.drop
            }
        }
    }
}

/// The slice of the cost table the authenticated channel consumes.
#[derive(Debug, Clone, Copy)]
pub struct GatewayCosts {
    pub header_inspect: Units,
    pub open_body: Units,
    pub stamp_check: Units,
    pub drop: Units,
    pub plan_packet: Units,
    pub scan_byte: Units,
}

/// A sealed control reply ready to queue back to the client.
#[derive(Debug, Clone)]
pub struct SealedReply {
    pub to: SourceAddr,
    pub reply_seq: u32,
    pub sealed: Vec<u8>,
}

/// A completed, scanned transfer handed to the server sink.
#[derive(Debug, Clone)]
pub struct DeliveryRecord {
    pub plan_id: u64,
    pub client: ClientId,
    pub size: u64,
    pub digest: [u8; 32],
    pub digest_matches: bool,
}

#[derive(Debug, Clone)]
pub struct ThreatRecord {
    pub plan_id: u64,
    pub client: ClientId,
    pub rule: alloc::string::String,
}

/// Everything that happened while committing one datagram.
pub struct Reception {
    pub outcome: GatewayOutcome,
    pub client: Option<ClientId>,
    pub reply: Option<SealedReply>,
    pub delivery: Option<DeliveryRecord>,
    pub threat: Option<ThreatRecord>,
    pub terminated: Option<ClientId>,
    pub plan_created: Option<(u64, u64)>,
}

impl Reception {
    fn drop(outcome: GatewayOutcome) -> Self {
        Self {
            outcome,
            client: None,
            reply: None,
            delivery: None,
            threat: None,
            terminated: None,
            plan_created: None,
        }
    }
}

/// The authenticated-channel intake engine.
pub struct AccGateway {
    sessions: BTreeMap<ClientId, Session>,
    by_source: BTreeMap<SourceAddr, ClientId>,
    pub stats: GatewayStats,
}

impl Default for AccGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl AccGateway {
    pub fn new() -> Self {
        Self {
            sessions: BTreeMap::new(),
            by_source: BTreeMap::new(),
            stats: GatewayStats::default(),
        }
    }

    /// Installs the session state for a freshly authenticated client.
    pub fn open_session(&mut self, client: ClientId, src: SourceAddr, master: MasterKey, ticket: Ticket) {
        self.by_source.insert(src, client);
        self.sessions.insert(
            client,
            Session {
                client,
                source: src,
                master,
                ticket,
                expect_ctrl_seq: 0,
                terminated: false,
            },
        );
    }

    pub fn session(&self, client: ClientId) -> Option<&Session> {
        self.sessions.get(&client)
    }

    fn live_session(&self, client: ClientId, now: Tick) -> Option<&Session> {
        self.sessions
            .get(&client)
            .filter(|s| !s.terminated && s.ticket.is_live(now))
    }

    /// Read-only classification of one datagram. Checks run in a fixed
    /// order: expectation on the clear header (no decryption on failure),
    /// body open under the per-packet key, inner-header comparison, then
    /// duplicate and stamp checks for data or policy checks for control.
    pub fn assess(
        &self,
        view: &EngineView<'_>,
        endpoint: EndpointId,
        packet: &Packet,
        now: Tick,
        window: FreshnessWindow,
    ) -> AccVerdict {
        let h = &packet.clear_header;
        if !view.director.is_expected(endpoint, h.source, h, now) {
            return AccVerdict::Unexpected;
        }
        match h.kind {
            PacketKind::Control => {
                let client = match view.director.session_client(h.source) {
                    Some(c) => c,
                    None => return AccVerdict::Unexpected,
                };
                let session = match self.live_session(client, now) {
                    Some(s) => s,
                    None => return AccVerdict::Unexpected,
                };
                // Stale or skipped control sequences are not expected;
                // this is what stops control-plane replays unopened.
                if h.plan_id != CONTROL_PLAN_ID || h.seq != session.expect_ctrl_seq {
                    return AccVerdict::Unexpected;
                }
                let key = packet_key(&session.master, CONTROL_PLAN_ID, h.seq);
                let body = match crypto::open(&key, &packet.sealed_body) {
                    Ok(b) => b,
                    Err(_) => return AccVerdict::Garbled,
                };
                let (inner, payload) = match wire::decode_control_body(&body) {
                    Some(split) => split,
                    None => return AccVerdict::Garbled,
                };
                if inner != *h {
                    return AccVerdict::Spoofed;
                }
                if payload.len() != h.payload_len as usize {
                    return AccVerdict::Garbled;
                }
                let reply_seq = h.seq + 1;
                match wire::decode_control_request(payload) {
                    None => AccVerdict::Garbled,
                    Some(ControlRequest::NextEndpoint) => AccVerdict::CtrlRotate { client, reply_seq },
                    Some(ControlRequest::Transfer { spec, category }) => {
                        if spec.client != client {
                            return AccVerdict::Spoofed;
                        }
                        if spec.total_size == 0 {
                            return AccVerdict::CtrlRejected {
                                client,
                                reply_seq,
                                reason: RejectReason::EmptyTransfer,
                            };
                        }
                        if !session.ticket.permits(category) {
                            return AccVerdict::CtrlRejected {
                                client,
                                reply_seq,
                                reason: RejectReason::ServiceNotPermitted,
                            };
                        }
                        let packet_count = spec
                            .total_size
                            .div_ceil(u64::from(view.packets.payload_cap()));
                        AccVerdict::CtrlPlan {
                            client,
                            reply_seq,
                            spec,
                            category,
                            packet_count,
                        }
                    }
                }
            }
            PacketKind::Data => {
                let plan = match view.packets.plan(h.plan_id) {
                    Some(p) => p,
                    None => return AccVerdict::Unexpected,
                };
                let client = plan.spec.client;
                let session = match self.live_session(client, now) {
                    Some(s) => s,
                    None => return AccVerdict::Unexpected,
                };
                let key = packet_key(&session.master, h.plan_id, h.seq);
                let body = match crypto::open(&key, &packet.sealed_body) {
                    Ok(b) => b,
                    Err(_) => return AccVerdict::Garbled,
                };
                let (stamp, inner, payload) = match wire::decode_data_body(&body) {
                    Some(split) => split,
                    None => return AccVerdict::Garbled,
                };
                if inner != *h {
                    return AccVerdict::Spoofed;
                }
                if payload.len() != h.payload_len as usize {
                    return AccVerdict::Garbled;
                }
                match view.packets.peek_accept(h) {
                    AcceptOutcome::DropDuplicate => return AccVerdict::Duplicate,
                    AcceptOutcome::DropUnknownPlan => return AccVerdict::UnknownPlan,
                    AcceptOutcome::ToStampCheck => {}
                }
                match view.stamps.verify_stamp(&stamp, h, now, window) {
                    VerifyOutcome::Ok => {
                        let assembled_len = view
                            .assembly
                            .would_complete(h.plan_id, h.seq)
                            .then(|| view.assembly.total_size(h.plan_id).unwrap_or(0));
                        AccVerdict::DataOk {
                            client,
                            plan_id: h.plan_id,
                            seq: h.seq,
                            payload: payload.to_vec(),
                            assembled_len,
                        }
                    }
                    verdict => AccVerdict::StampFailed { client, verdict },
                }
            }
        }
    }

    fn terminate(&mut self, muts: &mut EngineMut<'_>, client: ClientId) {
        if let Some(session) = self.sessions.get_mut(&client) {
            session.terminated = true;
            let src = session.source;
            muts.director.revoke_client(client);
            muts.packets.expire_client_plans(client);
            muts.assembly.purge_client(client);
            muts.filter.on_session_closed(src);
        }
    }

    /// Applies a verdict: bitmap bits, reassembly, plan creation, endpoint
    /// rotation, replies, and session termination on stamp failures.
    pub fn commit(
        &mut self,
        mut muts: EngineMut<'_>,
        verdict: AccVerdict,
        now: Tick,
    ) -> Reception {
        if verdict.opened() {
            self.stats.open_attempts += 1;
        } else {
            self.stats.header_rejects += 1;
        }
        match verdict {
            AccVerdict::Unexpected => Reception::drop(GatewayOutcome::DropUnexpected),
            AccVerdict::Garbled => Reception::drop(GatewayOutcome::DropGarbled),
            AccVerdict::Spoofed => Reception::drop(GatewayOutcome::DropSpoofed),
            AccVerdict::Duplicate => Reception::drop(GatewayOutcome::DropDuplicate),
            AccVerdict::UnknownPlan => Reception::drop(GatewayOutcome::DropUnknownPlan),
            AccVerdict::StampFailed { client, verdict } => {
                // Only an authentic body can reach stamp verification, so a
                // bad stamp is attributable to the client and ends the
                // session. Forged traffic never gets this far.
                self.terminate(&mut muts, client);
                let outcome = match verdict {
                    VerifyOutcome::Stale => GatewayOutcome::DropStampStale,
                    VerifyOutcome::Mismatch => GatewayOutcome::DropStampMismatch,
                    _ => GatewayOutcome::DropStampGarbled,
                };
                Reception {
                    client: Some(client),
                    terminated: Some(client),
                    ..Reception::drop(outcome)
                }
            }
            AccVerdict::DataOk {
                client,
                plan_id,
                seq,
                payload,
                ..
            } => {
                let header = muts
                    .packets
                    .plan(plan_id)
                    .map(|p| p.entries[seq as usize].header);
                let mut reception = Reception {
                    client: Some(client),
                    ..Reception::drop(GatewayOutcome::Forwarded)
                };
                if let Some(header) = header {
                    let accepted = muts.packets.accept_packet(&header);
                    debug_assert_eq!(accepted, AcceptOutcome::ToStampCheck);
                    match muts.assembly.ingest(plan_id, seq, payload) {
                        Ok(IngestOutcome::Buffered) => {}
                        Ok(IngestOutcome::Completed(assembled)) => {
                            let digest = crypto::digest256(&assembled);
                            match muts.rules.scan(&assembled) {
                                ScanOutcome::Clean => {
                                    let fresh = muts.assembly.mark_delivered(plan_id);
                                    debug_assert!(fresh, "plan delivered twice");
                                    let expected =
                                        muts.assembly.content_digest(plan_id).unwrap_or([0; 32]);
                                    reception.delivery = Some(DeliveryRecord {
                                        plan_id,
                                        client,
                                        size: assembled.len() as u64,
                                        digest,
                                        digest_matches: digest == expected,
                                    });
                                }
                                ScanOutcome::Threat { rule } => {
                                    reception.threat = Some(ThreatRecord {
                                        plan_id,
                                        client,
                                        rule,
                                    });
                                    self.terminate(&mut muts, client);
                                    reception.terminated = Some(client);
                                }
                            }
                        }
                        Err(_) => {
                            // Planned lengths and verified stamps make this
                            // unreachable; surface as garbled if it ever is.
                            reception.outcome = GatewayOutcome::DropGarbled;
                        }
                    }
                }
                reception
            }
            AccVerdict::CtrlPlan {
                client,
                reply_seq,
                spec,
                category,
                ..
            } => {
                let session = self.sessions.get(&client).expect("session vetted in assess");
                let source = session.source;
                let master = session.master.clone();
                let ticket = session.ticket;
                let reply = match Self::design_plan(
                    &mut muts, client, source, &ticket, spec, category, now,
                ) {
                    Ok(grant) => {
                        let plan_info = (grant.plan_id, grant.entries.len() as u64);
                        let sealed = wire::seal_control_reply(
                            &master,
                            reply_seq,
                            &ControlReply::PlanGrant(grant),
                        );
                        self.advance_ctrl(client);
                        return Reception {
                            client: Some(client),
                            reply: Some(SealedReply {
                                to: source,
                                reply_seq,
                                sealed,
                            }),
                            plan_created: Some(plan_info),
                            ..Reception::drop(GatewayOutcome::PlanDelivered)
                        };
                    }
                    Err(err) => {
                        let reason = match err {
                            PlanError::EmptyTransfer => RejectReason::EmptyTransfer,
                            PlanError::ServiceNotPermitted => RejectReason::ServiceNotPermitted,
                            PlanError::UnknownClient => RejectReason::UnknownClient,
                        };
                        wire::seal_control_reply(&master, reply_seq, &ControlReply::Rejected(reason))
                    }
                };
                self.advance_ctrl(client);
                Reception {
                    client: Some(client),
                    reply: Some(SealedReply {
                        to: source,
                        reply_seq,
                        sealed: reply,
                    }),
                    ..Reception::drop(GatewayOutcome::Rejected)
                }
            }
            AccVerdict::CtrlRotate { client, reply_seq } => {
                let session = self.sessions.get(&client).expect("session vetted in assess");
                let source = session.source;
                let master = session.master.clone();
                let endpoint = muts
                    .director
                    .next_endpoint(client, now)
                    .expect("live session has a director entry");
                let sealed = wire::seal_control_reply(
                    &master,
                    reply_seq,
                    &ControlReply::NextEndpointGrant(endpoint),
                );
                self.advance_ctrl(client);
                Reception {
                    client: Some(client),
                    reply: Some(SealedReply {
                        to: source,
                        reply_seq,
                        sealed,
                    }),
                    ..Reception::drop(GatewayOutcome::NextEndpointSent)
                }
            }
            AccVerdict::CtrlRejected {
                client,
                reply_seq,
                reason,
            } => {
                let session = self.sessions.get(&client).expect("session vetted in assess");
                let source = session.source;
                let sealed = wire::seal_control_reply(
                    &session.master.clone(),
                    reply_seq,
                    &ControlReply::Rejected(reason),
                );
                self.advance_ctrl(client);
                Reception {
                    client: Some(client),
                    reply: Some(SealedReply {
                        to: source,
                        reply_seq,
                        sealed,
                    }),
                    ..Reception::drop(GatewayOutcome::Rejected)
                }
            }
        }
    }

    fn advance_ctrl(&mut self, client: ClientId) {
        if let Some(session) = self.sessions.get_mut(&client) {
            session.expect_ctrl_seq += 2;
        }
    }

    fn design_plan(
        muts: &mut EngineMut<'_>,
        client: ClientId,
        source: SourceAddr,
        ticket: &Ticket,
        spec: TransferSpec,
        category: ServiceCategory,
        now: Tick,
    ) -> Result<PlanGrant, PlanError> {
        debug_assert_eq!(spec.client, client);
        let plan = muts.packets.plan_transfer(
            spec,
            category,
            ticket,
            source,
            now,
            muts.stamps,
            muts.director,
        )?;
        let lens: Vec<u32> = plan.entries.iter().map(|e| e.header.payload_len).collect();
        let grant = PlanGrant {
            plan_id: plan.plan_id,
            next_endpoint: plan.next_endpoint,
            entries: plan
                .entries
                .iter()
                .map(|e| GrantEntry {
                    seq: e.header.seq,
                    payload_len: e.header.payload_len,
                    dest: e.endpoint,
                    stamp: e.stamp.clone(),
                })
                .collect(),
        };
        let digest = plan.spec.content_digest;
        let plan_id = plan.plan_id;
        muts.assembly.register_plan(plan_id, client, &lens, digest);
        Ok(grant)
    }

    /// Designs and grants a transfer directly (the control-datagram path
    /// calls this internally).
    pub fn request_transfer(
        &mut self,
        muts: &mut EngineMut<'_>,
        client: ClientId,
        spec: TransferSpec,
        category: ServiceCategory,
        now: Tick,
    ) -> Result<PlanGrant, PlanError> {
        let session = self
            .sessions
            .get(&client)
            .filter(|s| !s.terminated && s.ticket.is_live(now))
            .ok_or(PlanError::UnknownClient)?;
        let source = session.source;
        let ticket = session.ticket;
        Self::design_plan(muts, client, source, &ticket, spec, category, now)
    }

    /// Assess-and-commit in one step.
    pub fn receive(
        &mut self,
        muts: EngineMut<'_>,
        endpoint: EndpointId,
        packet: &Packet,
        now: Tick,
        window: FreshnessWindow,
    ) -> Reception {
        let verdict = self.assess(&muts.view(), endpoint, packet, now, window);
        self.commit(muts, verdict, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterEngine;
    use crate::stamp::StampKey;
    use alloc::string::ToString;
    use alloc::vec;

    struct Rig {
        gateway: AccGateway,
        packets: PacketManager,
        stamps: StampEngine,
        director: EndpointDirector,
        assembly: AssemblyChecker,
        filter: FilterEngine,
        rules: ScanRuleSet,
        master: MasterKey,
        window: FreshnessWindow,
    }

    const SRC: SourceAddr = SourceAddr(0x0a000009);
    const CLIENT: ClientId = ClientId(1);

    impl Rig {
        fn new(endpoints: u16) -> Self {
            let mut director = EndpointDirector::new(endpoints);
            let ticket = Ticket {
                client: CLIENT,
                services: [ServiceCategory::FileUpload, ServiceCategory::Message]
                    .into_iter()
                    .collect(),
                issued_at: 0,
                expires_at: 10_000,
            };
            director.register_client(CLIENT, SRC, 0, ticket.expires_at);
            let master = MasterKey::from_bytes([42u8; 32]);
            let mut gateway = AccGateway::new();
            gateway.open_session(CLIENT, SRC, master.clone(), ticket);
            Self {
                gateway,
                packets: PacketManager::new(1000),
                stamps: StampEngine::new(StampKey::from_bytes([7u8; 32])),
                director,
                assembly: AssemblyChecker::new(),
                filter: FilterEngine::new(10, 64),
                rules: ScanRuleSet::default(),
                master,
                window: FreshnessWindow::new(500),
            }
        }

        fn receive(&mut self, endpoint: EndpointId, packet: &Packet, now: Tick) -> Reception {
            let window = self.window;
            let muts = EngineMut {
                packets: &mut self.packets,
                stamps: &mut self.stamps,
                director: &mut self.director,
                assembly: &mut self.assembly,
                filter: &mut self.filter,
                rules: &self.rules,
            };
            self.gateway.receive(muts, endpoint, packet, now, window)
        }

        fn session_endpoint(&self) -> EndpointId {
            self.director.session_endpoint(CLIENT).unwrap()
        }

        fn grant(&mut self, size: u64, now: Tick) -> PlanGrant {
            let spec = TransferSpec {
                client: CLIENT,
                total_size: size,
                name: "t".to_string(),
                content_digest: crypto::digest256(&content(size)),
            };
            let endpoint = self.session_endpoint();
            let seq = self.gateway.session(CLIENT).unwrap().expect_ctrl_seq;
            let request = wire::build_control_packet(
                &self.master,
                SRC,
                endpoint,
                seq,
                &ControlRequest::Transfer {
                    spec,
                    category: ServiceCategory::FileUpload,
                },
            );
            let reception = self.receive(endpoint, &request, now);
            assert_eq!(reception.outcome, GatewayOutcome::PlanDelivered);
            let reply = reception.reply.unwrap();
            match wire::open_control_reply(&self.master, reply.reply_seq, &reply.sealed).unwrap() {
                ControlReply::PlanGrant(grant) => grant,
                other => panic!("expected plan grant, got {other:?}"),
            }
        }

        fn data_packet(&self, grant: &PlanGrant, idx: usize, payload: &[u8]) -> Packet {
            let entry = &grant.entries[idx];
            wire::build_data_packet(
                &self.master,
                grant.header_for(entry, SRC),
                &entry.stamp,
                payload,
            )
        }
    }

    fn content(size: u64) -> Vec<u8> {
        (0..size).map(|i| (i % 251) as u8).collect()
    }

    #[test]
    fn honest_packet_at_its_endpoint_is_forwarded() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(2500, 1);
        assert_eq!(grant.entries.len(), 3);
        let bytes = content(2500);
        let packet = rig.data_packet(&grant, 0, &bytes[..1000]);
        let reception = rig.receive(grant.entries[0].dest, &packet, 2);
        assert_eq!(reception.outcome, GatewayOutcome::Forwarded);
    }

    #[test]
    fn full_transfer_delivers_once_with_matching_digest() {
        let mut rig = Rig::new(3);
        let bytes = content(2500);
        let grant = rig.grant(2500, 1);
        let mut deliveries = 0;
        for (idx, entry) in grant.entries.iter().enumerate() {
            let start = idx * 1000;
            let end = (start + entry.payload_len as usize).min(bytes.len());
            let packet = rig.data_packet(&grant, idx, &bytes[start..end]);
            let reception = rig.receive(entry.dest, &packet, 2);
            assert_eq!(reception.outcome, GatewayOutcome::Forwarded);
            if let Some(delivery) = reception.delivery {
                deliveries += 1;
                assert!(delivery.digest_matches);
                assert_eq!(delivery.size, 2500);
            }
        }
        assert_eq!(deliveries, 1);
    }

    #[test]
    fn replay_to_wrong_endpoint_drops_without_open() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let packet = rig.data_packet(&grant, 0, &bytes);
        let right = grant.entries[0].dest;
        let wrong = EndpointId(right.0 ^ 1);
        let opens_before = rig.gateway.stats.open_attempts;
        let reception = rig.receive(wrong, &packet, 2);
        assert_eq!(reception.outcome, GatewayOutcome::DropUnexpected);
        assert_eq!(rig.gateway.stats.open_attempts, opens_before);
    }

    #[test]
    fn exact_replay_is_a_duplicate() {
        let mut rig = Rig::new(1);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let packet = rig.data_packet(&grant, 0, &bytes);
        assert_eq!(
            rig.receive(grant.entries[0].dest, &packet, 2).outcome,
            GatewayOutcome::Forwarded
        );
        assert_eq!(
            rig.receive(grant.entries[0].dest, &packet, 3).outcome,
            GatewayOutcome::DropDuplicate
        );
    }

    #[test]
    fn clear_header_source_rewrite_is_spoofed_after_open() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let mut packet = rig.data_packet(&grant, 0, &bytes);
        packet.clear_header.source = SourceAddr(0xdeadbeef);
        let reception = rig.receive(grant.entries[0].dest, &packet, 2);
        assert_eq!(reception.outcome, GatewayOutcome::DropSpoofed);
        // The spoof was only detectable after decryption.
        assert!(rig.gateway.stats.open_attempts > 0);
        // No termination: a forged clear header must not kill the session.
        assert!(!rig.gateway.session(CLIENT).unwrap().terminated);
    }

    #[test]
    fn corrupted_body_is_garbled_without_termination() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let mut packet = rig.data_packet(&grant, 0, &bytes);
        packet.sealed_body[40] ^= 1;
        let reception = rig.receive(grant.entries[0].dest, &packet, 2);
        assert_eq!(reception.outcome, GatewayOutcome::DropGarbled);
        assert!(!rig.gateway.session(CLIENT).unwrap().terminated);
    }

    #[test]
    fn stale_stamp_terminates_the_session() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let packet = rig.data_packet(&grant, 0, &bytes);
        let reception = rig.receive(grant.entries[0].dest, &packet, 1 + 500 + 1);
        assert_eq!(reception.outcome, GatewayOutcome::DropStampStale);
        assert_eq!(reception.terminated, Some(CLIENT));
        assert!(rig.gateway.session(CLIENT).unwrap().terminated);
        // Everything about the client is gone.
        assert_eq!(rig.packets.plan_count(), 0);
        assert_eq!(rig.director.session_endpoint(CLIENT), None);
    }

    #[test]
    fn uncovered_category_is_rejected() {
        let mut rig = Rig::new(2);
        let endpoint = rig.session_endpoint();
        let spec = TransferSpec {
            client: CLIENT,
            total_size: 100,
            name: "q".to_string(),
            content_digest: [0; 32],
        };
        let request = wire::build_control_packet(
            &rig.master,
            SRC,
            endpoint,
            0,
            &ControlRequest::Transfer {
                spec,
                category: ServiceCategory::Query,
            },
        );
        let reception = rig.receive(endpoint, &request, 1);
        assert_eq!(reception.outcome, GatewayOutcome::Rejected);
        let reply = reception.reply.unwrap();
        assert_eq!(
            wire::open_control_reply(&rig.master, reply.reply_seq, &reply.sealed),
            Some(ControlReply::Rejected(RejectReason::ServiceNotPermitted))
        );
    }

    #[test]
    fn request_transfer_errors_directly() {
        let mut rig = Rig::new(2);
        let spec = TransferSpec {
            client: CLIENT,
            total_size: 0,
            name: "x".to_string(),
            content_digest: [0; 32],
        };
        let Rig {
            gateway,
            packets,
            stamps,
            director,
            assembly,
            filter,
            rules,
            ..
        } = &mut rig;
        let mut muts = EngineMut {
            packets,
            stamps,
            director,
            assembly,
            filter,
            rules,
        };
        assert_eq!(
            gateway
                .request_transfer(&mut muts, CLIENT, spec, ServiceCategory::Message, 1)
                .err(),
            Some(PlanError::EmptyTransfer)
        );
    }

    #[test]
    fn control_replay_is_unexpected_at_header_cost() {
        let mut rig = Rig::new(2);
        let grant1 = rig.grant(1000, 1);
        // Replay the first request (seq 0): the session now expects seq 2.
        let endpoint_then = rig.session_endpoint();
        let replayed = wire::build_control_packet(
            &rig.master,
            SRC,
            endpoint_then,
            0,
            &ControlRequest::NextEndpoint,
        );
        let opens_before = rig.gateway.stats.open_attempts;
        let reception = rig.receive(endpoint_then, &replayed, 3);
        assert_eq!(reception.outcome, GatewayOutcome::DropUnexpected);
        assert_eq!(rig.gateway.stats.open_attempts, opens_before);
        drop(grant1);
    }

    #[test]
    fn rotation_request_moves_the_session() {
        let mut rig = Rig::new(2);
        let endpoint = rig.session_endpoint();
        let request =
            wire::build_control_packet(&rig.master, SRC, endpoint, 0, &ControlRequest::NextEndpoint);
        let reception = rig.receive(endpoint, &request, 1);
        assert_eq!(reception.outcome, GatewayOutcome::NextEndpointSent);
        let reply = reception.reply.unwrap();
        match wire::open_control_reply(&rig.master, reply.reply_seq, &reply.sealed).unwrap() {
            ControlReply::NextEndpointGrant(e) => {
                assert_eq!(rig.director.session_endpoint(CLIENT), Some(e));
            }
            other => panic!("unexpected reply {other:?}"),
        }
    }

    #[test]
    fn threat_content_is_dropped_and_terminates() {
        let mut rig = Rig::new(1);
        rig.rules = ScanRuleSet::new(vec![crate::assembly::ScanRule {
            id: "marker".to_string(),
            pattern: b"EVIL".to_vec(),
        }]);
        // Content with the marker split across the fragment boundary.
        let mut bytes = content(1500);
        bytes[998..1002].copy_from_slice(b"EVIL");
        let digest = crypto::digest256(&bytes);
        let endpoint = rig.session_endpoint();
        let spec = TransferSpec {
            client: CLIENT,
            total_size: 1500,
            name: "f".to_string(),
            content_digest: digest,
        };
        let request = wire::build_control_packet(
            &rig.master,
            SRC,
            endpoint,
            0,
            &ControlRequest::Transfer {
                spec,
                category: ServiceCategory::FileUpload,
            },
        );
        let reception = rig.receive(endpoint, &request, 1);
        let reply = reception.reply.unwrap();
        let grant = match wire::open_control_reply(&rig.master, reply.reply_seq, &reply.sealed) {
            Some(ControlReply::PlanGrant(g)) => g,
            other => panic!("unexpected reply {other:?}"),
        };
        let first = rig.data_packet(&grant, 0, &bytes[..1000]);
        assert_eq!(
            rig.receive(grant.entries[0].dest, &first, 2).outcome,
            GatewayOutcome::Forwarded
        );
        let second = rig.data_packet(&grant, 1, &bytes[1000..]);
        let reception = rig.receive(grant.entries[1].dest, &second, 2);
        assert_eq!(reception.outcome, GatewayOutcome::Forwarded);
        let threat = reception.threat.unwrap();
        assert_eq!(threat.rule, "marker");
        assert!(reception.delivery.is_none());
        assert_eq!(reception.terminated, Some(CLIENT));
        assert_eq!(rig.assembly.delivered_count(), 0);
    }

    #[test]
    fn verdict_costs_keep_drops_cheaper_than_forwarding() {
        let costs = GatewayCosts {
            header_inspect: 1,
            open_body: 3,
            stamp_check: 5,
            drop: 1,
            plan_packet: 2,
            scan_byte: 0,
        };
        let unexpected = AccVerdict::Unexpected.cost(&costs, false);
        let garbled = AccVerdict::Garbled.cost(&costs, false);
        let spoofed = AccVerdict::Spoofed.cost(&costs, false);
        let forwarded = AccVerdict::DataOk {
            client: CLIENT,
            plan_id: 1,
            seq: 0,
            payload: vec![],
            assembled_len: None,
        }
        .cost(&costs, false);
        assert!(unexpected < garbled);
        assert!(garbled <= spoofed);
        assert!(spoofed < forwarded);
        // Forced full check charges the unexpected packet the full price.
        assert_eq!(AccVerdict::Unexpected.cost(&costs, true), costs.stamp_check);
    }

    #[test]
    fn unknown_header_fields_fail_at_header_stage() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let base = rig.data_packet(&grant, 0, &bytes);
        let endpoint = grant.entries[0].dest;

        let mut wrong_plan = base.clone();
        wrong_plan.clear_header.plan_id = 0xffff_0000_0000_0001;
        assert_eq!(
            rig.receive(endpoint, &wrong_plan, 2).outcome,
            GatewayOutcome::DropUnexpected
        );

        let mut wrong_seq = base.clone();
        wrong_seq.clear_header.seq = 0x8000_0001;
        assert_eq!(
            rig.receive(endpoint, &wrong_seq, 2).outcome,
            GatewayOutcome::DropUnexpected
        );

        let mut wrong_dest = base.clone();
        wrong_dest.clear_header.dest = EndpointId(endpoint.0 ^ 1);
        assert_eq!(
            rig.receive(endpoint, &wrong_dest, 2).outcome,
            GatewayOutcome::DropUnexpected
        );
    }

    #[test]
    fn payload_len_rewrite_is_spoofed() {
        let mut rig = Rig::new(2);
        let grant = rig.grant(1000, 1);
        let bytes = content(1000);
        let mut packet = rig.data_packet(&grant, 0, &bytes);
        packet.clear_header.payload_len -= 1;
        assert_eq!(
            rig.receive(grant.entries[0].dest, &packet, 2).outcome,
            GatewayOutcome::DropSpoofed
        );
    }
}
