//! Seeded traffic sources. Honest clients walk the full protocol:
//! contact, signature submission, master-key receipt, transfer requests,
//! paced data packets. Attackers inject hostile load: request floods on
//! the unauthenticated channel, and replays, clear-header rewrites, or
//! mutations of sniffed packets on the authenticated one. Sniffers see
//! sealed bytes only, never keys.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use crate::crypto::{digest256, MasterKey};
use crate::filter::{encode_contact_request, encode_signature_request};
use crate::model::{
    ClientId, EndpointId, Packet, PacketKind, ServiceCategory, Signature, SourceAddr, TransferSpec,
};
use crate::netsim::server::{DatagramBody, ServerReply};
use crate::netsim::{AttackerModel, MutationTarget, ALL_MUTATION_TARGETS};
use crate::wire::{self, ControlReply, ControlRequest, PlanGrant};
use crate::Tick;

/// Attribution class for every injected datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorClass {
    Honest,
    Wave,
    Attacker(AttackerModel),
}

impl ActorClass {
    pub fn is_attacker(&self) -> bool {
        matches!(self, ActorClass::Attacker(_))
    }
}

/// One datagram waiting in the server's intake queue.
pub struct QueuedDatagram {
    pub class: ActorClass,
    pub body: DatagramBody,
}

/// A data packet observed on the simulated wire, available to sniffing
/// attackers.
#[derive(Clone)]
pub struct CaptureEntry {
    pub endpoint: EndpointId,
    pub packet: Packet,
}

pub struct StepCtx<'a> {
    pub queue: &'a mut VecDeque<QueuedDatagram>,
    pub captures: &'a mut Vec<CaptureEntry>,
    pub endpoints: u16,
}

impl StepCtx<'_> {
    fn send_ca(&mut self, class: ActorClass, src: SourceAddr, raw: Vec<u8>) {
        self.queue.push_back(QueuedDatagram {
            class,
            body: DatagramBody::Ca { src, raw },
        });
    }

    fn send_acc(&mut self, class: ActorClass, endpoint: EndpointId, packet: Packet, capture: bool) {
        if capture && packet.clear_header.kind == PacketKind::Data {
            self.captures.push(CaptureEntry {
                endpoint,
                packet: packet.clone(),
            });
        }
        self.queue.push_back(QueuedDatagram {
            class,
            body: DatagramBody::Acc { endpoint, packet },
        });
    }
}

pub enum Actor {
    Client(HonestClient),
    Wave(AuthWave),
    Attacker(AttackerActor),
}

impl Actor {
    pub fn source(&self) -> Option<SourceAddr> {
        match self {
            Actor::Client(c) => Some(c.source),
            _ => None,
        }
    }

    pub fn step(&mut self, now: Tick, inbox: Vec<ServerReply>, ctx: &mut StepCtx<'_>) {
        match self {
            Actor::Client(c) => c.step(now, inbox, ctx),
            Actor::Wave(w) => w.step(now, ctx),
            Actor::Attacker(a) => a.step(now, ctx),
        }
    }
}

enum ClientPhase {
    Idle,
    AwaitKey,
    SubmitAt(Tick),
    AwaitGrant,
    AwaitPlan,
    Sending(SendState),
    AwaitRotate,
    Done,
}

struct SendState {
    grant: PlanGrant,
    content: Vec<u8>,
    next_idx: usize,
    /// Earliest tick the held-back final packet may leave.
    release_last_at: Tick,
}

/// Scripted honest client: authenticates once, then runs its transfers.
pub struct HonestClient {
    pub source: SourceAddr,
    pub signature: Signature,
    pub pki: MasterKey,
    transfer_size: u64,
    transfers_total: u32,
    category: ServiceCategory,
    packets_per_tick: u32,
    payload_cap: u32,
    marker: Option<Vec<u8>>,
    stall_last: Tick,
    rotate_between: bool,
    start: Tick,
    rng: ChaCha8Rng,
    phase: ClientPhase,
    master: Option<MasterKey>,
    client_id: Option<ClientId>,
    session_endpoint: Option<EndpointId>,
    ctrl_seq: u32,
    transfers_done: u32,
    pending_content: Option<Vec<u8>>,
    /// Deliverable content digests, for oracle checks.
    pub sent_digests: Vec<[u8; 32]>,
}

#[allow(clippy::too_many_arguments)]
impl HonestClient {
    pub fn new(
        source: SourceAddr,
        signature: Signature,
        pki: MasterKey,
        start: Tick,
        transfer_size: u64,
        transfers_total: u32,
        category: ServiceCategory,
        packets_per_tick: u32,
        payload_cap: u32,
        marker: Option<Vec<u8>>,
        stall_last: Tick,
        rotate_between: bool,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            source,
            signature,
            pki,
            transfer_size,
            transfers_total,
            category,
            packets_per_tick,
            payload_cap,
            marker,
            stall_last,
            rotate_between,
            start,
            rng,
            phase: ClientPhase::Idle,
            master: None,
            client_id: None,
            session_endpoint: None,
            ctrl_seq: 0,
            transfers_done: 0,
            pending_content: None,
            sent_digests: Vec::new(),
        }
    }

    fn make_content(&mut self) -> Vec<u8> {
        let mut content = alloc::vec![0u8; self.transfer_size as usize];
        self.rng.fill_bytes(&mut content);
        if let Some(marker) = &self.marker {
            if marker.len() <= content.len() {
                // Straddle the first fragment boundary when there is one.
                let cap = self.payload_cap as usize;
                let at = if content.len() > cap && marker.len() < cap {
                    cap - marker.len() / 2
                } else {
                    0
                };
                let at = at.min(content.len() - marker.len());
                content[at..at + marker.len()].copy_from_slice(marker);
            }
        }
        content
    }

    fn request_transfer(&mut self, ctx: &mut StepCtx<'_>) {
        let content = self.make_content();
        let digest = digest256(&content);
        let spec = TransferSpec {
            client: self.client_id.expect("authenticated"),
            total_size: self.transfer_size,
            name: alloc::format!("transfer-{}", self.transfers_done),
            content_digest: digest,
        };
        self.sent_digests.push(digest);
        let packet = wire::build_control_packet(
            self.master.as_ref().expect("authenticated"),
            self.source,
            self.session_endpoint.expect("granted"),
            self.ctrl_seq,
            &ControlRequest::Transfer {
                spec,
                category: self.category,
            },
        );
        ctx.send_acc(
            ActorClass::Honest,
            self.session_endpoint.unwrap(),
            packet,
            true,
        );
        self.pending_content = Some(content);
        self.phase = ClientPhase::AwaitPlan;
    }

    fn handle_inbox(&mut self, now: Tick, inbox: Vec<ServerReply>, ctx: &mut StepCtx<'_>) {
        for reply in inbox {
            match reply {
                ServerReply::PublicKey { retry_at, .. } => {
                    if matches!(self.phase, ClientPhase::AwaitKey) {
                        self.phase = ClientPhase::SubmitAt(retry_at.max(now));
                    }
                }
                ServerReply::RenewSignature => {
                    // Honest signatures are registered; nothing to renew.
                }
                ServerReply::MasterKeyGrant { sealed } => {
                    if matches!(self.phase, ClientPhase::AwaitGrant) {
                        if let Some((master, client, endpoint)) =
                            wire::open_master_grant(&self.pki, &sealed)
                        {
                            self.master = Some(master);
                            self.client_id = Some(client);
                            self.session_endpoint = Some(endpoint);
                            self.request_transfer(ctx);
                        }
                    }
                }
                ServerReply::Control { reply_seq, sealed } => {
                    if reply_seq != self.ctrl_seq + 1 {
                        continue;
                    }
                    let master = match &self.master {
                        Some(m) => m,
                        None => continue,
                    };
                    match wire::open_control_reply(master, reply_seq, &sealed) {
                        Some(ControlReply::PlanGrant(grant)) => {
                            if matches!(self.phase, ClientPhase::AwaitPlan) {
                                self.ctrl_seq += 2;
                                let content =
                                    self.pending_content.take().expect("content queued");
                                self.session_endpoint = Some(grant.next_endpoint);
                                self.phase = ClientPhase::Sending(SendState {
                                    grant,
                                    content,
                                    next_idx: 0,
                                    release_last_at: now + self.stall_last,
                                });
                            }
                        }
                        Some(ControlReply::NextEndpointGrant(endpoint)) => {
                            if matches!(self.phase, ClientPhase::AwaitRotate) {
                                self.ctrl_seq += 2;
                                self.session_endpoint = Some(endpoint);
                                self.request_transfer(ctx);
                            }
                        }
                        Some(ControlReply::Rejected(_)) => {
                            self.ctrl_seq += 2;
                            self.phase = ClientPhase::Done;
                        }
                        None => {}
                    }
                }
            }
        }
    }

    fn step(&mut self, now: Tick, inbox: Vec<ServerReply>, ctx: &mut StepCtx<'_>) {
        self.handle_inbox(now, inbox, ctx);
        enum Action {
            None,
            Contact,
            Submit,
        }
        let action = match &self.phase {
            ClientPhase::Idle if now >= self.start => Action::Contact,
            ClientPhase::SubmitAt(at) if now >= *at => Action::Submit,
            _ => Action::None,
        };
        match action {
            Action::Contact => {
                ctx.send_ca(ActorClass::Honest, self.source, encode_contact_request());
                self.phase = ClientPhase::AwaitKey;
            }
            Action::Submit => {
                ctx.send_ca(
                    ActorClass::Honest,
                    self.source,
                    encode_signature_request(&self.signature),
                );
                self.phase = ClientPhase::AwaitGrant;
            }
            Action::None => {}
        }
        if matches!(self.phase, ClientPhase::Sending(_)) {
            self.pump_packets(now, ctx);
        }
    }

    fn pump_packets(&mut self, now: Tick, ctx: &mut StepCtx<'_>) {
        let master = self.master.clone().expect("authenticated");
        let state = match &mut self.phase {
            ClientPhase::Sending(s) => s,
            _ => return,
        };
        let mut sent = 0;
        let mut offset: usize = state.grant.entries[..state.next_idx]
            .iter()
            .map(|e| e.payload_len as usize)
            .sum();
        while sent < self.packets_per_tick && state.next_idx < state.grant.entries.len() {
            let is_last = state.next_idx + 1 == state.grant.entries.len();
            if is_last && now < state.release_last_at {
                return;
            }
            let entry = &state.grant.entries[state.next_idx];
            let header = state.grant.header_for(entry, self.source);
            let payload = &state.content[offset..offset + entry.payload_len as usize];
            let packet = wire::build_data_packet(&master, header, &entry.stamp, payload);
            ctx.send_acc(ActorClass::Honest, entry.dest, packet, true);
            offset += entry.payload_len as usize;
            state.next_idx += 1;
            sent += 1;
        }
        if state.next_idx == state.grant.entries.len() {
            self.transfers_done += 1;
            if self.transfers_done >= self.transfers_total {
                self.phase = ClientPhase::Done;
            } else if self.rotate_between {
                let packet = wire::build_control_packet(
                    &master,
                    self.source,
                    self.session_endpoint.unwrap(),
                    self.ctrl_seq,
                    &ControlRequest::NextEndpoint,
                );
                ctx.send_acc(
                    ActorClass::Honest,
                    self.session_endpoint.unwrap(),
                    packet,
                    true,
                );
                self.phase = ClientPhase::AwaitRotate;
            } else {
                self.request_transfer(ctx);
            }
        }
    }
}

/// Bulk authentication load: fresh sources submitting pre-registered
/// signatures straight to the signature phase.
pub struct AuthWave {
    pub rate: u64,
    pub start: Tick,
    pub stop: Tick,
    credentials: Vec<(SourceAddr, Signature)>,
    next: usize,
}

impl AuthWave {
    pub fn new(rate: u64, start: Tick, stop: Tick, credentials: Vec<(SourceAddr, Signature)>) -> Self {
        Self {
            rate,
            start,
            stop,
            credentials,
            next: 0,
        }
    }

    fn step(&mut self, now: Tick, ctx: &mut StepCtx<'_>) {
        if now < self.start || now >= self.stop {
            return;
        }
        for _ in 0..self.rate {
            if self.next >= self.credentials.len() {
                return;
            }
            let (src, sig) = self.credentials[self.next];
            self.next += 1;
            ctx.send_ca(ActorClass::Wave, src, encode_signature_request(&sig));
        }
    }
}

/// One adversary instance.
pub struct AttackerActor {
    model: AttackerModel,
    rate: u64,
    start: Tick,
    stop: Tick,
    rng: ChaCha8Rng,
    source_base: u32,
    sources_used: u32,
    signature_pool: Vec<Signature>,
    targets: Vec<MutationTarget>,
}

/// Serial range for forged flood signatures; disjoint from registered
/// ranges so a forgery can never collide with a real credential.
pub const FLOOD_SERIAL_BASE: u64 = 1 << 48;

impl AttackerActor {
    pub fn new(
        model: AttackerModel,
        rate: u64,
        start: Tick,
        stop: Tick,
        source_base: u32,
        targets: Option<Vec<MutationTarget>>,
        mut rng: ChaCha8Rng,
    ) -> Self {
        // Format-valid but unregistered: correct checksums over serials in
        // the reserved forgery range.
        let signature_pool = (0..8)
            .map(|_| {
                Signature::new(
                    rng.next_u32() as u16,
                    FLOOD_SERIAL_BASE | u64::from(rng.next_u32()),
                )
            })
            .collect();
        Self {
            model,
            rate,
            start,
            stop,
            rng,
            source_base,
            sources_used: 0,
            signature_pool,
            targets: targets.unwrap_or_else(|| ALL_MUTATION_TARGETS.to_vec()),
        }
    }

    fn pick_capture<'c>(&mut self, captures: &'c [CaptureEntry]) -> Option<&'c CaptureEntry> {
        if captures.is_empty() {
            return None;
        }
        let idx = (self.rng.next_u64() % captures.len() as u64) as usize;
        Some(&captures[idx])
    }

    fn mutate(&mut self, entry: &CaptureEntry, target: MutationTarget, endpoints: u16) -> Packet {
        let mut packet = entry.packet.clone();
        let h = &mut packet.clear_header;
        match target {
            MutationTarget::PlanId => {
                h.plan_id = 0xffff_0000_0000_0000 | self.rng.next_u64() >> 16;
            }
            MutationTarget::Seq => {
                h.seq |= 0x8000_0000;
            }
            MutationTarget::PayloadLen => {
                h.payload_len ^= 1;
            }
            MutationTarget::Source => {
                h.source = SourceAddr(h.source.0 ^ (0xdead_0000 | (1 + self.rng.next_u32() % 0xffff)));
            }
            MutationTarget::Dest => {
                if endpoints > 1 {
                    let shift = 1 + (self.rng.next_u32() % (u32::from(endpoints) - 1)) as u16;
                    h.dest = EndpointId((h.dest.0 + shift) % endpoints);
                } else {
                    h.source = SourceAddr(h.source.0 ^ 1);
                }
            }
            MutationTarget::Kind => {
                h.kind = match h.kind {
                    PacketKind::Data => PacketKind::Control,
                    PacketKind::Control => PacketKind::Data,
                };
            }
            MutationTarget::BodyByte => {
                let len = packet.sealed_body.len();
                let at = (self.rng.next_u64() % len as u64) as usize;
                packet.sealed_body[at] ^= 1 + (self.rng.next_u32() % 255) as u8;
            }
        }
        packet
    }

    fn step(&mut self, now: Tick, ctx: &mut StepCtx<'_>) {
        if now < self.start || now >= self.stop {
            return;
        }
        let class = ActorClass::Attacker(self.model);
        for _ in 0..self.rate {
            match self.model {
                AttackerModel::FloodFixedSource => {
                    let sig = self.signature_pool
                        [(self.rng.next_u64() % self.signature_pool.len() as u64) as usize];
                    ctx.send_ca(
                        class,
                        SourceAddr(self.source_base),
                        encode_signature_request(&sig),
                    );
                }
                AttackerModel::FloodRotatingSource => {
                    let src = SourceAddr(self.source_base + self.sources_used);
                    self.sources_used += 1;
                    let sig = self.signature_pool
                        [(self.rng.next_u64() % self.signature_pool.len() as u64) as usize];
                    ctx.send_ca(class, src, encode_signature_request(&sig));
                }
                AttackerModel::Replayer => {
                    let endpoint =
                        EndpointId((self.rng.next_u64() % u64::from(ctx.endpoints)) as u16);
                    if let Some(entry) = self.pick_capture(ctx.captures) {
                        let packet = entry.packet.clone();
                        ctx.send_acc(class, endpoint, packet, false);
                    }
                }
                AttackerModel::Spoofer => {
                    let target = if self.rng.next_u32() & 1 == 0 {
                        MutationTarget::Source
                    } else {
                        MutationTarget::PayloadLen
                    };
                    if let Some(entry) = self.pick_capture(ctx.captures) {
                        let entry = entry.clone();
                        let packet = self.mutate(&entry, target, ctx.endpoints);
                        ctx.send_acc(class, entry.endpoint, packet, false);
                    }
                }
                AttackerModel::MaliciousMutator => {
                    let target =
                        self.targets[(self.rng.next_u64() % self.targets.len() as u64) as usize];
                    if let Some(entry) = self.pick_capture(ctx.captures) {
                        let entry = entry.clone();
                        let packet = self.mutate(&entry, target, ctx.endpoints);
                        ctx.send_acc(class, entry.endpoint, packet, false);
                    }
                }
            }
        }
    }
}

/// Class label used as a report key.
pub fn class_label(class: ActorClass) -> String {
    match class {
        ActorClass::Honest => String::from("honest"),
        ActorClass::Wave => String::from("auth_wave"),
        ActorClass::Attacker(model) => alloc::format!("attacker:{}", model.name()),
    }
}
