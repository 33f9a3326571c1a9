//! Endpoint assignment and expectation publishing. Every endpoint only
//! accepts traffic it was told to expect: a session expectation per
//! authenticated client for control exchanges, and one packet expectation
//! per designed packet. The director also keeps live load balanced across
//! endpoints and rotates each client's session endpoint on demand.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::model::{ClientId, EndpointId, PacketHeader, PacketKind, SourceAddr};
use crate::Tick;

/// What one endpoint has been told to accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expectation {
    pub endpoint: EndpointId,
    pub source: SourceAddr,
    pub client: ClientId,
    pub scope: Scope,
    pub expires_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Session,
    Packet { plan_id: u64, seq: u32 },
}

/// The client has no live session expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ExpKey {
    Session(ClientId),
    Packet(u64, u32),
}

/// Owns all expectations and the per-endpoint live-load table.
pub struct EndpointDirector {
    endpoint_count: u16,
    loads: Vec<u64>,
    sessions: BTreeMap<ClientId, Expectation>,
    session_by_source: BTreeMap<SourceAddr, ClientId>,
    packet_exps: BTreeMap<(u64, u32), Expectation>,
    client_packets: BTreeMap<ClientId, Vec<(u64, u32)>>,
    expiries: BinaryHeap<Reverse<(Tick, ExpKey)>>,
}

impl EndpointDirector {
    pub fn new(endpoint_count: u16) -> Self {
        assert!(endpoint_count >= 1, "need at least one endpoint");
        Self {
            endpoint_count,
            loads: alloc::vec![0; endpoint_count as usize],
            sessions: BTreeMap::new(),
            session_by_source: BTreeMap::new(),
            packet_exps: BTreeMap::new(),
            client_packets: BTreeMap::new(),
            expiries: BinaryHeap::new(),
        }
    }

    pub fn endpoint_count(&self) -> u16 {
        self.endpoint_count
    }

    /// Live expectation count per endpoint.
    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    /// Number of clients currently holding a session expectation. Callers
    /// should [`Self::prune`] at tick boundaries so this reflects expiry.
    pub fn live_sessions(&self) -> u64 {
        self.sessions.len() as u64
    }

    fn least_loaded(&self) -> EndpointId {
        let mut best = 0usize;
        for (idx, load) in self.loads.iter().enumerate().skip(1) {
            if *load < self.loads[best] {
                best = idx;
            }
        }
        EndpointId(best as u16)
    }

    /// Drops every expectation whose lifetime has ended.
    pub fn prune(&mut self, now: Tick) {
        while let Some(Reverse((at, key))) = self.expiries.peek().copied() {
            if at > now {
                break;
            }
            self.expiries.pop();
            match key {
                ExpKey::Session(client) => {
                    // Ignore stale heap entries from replaced sessions.
                    if self.sessions.get(&client).is_some_and(|e| e.expires_at <= now) {
                        let exp = self.sessions.remove(&client).unwrap();
                        self.session_by_source.remove(&exp.source);
                        self.loads[exp.endpoint.0 as usize] -= 1;
                    }
                }
                ExpKey::Packet(plan_id, seq) => {
                    if self
                        .packet_exps
                        .get(&(plan_id, seq))
                        .is_some_and(|e| e.expires_at <= now)
                    {
                        let exp = self.packet_exps.remove(&(plan_id, seq)).unwrap();
                        self.loads[exp.endpoint.0 as usize] -= 1;
                    }
                }
            }
        }
    }

    /// Picks the least-loaded endpoint (lowest index on ties) for a newly
    /// authenticated client and publishes its session expectation.
    pub fn register_client(
        &mut self,
        client: ClientId,
        src: SourceAddr,
        _now: Tick,
        expires_at: Tick,
    ) -> EndpointId {
        debug_assert!(!self.sessions.contains_key(&client));
        let endpoint = self.least_loaded();
        let exp = Expectation {
            endpoint,
            source: src,
            client,
            scope: Scope::Session,
            expires_at,
        };
        self.loads[endpoint.0 as usize] += 1;
        self.sessions.insert(client, exp);
        self.session_by_source.insert(src, client);
        self.expiries.push(Reverse((expires_at, ExpKey::Session(client))));
        endpoint
    }

    /// Publishes the packet expectation for one designed packet and
    /// returns the endpoint that must receive it. The expectation lives as
    /// long as the client's session.
    pub fn assign_endpoint(
        &mut self,
        plan_id: u64,
        seq: u32,
        src: SourceAddr,
        client: ClientId,
        _now: Tick,
    ) -> Result<EndpointId, UnknownClient> {
        let session = self.sessions.get(&client).ok_or(UnknownClient)?;
        let expires_at = session.expires_at;
        let endpoint = self.least_loaded();
        let exp = Expectation {
            endpoint,
            source: src,
            client,
            scope: Scope::Packet { plan_id, seq },
            expires_at,
        };
        self.loads[endpoint.0 as usize] += 1;
        self.packet_exps.insert((plan_id, seq), exp);
        self.client_packets.entry(client).or_default().push((plan_id, seq));
        self.expiries.push(Reverse((expires_at, ExpKey::Packet(plan_id, seq))));
        Ok(endpoint)
    }

    /// Replaces the client's session expectation with a fresh one on the
    /// currently least-loaded endpoint and returns it. Traffic at the old
    /// endpoint stops matching immediately.
    pub fn next_endpoint(&mut self, client: ClientId, _now: Tick) -> Result<EndpointId, UnknownClient> {
        let old = self.sessions.get(&client).copied().ok_or(UnknownClient)?;
        self.loads[old.endpoint.0 as usize] -= 1;
        let endpoint = self.least_loaded();
        self.loads[endpoint.0 as usize] += 1;
        // Expiry is unchanged, so the original heap entry still covers it.
        self.sessions.insert(
            client,
            Expectation {
                endpoint,
                ..old
            },
        );
        Ok(endpoint)
    }

    /// Header-level acceptance test for a datagram arriving at `endpoint`
    /// from `src`. Control packets must match the source's live session
    /// expectation; data packets must match the packet expectation for
    /// their (plan, seq) at this exact endpoint. A data packet's claimed
    /// source is deliberately not checked here: the clear header is
    /// unauthenticated, so source integrity is enforced against the sealed
    /// inner header after decryption.
    pub fn is_expected(
        &self,
        endpoint: EndpointId,
        src: SourceAddr,
        header: &PacketHeader,
        now: Tick,
    ) -> bool {
        if header.dest != endpoint {
            return false;
        }
        match header.kind {
            PacketKind::Control => self
                .session_by_source
                .get(&src)
                .and_then(|client| self.sessions.get(client))
                .is_some_and(|exp| exp.endpoint == endpoint && now < exp.expires_at),
            PacketKind::Data => self
                .packet_exps
                .get(&(header.plan_id, header.seq))
                .is_some_and(|exp| exp.endpoint == endpoint && now < exp.expires_at),
        }
    }

    pub fn session_endpoint(&self, client: ClientId) -> Option<EndpointId> {
        self.sessions.get(&client).map(|e| e.endpoint)
    }

    pub fn session_client(&self, src: SourceAddr) -> Option<ClientId> {
        self.session_by_source.get(&src).copied()
    }

    pub fn packet_expectation(&self, plan_id: u64, seq: u32) -> Option<&Expectation> {
        self.packet_exps.get(&(plan_id, seq))
    }

    /// Withdraws every expectation for `client` (session terminated).
    pub fn revoke_client(&mut self, client: ClientId) {
        if let Some(exp) = self.sessions.remove(&client) {
            self.session_by_source.remove(&exp.source);
            self.loads[exp.endpoint.0 as usize] -= 1;
        }
        for key in self.client_packets.remove(&client).unwrap_or_default() {
            if let Some(exp) = self.packet_exps.remove(&key) {
                self.loads[exp.endpoint.0 as usize] -= 1;
            }
        }
    }
}
