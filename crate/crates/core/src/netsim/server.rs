//! The system under test: every engine composed behind one intake.
//! Datagrams are first assessed read-only (yielding a disposition and an
//! exact process-unit cost) and committed only if they fit the remaining
//! tick budget.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use crate::assembly::{AssemblyChecker, ScanRule, ScanRuleSet};
use crate::crypto::{digest256, MasterKey};
use crate::director::EndpointDirector;
use crate::filter::{
    FilterCosts, FilterEngine, FilterOutcome, LoadSample, RequestDecision,
};
use crate::gateway::{AccGateway, AccVerdict, EngineMut, EngineView, GatewayCosts, GatewayOutcome};
use crate::model::{EndpointId, Packet, SourceAddr};
use crate::netsim::report::{BlockSample, Disposition, SimEvent};
use crate::netsim::{CostTable, EngineParams, Scenario};
use crate::packets::PacketManager;
use crate::stamp::{FreshnessWindow, StampEngine, StampKey};
use crate::ticket::{AuthOutcome, ServicePolicy, SignatureRegistry, TicketEngine};
use crate::{Tick, Units};

/// Messages queued back to clients.
#[derive(Debug, Clone)]
pub enum ServerReply {
    /// Public key token plus the tick at which the source's block window
    /// opens again.
    PublicKey { token: [u8; 32], retry_at: Tick },
    /// The submitted signature was rejected; renew it.
    RenewSignature,
    /// Sealed master key, client id, and first endpoint.
    MasterKeyGrant { sealed: Vec<u8> },
    /// Sealed control reply on the given odd sequence.
    Control { reply_seq: u32, sealed: Vec<u8> },
}

/// One queued datagram, tagged with its origin for attribution.
#[derive(Debug, Clone)]
pub enum DatagramBody {
    Ca { src: SourceAddr, raw: Vec<u8> },
    Acc { endpoint: EndpointId, packet: Packet },
}

/// What the server decided about a datagram before committing anything.
pub enum ServerVerdict {
    Ca(RequestDecision),
    Acc(AccVerdict),
}

/// Side effects of committing one datagram.
pub struct CommitOut {
    pub disposition: Disposition,
    pub replies: Vec<(SourceAddr, ServerReply)>,
    pub events: Vec<SimEvent>,
    pub delivery: Option<crate::gateway::DeliveryRecord>,
    pub block_sample: Option<BlockSample>,
    /// For authenticated-channel datagrams: whether the header check
    /// passed.
    pub acc_passed_header: Option<bool>,
}

pub struct Server {
    pub filter: FilterEngine,
    pub tickets: TicketEngine,
    pub stamps: StampEngine,
    pub packets: PacketManager,
    pub director: EndpointDirector,
    pub assembly: AssemblyChecker,
    pub gateway: AccGateway,
    pub rules: ScanRuleSet,
    pub costs: CostTable,
    pub window: FreshnessWindow,
    pub force_full_check: bool,
    /// floor(units_per_tick / nominal request cost); the `n` of the
    /// dynamic block window.
    pub capacity: u64,
    pubkey_token: [u8; 32],
    pki: BTreeMap<SourceAddr, MasterKey>,
    rng: ChaCha8Rng,
}

impl Server {
    pub fn new(
        scenario: &Scenario,
        registry: SignatureRegistry,
        policy: ServicePolicy,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let engine: &EngineParams = &scenario.engine;
        let mut pubkey_token = [0u8; 32];
        rng.fill_bytes(&mut pubkey_token);
        let stamp_key = StampKey::random(&mut rng);
        let rules = ScanRuleSet::new(
            scenario
                .scan_rules
                .iter()
                .map(|r| ScanRule {
                    id: r.id.clone(),
                    pattern: super::decode_hex(&r.pattern_hex).expect("validated hex"),
                })
                .collect(),
        );
        Self {
            filter: FilterEngine::new(engine.fixed_block_ticks, engine.check_depth as usize),
            tickets: TicketEngine::new(registry, policy),
            stamps: StampEngine::new(stamp_key),
            packets: PacketManager::new(engine.payload_cap),
            director: EndpointDirector::new(scenario.endpoints),
            assembly: AssemblyChecker::new(),
            gateway: AccGateway::new(),
            rules,
            costs: scenario.costs,
            window: FreshnessWindow::new(engine.stamp_max_age),
            force_full_check: engine.force_full_check,
            capacity: (scenario.units_per_tick / scenario.costs.processes_per_request()).max(1),
            pubkey_token,
            pki: BTreeMap::new(),
            rng,
        }
    }

    /// Registers the key material under which master keys are sealed for
    /// a source (the simulated client-certificate directory).
    pub fn register_pki(&mut self, src: SourceAddr, key: MasterKey) {
        self.pki.insert(src, key);
    }

    fn filter_costs(&self) -> FilterCosts {
        FilterCosts {
            header_inspect: self.costs.header_inspect,
            drop: self.costs.drop,
            blacklist_probe: self.costs.blacklist_probe,
            siv_validate: self.costs.siv_validate,
        }
    }

    fn gateway_costs(&self) -> GatewayCosts {
        GatewayCosts {
            header_inspect: self.costs.header_inspect,
            open_body: self.costs.open_body,
            stamp_check: self.costs.stamp_check,
            drop: self.costs.drop,
            plan_packet: self.costs.plan_packet,
            scan_byte: self.costs.scan_byte,
        }
    }

    fn load(&self) -> LoadSample {
        LoadSample {
            served: self.director.live_sessions(),
            capacity: self.capacity,
        }
    }

    /// Read-only classification with its exact process-unit cost.
    pub fn assess(&self, body: &DatagramBody, now: Tick) -> (ServerVerdict, Units) {
        match body {
            DatagramBody::Ca { src, raw } => {
                let decision = self
                    .filter
                    .classify_request(raw, *src, now, self.load())
                    .expect("validated capacity is positive");
                let cost = FilterEngine::decision_cost(&decision, &self.filter_costs());
                (ServerVerdict::Ca(decision), cost)
            }
            DatagramBody::Acc { endpoint, packet } => {
                let view = EngineView {
                    packets: &self.packets,
                    stamps: &self.stamps,
                    director: &self.director,
                    assembly: &self.assembly,
                };
                let verdict = self
                    .gateway
                    .assess(&view, *endpoint, packet, now, self.window);
                let cost = verdict.cost(&self.gateway_costs(), self.force_full_check);
                (ServerVerdict::Acc(verdict), cost)
            }
        }
    }

    /// Applies a verdict. CA forwards run the full authentication path;
    /// authenticated-channel verdicts go through the gateway commit.
    pub fn commit(&mut self, body: &DatagramBody, verdict: ServerVerdict, now: Tick) -> CommitOut {
        match (body, verdict) {
            (DatagramBody::Ca { src, .. }, ServerVerdict::Ca(decision)) => {
                self.commit_ca(*src, decision, now)
            }
            (DatagramBody::Acc { .. }, ServerVerdict::Acc(acc)) => self.commit_acc(acc, now),
            _ => unreachable!("verdict paired with the datagram that produced it"),
        }
    }

    fn commit_ca(&mut self, src: SourceAddr, decision: RequestDecision, now: Tick) -> CommitOut {
        self.filter.commit_request(src, &decision);
        let block_sample = decision.arm_gate_until.map(|until| BlockSample {
            tick: now,
            served: decision.load.served,
            capacity: decision.load.capacity,
            duration: until - now,
        });
        let mut out = CommitOut {
            disposition: Disposition::CaDropMalformed,
            replies: Vec::new(),
            events: Vec::new(),
            delivery: None,
            block_sample,
            acc_passed_header: None,
        };
        match decision.outcome {
            FilterOutcome::DropMalformed => out.disposition = Disposition::CaDropMalformed,
            FilterOutcome::DropRateLimited => out.disposition = Disposition::CaDropRateLimited,
            FilterOutcome::DropBlacklisted(_) => out.disposition = Disposition::CaDropBlacklisted,
            FilterOutcome::DropAlreadyAuthenticated => {
                out.disposition = Disposition::CaDropAlreadyAuthenticated
            }
            FilterOutcome::ReplyPublicKey => {
                out.disposition = Disposition::CaReplyPublicKey;
                out.replies.push((
                    src,
                    ServerReply::PublicKey {
                        token: self.pubkey_token,
                        retry_at: decision.arm_gate_until.unwrap_or(now),
                    },
                ));
            }
            FilterOutcome::ForwardToTicketEngine(sig) => {
                match self.tickets.authenticate(&sig, src, now) {
                    AuthOutcome::Issued(ticket, client) => {
                        let master = MasterKey::random(&mut self.rng);
                        let endpoint =
                            self.director
                                .register_client(client, src, now, ticket.expires_at);
                        self.gateway
                            .open_session(client, src, master.clone(), ticket);
                        // Unknown requesters still get a well-formed grant;
                        // without the matching key it is just noise to them.
                        let pki = self
                            .pki
                            .get(&src)
                            .cloned()
                            .unwrap_or_else(|| MasterKey::from_bytes(digest256(&src.0.to_be_bytes())));
                        let sealed =
                            crate::wire::seal_master_grant(&pki, &master, client, endpoint);
                        let dispatch = self
                            .filter
                            .on_authenticated(src, sealed, endpoint, ticket.expires_at)
                            .expect("commit marked this source pending");
                        out.disposition = Disposition::CaAuthIssued;
                        out.replies.push((
                            src,
                            ServerReply::MasterKeyGrant {
                                sealed: dispatch.sealed_master,
                            },
                        ));
                        out.events.push(SimEvent::AuthIssued {
                            tick: now,
                            client: client.0,
                            source: src.0,
                        });
                    }
                    AuthOutcome::Invalid => {
                        self.filter.blacklist_insert(sig);
                        self.filter.on_auth_rejected(src);
                        out.disposition = Disposition::CaAuthInvalid;
                        out.replies.push((src, ServerReply::RenewSignature));
                        out.events.push(SimEvent::AuthRejected {
                            tick: now,
                            source: src.0,
                        });
                    }
                }
            }
        }
        out
    }

    fn commit_acc(&mut self, verdict: AccVerdict, now: Tick) -> CommitOut {
        let passed_header = verdict.opened();
        let muts = EngineMut {
            packets: &mut self.packets,
            stamps: &mut self.stamps,
            director: &mut self.director,
            assembly: &mut self.assembly,
            filter: &mut self.filter,
            rules: &self.rules,
        };
        let reception = self.gateway.commit(muts, verdict, now);
        let disposition = match reception.outcome {
            GatewayOutcome::DropUnexpected => Disposition::AccDropUnexpected,
            GatewayOutcome::DropGarbled => Disposition::AccDropGarbled,
            GatewayOutcome::DropSpoofed => Disposition::AccDropSpoofed,
            GatewayOutcome::DropDuplicate => Disposition::AccDropDuplicate,
            GatewayOutcome::DropUnknownPlan => Disposition::AccDropUnknownPlan,
            GatewayOutcome::DropStampGarbled => Disposition::AccDropStampGarbled,
            GatewayOutcome::DropStampStale => Disposition::AccDropStampStale,
            GatewayOutcome::DropStampMismatch => Disposition::AccDropStampMismatch,
            GatewayOutcome::Forwarded => Disposition::AccForwarded,
            GatewayOutcome::PlanDelivered => Disposition::AccPlanDelivered,
            GatewayOutcome::NextEndpointSent => Disposition::AccNextEndpointSent,
            GatewayOutcome::Rejected => Disposition::AccRejected,
        };
        let mut events = Vec::new();
        if let Some((plan_id, packets)) = reception.plan_created {
            events.push(SimEvent::PlanCreated {
                tick: now,
                client: reception.client.map(|c| c.0).unwrap_or_default(),
                plan_id,
                packets,
            });
        }
        if let Some(delivery) = &reception.delivery {
            events.push(SimEvent::TransferDelivered {
                tick: now,
                client: delivery.client.0,
                plan_id: delivery.plan_id,
                size: delivery.size,
            });
        }
        if let Some(threat) = &reception.threat {
            events.push(SimEvent::ThreatDropped {
                tick: now,
                client: threat.client.0,
                plan_id: threat.plan_id,
                rule: threat.rule.clone(),
            });
        }
        if let Some(client) = reception.terminated {
            let reason: String = match reception.outcome {
                GatewayOutcome::DropStampStale => "stale stamp".to_string(),
                GatewayOutcome::DropStampMismatch => "stamp mismatch".to_string(),
                GatewayOutcome::DropStampGarbled => "garbled stamp".to_string(),
                _ => "threat content".to_string(),
            };
            events.push(SimEvent::SessionTerminated {
                tick: now,
                client: client.0,
                reason,
            });
        }
        let replies = reception
            .reply
            .map(|r| {
                alloc::vec![(
                    r.to,
                    ServerReply::Control {
                        reply_seq: r.reply_seq,
                        sealed: r.sealed,
                    },
                )]
            })
            .unwrap_or_default();
        CommitOut {
            disposition,
            replies,
            events,
            delivery: reception.delivery,
            block_sample: None,
            acc_passed_header: Some(passed_header),
        }
    }
}
