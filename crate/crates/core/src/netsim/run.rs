//! Deterministic event loop. Each tick: prune expirations, deliver the
//! previous tick's replies, let every actor inject in listed order, then
//! serve the FIFO intake queue until the next datagram would not fit the
//! remaining process-unit budget. Identical scenarios and seeds produce
//! byte-identical reports.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::crypto::MasterKey;
use crate::model::{ServiceSet, Signature, SourceAddr};
use crate::netsim::actors::{
    class_label, Actor, ActorClass, AttackerActor, AuthWave, CaptureEntry, HonestClient,
    QueuedDatagram, StepCtx,
};
use crate::netsim::report::{
    DeliveryRow, ModelStats, OutcomeCounts, SimEvent, SimReport, TickRow, TrafficStats,
    UnitTotals, EVENT_LOG_CAP,
};
use crate::netsim::server::{Server, ServerReply};
use crate::netsim::{decode_hex, ConfigError, Scenario};
use crate::ticket::{ServicePolicy, SignatureRegistry};
use crate::Units;

/// Why a run could not produce a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    Config(ConfigError),
    /// A run-time self-check failed; the report would be untrustworthy.
    Invariant(String),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::Config(e) => write!(f, "invalid scenario: {e}"),
            SimError::Invariant(msg) => write!(f, "invariant violated: {msg}"),
        }
    }
}

const HONEST_SOURCE_BASE: u32 = 0x0a00_0000;
const WAVE_SOURCE_BASE: u32 = 0x0b00_0000;
const ATTACKER_SOURCE_BASE: u32 = 0x0c00_0000;
/// Registered serials: honest clients count up from 1, waves from here.
const WAVE_SERIAL_BASE: u64 = 1_000_000;

/// Executes a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate().map_err(SimError::Config)?;

    let mut master_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let server_rng = ChaCha8Rng::seed_from_u64(master_rng.next_u64());

    let mut registry = SignatureRegistry::new();
    let mut policy = ServicePolicy::new(scenario.engine.ticket_lifetime);
    for (issuer, services) in &scenario.policy {
        policy.set_issuer(*issuer, services.iter().copied().collect::<ServiceSet>());
    }
    for entry in &scenario.extra_signatures {
        registry.register(Signature::new(entry.issuer, entry.serial));
    }

    // Actors in declaration order: honest clients, waves, attackers.
    let mut actors: Vec<Actor> = Vec::new();
    let mut next_honest_serial: u64 = 1;
    let mut next_honest_source: u32 = HONEST_SOURCE_BASE;
    let mut pki_keys: Vec<(SourceAddr, MasterKey)> = Vec::new();
    for spec in &scenario.honest_clients {
        let marker = spec
            .content_marker_hex
            .as_ref()
            .map(|m| decode_hex(m).expect("validated hex"));
        for idx in 0..spec.count {
            let source = SourceAddr(next_honest_source);
            next_honest_source += 1;
            let signature = Signature::new(spec.issuer, next_honest_serial);
            next_honest_serial += 1;
            registry.register(signature);
            let mut seed_rng = ChaCha8Rng::seed_from_u64(master_rng.next_u64());
            let pki = MasterKey::random(&mut seed_rng);
            pki_keys.push((source, pki.clone()));
            actors.push(Actor::Client(HonestClient::new(
                source,
                signature,
                pki,
                spec.first_start + spec.stagger * u64::from(idx),
                spec.transfer_size,
                spec.transfers_per_client,
                spec.category,
                spec.packets_per_tick,
                scenario.engine.payload_cap,
                marker.clone(),
                spec.stall_last_packet,
                spec.rotate_between_transfers,
                seed_rng,
            )));
        }
    }
    let mut next_wave_source: u32 = WAVE_SOURCE_BASE;
    let mut next_wave_serial: u64 = WAVE_SERIAL_BASE;
    for spec in &scenario.auth_waves {
        let volume = spec.rate * (spec.stop - spec.start);
        let mut credentials = Vec::with_capacity(volume as usize);
        for _ in 0..volume {
            let source = SourceAddr(next_wave_source);
            next_wave_source += 1;
            let signature = Signature::new(spec.issuer, next_wave_serial);
            next_wave_serial += 1;
            registry.register(signature);
            credentials.push((source, signature));
        }
        actors.push(Actor::Wave(AuthWave::new(
            spec.rate,
            spec.start,
            spec.stop,
            credentials,
        )));
    }
    let mut next_attacker_base: u32 = ATTACKER_SOURCE_BASE;
    for spec in &scenario.attackers {
        let rng = ChaCha8Rng::seed_from_u64(master_rng.next_u64());
        actors.push(Actor::Attacker(AttackerActor::new(
            spec.model,
            spec.rate,
            spec.start,
            spec.stop,
            next_attacker_base,
            spec.mutation_targets.clone(),
            rng,
        )));
        next_attacker_base += 0x0001_0000;
    }

    let mut server = Server::new(scenario, registry, policy, server_rng);
    for (source, pki) in pki_keys {
        server.register_pki(source, pki);
    }

    let mut queue: VecDeque<QueuedDatagram> = VecDeque::new();
    let mut captures: Vec<CaptureEntry> = Vec::new();
    let mut mailboxes: BTreeMap<SourceAddr, Vec<ServerReply>> = BTreeMap::new();
    let mut outbox: Vec<(SourceAddr, ServerReply)> = Vec::new();

    let mut counts = OutcomeCounts::default();
    let mut units = UnitTotals::default();
    let mut traffic = TrafficStats::default();
    let mut models: BTreeMap<String, ModelStats> = BTreeMap::new();
    let mut per_tick = Vec::with_capacity(scenario.duration as usize);
    let mut block_samples = Vec::new();
    let mut deliveries: Vec<DeliveryRow> = Vec::new();
    let mut events: Vec<SimEvent> = Vec::new();
    let mut events_dropped: u64 = 0;
    let mut injected_total: u64 = 0;
    let mut processed_total: u64 = 0;

    for now in 0..scenario.duration {
        server.director.prune(now);
        for (src, reply) in outbox.drain(..) {
            mailboxes.entry(src).or_default().push(reply);
        }

        let before = queue.len();
        {
            let mut ctx = StepCtx {
                queue: &mut queue,
                captures: &mut captures,
                endpoints: scenario.endpoints,
            };
            for actor in actors.iter_mut() {
                let inbox = actor
                    .source()
                    .and_then(|src| mailboxes.remove(&src))
                    .unwrap_or_default();
                actor.step(now, inbox, &mut ctx);
            }
        }
        let injected_this_tick = (queue.len() - before) as u64;
        injected_total += injected_this_tick;

        let mut used: Units = 0;
        let mut processed_this_tick: u64 = 0;
        let mut ca_served_this_tick: u64 = 0;
        while let Some(head) = queue.front() {
            let (verdict, cost) = server.assess(&head.body, now);
            if used + cost > scenario.units_per_tick {
                break;
            }
            let datagram = queue.pop_front().expect("peeked head");
            let out = server.commit(&datagram.body, verdict, now);
            used += cost;
            processed_this_tick += 1;
            processed_total += 1;

            counts.record(out.disposition);
            units.total += cost;
            let attacker = datagram.class.is_attacker();
            if attacker {
                units.attacker += cost;
                traffic.attacker_requests += 1;
            } else {
                units.honest += cost;
                traffic.honest_requests += 1;
            }
            if matches!(
                out.disposition,
                crate::netsim::report::Disposition::CaAuthIssued
                    | crate::netsim::report::Disposition::CaAuthInvalid
            ) {
                ca_served_this_tick += 1;
            }
            if let Some(passed) = out.acc_passed_header {
                if attacker {
                    traffic.attacker_acc_processed += 1;
                    if passed {
                        traffic.attacker_acc_passed_header += 1;
                        traffic.attacker_acc_passed_units += cost;
                    } else {
                        traffic.attacker_acc_failed_header += 1;
                    }
                }
            }
            if let ActorClass::Attacker(model) = datagram.class {
                let stats = models.entry(class_label(datagram.class)).or_default();
                stats.processed += 1;
                stats.units_total += cost;
                if out.acc_passed_header == Some(true) {
                    stats.passed_header += 1;
                    stats.units_passed += cost;
                }
                let _ = model;
            }
            if let Some(sample) = out.block_sample {
                if block_samples.len() < 1024 {
                    block_samples.push(sample);
                }
            }
            for event in out.events {
                if events.len() < EVENT_LOG_CAP {
                    events.push(event);
                } else {
                    events_dropped += 1;
                }
            }
            if let Some(delivery) = out.delivery {
                deliveries.push(DeliveryRow {
                    tick: now,
                    plan_id: delivery.plan_id,
                    client: delivery.client.0,
                    size: delivery.size,
                    digest_hex: hex::encode(delivery.digest),
                    digest_matches: delivery.digest_matches,
                });
            }
            for reply in out.replies {
                outbox.push(reply);
            }
        }
        debug_assert!(used <= scenario.units_per_tick);
        per_tick.push(TickRow {
            tick: now,
            injected: injected_this_tick,
            processed: processed_this_tick,
            ca_served: ca_served_this_tick,
            units_used: used,
            queue_depth: queue.len() as u64,
        });
    }

    let report = SimReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        endpoints: scenario.endpoints,
        units_per_tick: scenario.units_per_tick,
        duration: scenario.duration,
        processes_per_request: scenario.costs.processes_per_request(),
        fixed_block_ticks: scenario.engine.fixed_block_ticks,
        expected_packet_cost: scenario.costs.expected_packet_cost(),
        full_check_cost: scenario.costs.stamp_check,
        drop_cost: scenario.costs.drop,
        injected: injected_total,
        processed: processed_total,
        queued_at_end: queue.len() as u64,
        gateway_header_rejects: server.gateway.stats.header_rejects,
        gateway_open_attempts: server.gateway.stats.open_attempts,
        siv_validate_calls: server.tickets.registry.validate_calls(),
        counts,
        units,
        traffic,
        models,
        per_tick,
        block_samples,
        deliveries,
        events,
        events_dropped,
    };
    check_report(&report)?;
    Ok(report)
}

/// Post-run self-checks; a violation means the report cannot be trusted.
fn check_report(report: &SimReport) -> Result<(), SimError> {
    if report.counts.total() != report.processed {
        return Err(SimError::Invariant(String::from(
            "outcome counters disagree with processed datagrams",
        )));
    }
    if report.processed + report.queued_at_end != report.injected {
        return Err(SimError::Invariant(String::from(
            "injected datagrams neither processed nor queued",
        )));
    }
    if report.units.honest + report.units.attacker != report.units.total {
        return Err(SimError::Invariant(String::from(
            "unit attribution does not add up",
        )));
    }
    if report
        .per_tick
        .iter()
        .any(|row| row.units_used > report.units_per_tick)
    {
        return Err(SimError::Invariant(String::from(
            "a tick exceeded the process-unit budget",
        )));
    }
    Ok(())
}
