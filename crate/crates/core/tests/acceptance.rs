//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`). Tolerances are pinned in the
//! assertions; statistical checks use exact binomial 3-sigma bands over
//! fixed seeds, so outcomes are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use stampgate_core::filter::{block_duration, BlackSignatureList};
use stampgate_core::metrics;
use stampgate_core::model::{
    EndpointId, PacketHeader, PacketKind, ServiceCategory, Signature, SourceAddr,
};
use stampgate_core::netsim::{
    run, AttackerModel, AttackerSpec, AuthWaveSpec, CostTable, EngineParams, HonestClientSpec,
    MutationTarget, Scenario, SimReport,
};
use stampgate_core::stamp::{FreshnessWindow, StampEngine, StampKey, VerifyOutcome};

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

fn policy() -> BTreeMap<u16, Vec<ServiceCategory>> {
    let mut policy = BTreeMap::new();
    policy.insert(
        1u16,
        vec![ServiceCategory::Message, ServiceCategory::FileUpload],
    );
    policy
}

fn scenario(name: &str, seed: u64) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed,
        endpoints: 4,
        units_per_tick: 1_000_000,
        duration: 40,
        costs: CostTable::default(),
        engine: EngineParams::default(),
        policy: policy(),
        scan_rules: Vec::new(),
        honest_clients: Vec::new(),
        auth_waves: Vec::new(),
        attackers: Vec::new(),
        extra_signatures: Vec::new(),
    }
}

fn client(size: u64, transfers: u32) -> HonestClientSpec {
    HonestClientSpec {
        count: 1,
        issuer: 1,
        first_start: 0,
        stagger: 0,
        transfers_per_client: transfers,
        transfer_size: size,
        category: ServiceCategory::FileUpload,
        packets_per_tick: 8,
        content_marker_hex: None,
        stall_last_packet: 0,
        rotate_between_transfers: false,
    }
}

fn attacker(model: AttackerModel, rate: u64, start: u64, stop: u64) -> AttackerSpec {
    AttackerSpec {
        model,
        rate,
        start,
        stop,
        mutation_targets: None,
    }
}

/// Stamp soundness and completeness: 10^4 honest stamps all verify, 10^4
/// adversarial mutations (every header field and every token byte hit)
/// never do. Must finish in under ten seconds.
#[test]
fn stamp_soundness_and_completeness() {
    let started = Instant::now();
    let mut engine = StampEngine::new(StampKey::from_bytes([9u8; 32]));
    let window = FreshnessWindow::new(500);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut honest_ok = 0u32;
    for trial in 0..10_000u64 {
        let h = PacketHeader {
            plan_id: rng.next_u64() >> 1,
            seq: rng.next_u32(),
            payload_len: rng.next_u32(),
            source: SourceAddr(rng.next_u32()),
            dest: EndpointId(rng.next_u32() as u16),
            kind: if rng.next_u32() & 1 == 0 {
                PacketKind::Data
            } else {
                PacketKind::Control
            },
        };
        let stamp = engine.issue_stamp(&h, trial);
        if engine.verify_stamp(&stamp, &h, trial, window) == VerifyOutcome::Ok {
            honest_ok += 1;
        }
    }
    assert_eq!(honest_ok, 10_000, "completeness: every honest stamp verifies");

    let mut adversarial_ok = 0u32;
    let mut byte_positions_hit = BTreeSet::new();
    for trial in 0..10_000u64 {
        let h = PacketHeader {
            plan_id: rng.next_u64() >> 1,
            seq: rng.next_u32() >> 1,
            payload_len: rng.next_u32() >> 1,
            source: SourceAddr(rng.next_u32()),
            dest: EndpointId(rng.next_u32() as u16 & 0x7fff),
            kind: PacketKind::Data,
        };
        let stamp = engine.issue_stamp(&h, trial);
        let verdict = match trial % 7 {
            0 => engine.verify_stamp(&stamp, &PacketHeader { plan_id: h.plan_id + 1, ..h }, trial, window),
            1 => engine.verify_stamp(&stamp, &PacketHeader { seq: h.seq + 1, ..h }, trial, window),
            2 => engine.verify_stamp(
                &stamp,
                &PacketHeader { payload_len: h.payload_len + 1, ..h },
                trial,
                window,
            ),
            3 => engine.verify_stamp(
                &stamp,
                &PacketHeader { source: SourceAddr(h.source.0 ^ 1), ..h },
                trial,
                window,
            ),
            4 => engine.verify_stamp(
                &stamp,
                &PacketHeader { dest: EndpointId(h.dest.0 + 1), ..h },
                trial,
                window,
            ),
            5 => engine.verify_stamp(
                &stamp,
                &PacketHeader { kind: PacketKind::Control, ..h },
                trial,
                window,
            ),
            _ => {
                let mut bad = stamp.clone();
                let at = ((trial / 7) % bad.0.len() as u64) as usize;
                byte_positions_hit.insert(at);
                bad.0[at] ^= 1 + (rng.next_u32() % 255) as u8;
                engine.verify_stamp(&bad, &h, trial, window)
            }
        };
        if verdict == VerifyOutcome::Ok {
            adversarial_ok += 1;
        }
    }
    assert_eq!(adversarial_ok, 0, "soundness: no mutation verifies");
    assert_eq!(byte_positions_hit.len(), 64, "every token byte targeted");
    assert!(started.elapsed().as_secs() < 10, "runtime bound");
    pass("stamp_soundness_and_completeness");
}

/// Replay defense: exact replays land as duplicates, a packet presented
/// after the freshness window goes stale, and delivered bytes equal the
/// no-attack oracle exactly once per transfer.
#[test]
fn replay_defense() {
    let mut attacked = scenario("replay-defense", 5);
    attacked.honest_clients.push(client(2500, 2));
    attacked
        .attackers
        .push(attacker(AttackerModel::Replayer, 100, 6, 36));
    let clean = Scenario {
        attackers: Vec::new(),
        ..attacked.clone()
    };
    let report = run(&attacked).unwrap();
    let oracle = run(&clean).unwrap();

    assert!(report.counts.acc_drop_duplicate > 0, "replays deduplicated");
    let digests: Vec<&str> = report.deliveries.iter().map(|d| d.digest_hex.as_str()).collect();
    let oracle_digests: Vec<&str> =
        oracle.deliveries.iter().map(|d| d.digest_hex.as_str()).collect();
    assert_eq!(digests, oracle_digests, "no duplicate or altered bytes delivered");
    let unique_plans: BTreeSet<u64> = report.deliveries.iter().map(|d| d.plan_id).collect();
    assert_eq!(unique_plans.len(), report.deliveries.len(), "one delivery per plan");
    assert!(report.deliveries.iter().all(|d| d.digest_matches));

    // Freshness: a final fragment held past the window is stale and kills
    // the session instead of delivering.
    let mut stale = scenario("replay-stale", 6);
    stale.duration = 560;
    stale.engine.stamp_max_age = 400;
    let mut spec = client(2500, 1);
    spec.stall_last_packet = 450;
    stale.honest_clients.push(spec);
    let stale_report = run(&stale).unwrap();
    assert_eq!(stale_report.counts.acc_drop_stamp_stale, 1);
    assert!(stale_report.deliveries.is_empty());
    pass("replay_defense");
}

/// Dynamic block window is exactly `ceil(t * c / n)` across a sweep of
/// more than a thousand cases including the idle and full-load edges.
#[test]
fn block_duration_exact_sweep() {
    let mut cases = 0u64;
    for t in [1u64, 7, 10, 13] {
        for n in [1u64, 3, 97, 100, 127] {
            for c in 0..=n {
                let expected = (u128::from(t) * u128::from(c)).div_ceil(u128::from(n)) as u64;
                assert_eq!(block_duration(t, c, n), Ok(expected), "t={t} c={c} n={n}");
                cases += 1;
            }
        }
    }
    // Edges explicitly: idle and full load.
    assert_eq!(block_duration(10, 0, 100), Ok(0));
    assert_eq!(block_duration(10, 100, 100), Ok(10));
    assert!(cases >= 1_000, "swept {cases} cases");
    pass("block_duration_exact_sweep");
}

/// Capacity saturation: with 1200 units per tick and 12 units per
/// request, exactly 100 requests are served each tick and the 101st
/// queues. Zero tolerance.
#[test]
fn capacity_saturation() {
    assert_eq!(metrics::capacity(1200, 12).unwrap(), 100);

    let mut sc = scenario("saturation", 3);
    sc.units_per_tick = 1200;
    sc.duration = 20;
    sc.costs.header_inspect = 2; // request cost = 2 + 10 = 12
    sc.auth_waves.push(AuthWaveSpec {
        rate: 101,
        start: 0,
        stop: 20,
        issuer: 1,
    });
    let report = run(&sc).unwrap();
    assert_eq!(report.processes_per_request, 12);
    for row in &report.per_tick {
        assert_eq!(row.ca_served, 100, "tick {} serves exactly capacity", row.tick);
        assert_eq!(row.units_used, 1200);
        assert_eq!(row.queue_depth, row.tick + 1, "one request queues per tick");
    }
    assert_eq!(report.counts.ca_auth_issued, 100 * 20);
    pass("capacity_saturation");
}

fn replay_scaling_scenario(endpoints: u16, seed: u64) -> Scenario {
    let mut sc = scenario("endpoint-scaling", seed);
    sc.endpoints = endpoints;
    sc.duration = 32;
    sc.engine.payload_cap = 512;
    let mut spec = client(4096, 1); // 8 data packets captured
    spec.packets_per_tick = 8;
    sc.honest_clients.push(spec);
    sc.attackers
        .push(attacker(AttackerModel::Replayer, 50, 10, 30)); // 1000 replays
    sc
}

/// Endpoint scaling: across I in {1,2,4,8} and 20 seeds each, the
/// fraction of replays passing the header check sits within 3 sigma of
/// 1/I, attacker units past the header sit within 3 sigma of the
/// per-packet-cost prediction, and the mean is monotone non-increasing
/// in I. Must finish in under sixty seconds.
#[test]
fn endpoint_scaling_matches_prediction() {
    let started = Instant::now();
    let expected_cost = CostTable::default().expected_packet_cost() as f64; // 5
    let mut means = Vec::new();
    for endpoints in [1u16, 2, 4, 8] {
        let mut passed_units_sum = 0f64;
        for seed in 0..20u64 {
            let sc = replay_scaling_scenario(endpoints, 100 + seed);
            let report = run(&sc).unwrap();
            let t = &report.traffic;
            assert_eq!(t.attacker_acc_processed, 1000, "all replays handled");

            let p = 1.0 / f64::from(endpoints);
            let n = t.attacker_acc_processed as f64;
            let sigma_count = (n * p * (1.0 - p)).sqrt();

            // Header-pass fraction within 3 sigma of 1/I.
            let passed = t.attacker_acc_passed_header as f64;
            assert!(
                (passed - n * p).abs() <= 3.0 * sigma_count + 1e-9,
                "I={endpoints} seed={seed}: {passed} passes vs mean {}",
                n * p
            );

            // Units past the header within 3 sigma of the prediction.
            let params = metrics::params_from_report(&report);
            let prediction = metrics::predict_flood_time(&params).unwrap();
            let predicted =
                *prediction.attacker_request_time.numer() as f64
                    / *prediction.attacker_request_time.denom() as f64;
            let measured = t.attacker_acc_passed_units as f64;
            assert!(
                (measured - predicted).abs() <= 3.0 * sigma_count * expected_cost + 1e-9,
                "I={endpoints} seed={seed}: {measured} units vs predicted {predicted}"
            );
            passed_units_sum += measured;

            // The comparator agrees with both statistical rows.
            let table = metrics::compare(&report, &params).unwrap();
            assert!(table.row("expected_fraction").unwrap().within_tolerance);
            assert!(table.row("attacker_expected_units").unwrap().within_tolerance);
        }
        means.push(passed_units_sum / 20.0);
    }
    for pair in means.windows(2) {
        assert!(
            pair[1] <= pair[0],
            "attacker processing must not grow with more endpoints: {means:?}"
        );
    }
    assert!(started.elapsed().as_secs() < 60, "runtime bound");
    pass("endpoint_scaling_matches_prediction");
}

/// Header-drop savings: paired runs over the same 1000 malicious packets
/// differ by exactly n * (t_c - t_d) = 4000 attacker units, and the
/// closed form returns exactly 4000.
#[test]
fn full_check_savings_paired_runs() {
    let closed_form = metrics::predict_stamp_savings(1000, 5, 1);
    assert_eq!(closed_form.saved_units, 4000);

    let mut header_drop = scenario("savings", 9);
    header_drop.honest_clients.push(client(2048, 1));
    header_drop.attackers.push(AttackerSpec {
        model: AttackerModel::MaliciousMutator,
        rate: 50,
        start: 10,
        stop: 30,
        mutation_targets: Some(vec![MutationTarget::PlanId]),
    });
    let mut full_check = header_drop.clone();
    full_check.engine.force_full_check = true;

    let cheap = run(&header_drop).unwrap();
    let costly = run(&full_check).unwrap();
    assert_eq!(cheap.traffic.attacker_acc_failed_header, 1000);
    assert_eq!(costly.traffic.attacker_acc_failed_header, 1000);
    assert_eq!(cheap.units.attacker, 1000); // t_d each
    assert_eq!(costly.units.attacker, 5000); // t_c each
    assert_eq!(
        costly.units.attacker - cheap.units.attacker,
        closed_form.saved_units as u64
    );
    // Honest traffic is identical across the pair.
    assert_eq!(cheap.units.honest, costly.units.honest);
    pass("full_check_savings_paired_runs");
}

/// Black list: order always equals a stable sort by count descending,
/// the canonical three-entry ordering reproduces, and a probe never
/// costs more than the check depth.
#[test]
fn blacklist_order_and_probe_cost() {
    // Canonical ordering by observed frequency.
    let mut list = BlackSignatureList::new(64);
    let hot = Signature::new(0, 5);
    let warm = Signature::new(0, 101);
    let cool = Signature::new(0, 6);
    for _ in 0..456 {
        list.insert(hot);
    }
    for _ in 0..430 {
        list.insert(warm);
    }
    for _ in 0..399 {
        list.insert(cool);
    }
    assert_eq!(
        list.snapshot(),
        vec![(hot, 456), (warm, 430), (cool, 399)]
    );

    // Random operation stream against a stable-sort oracle.
    let mut list = BlackSignatureList::new(16);
    let mut oracle: Vec<(Signature, u64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let sig = Signature::new(1, u64::from(rng.next_u32() % 200));
        list.insert(sig);
        match oracle.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, c)) => *c += 1,
            None => oracle.push((sig, 1)),
        }
        // Stable sort of first-insertion order by count descending.
        let mut expected = oracle.clone();
        expected.sort_by(|a, b| b.1.cmp(&a.1));
        assert_eq!(list.snapshot(), expected);
    }

    // Probe cost is bounded by the check depth however long the list is.
    let probes_before = list.probe_comparisons();
    let (hit, comparisons) = list.probe_top(&Signature::new(2, 1));
    assert_eq!(hit, None);
    assert!(comparisons <= 16);
    assert_eq!(list.probe_comparisons(), probes_before, "probe itself is read-only");
    pass("blacklist_order_and_probe_cost");
}

/// Gateway cost discipline: unexpected datagrams cost exactly the header
/// drop (strictly less than any forwarded datagram) and are never opened.
#[test]
fn gateway_cost_discipline() {
    let mut sc = replay_scaling_scenario(2, 77);
    sc.attackers
        .push(attacker(AttackerModel::Spoofer, 20, 10, 30));
    sc.attackers
        .push(attacker(AttackerModel::MaliciousMutator, 20, 10, 30));
    let report = run(&sc).unwrap();
    let costs = CostTable::default();

    // No datagram failing the header check is ever opened.
    assert_eq!(report.gateway_header_rejects, report.counts.acc_drop_unexpected);
    assert_eq!(
        report.gateway_open_attempts,
        report.counts.acc_total() - report.counts.acc_drop_unexpected
    );

    // Unexpected datagrams cost exactly the drop; forwarded ones cost the
    // full open-plus-check path.
    let drop_cost = costs.drop;
    let forwarded_cost = costs.header_inspect + costs.open_body + costs.stamp_check;
    assert!(drop_cost < forwarded_cost);
    // Attacker unit totals decompose exactly into cheap and opened paths.
    let t = &report.traffic;
    let failed_units = t.attacker_acc_failed_header * drop_cost;
    assert_eq!(
        report.units.attacker,
        failed_units + t.attacker_acc_passed_units
    );
    pass("gateway_cost_discipline");
}

/// End-to-end integrity: a 2500-byte transfer under concurrent spoofing,
/// replay, and mutation pressure delivers exactly once with the declared
/// digest, across 20 seeds.
#[test]
fn end_to_end_integrity_under_attack() {
    for seed in 0..20u64 {
        let mut sc = scenario("integrity", 1000 + seed);
        sc.duration = 60;
        sc.honest_clients.push(client(2500, 1));
        sc.attackers.push(attacker(AttackerModel::Spoofer, 40, 6, 56));
        sc.attackers.push(attacker(AttackerModel::Replayer, 40, 6, 56));
        sc.attackers
            .push(attacker(AttackerModel::MaliciousMutator, 40, 6, 56));
        let clean = Scenario {
            attackers: Vec::new(),
            ..sc.clone()
        };
        let report = run(&sc).unwrap();
        let oracle = run(&clean).unwrap();
        assert_eq!(report.deliveries.len(), 1, "seed {seed}: exactly one delivery");
        assert!(report.deliveries[0].digest_matches, "seed {seed}");
        assert_eq!(
            report.deliveries[0].digest_hex, oracle.deliveries[0].digest_hex,
            "seed {seed}: bytes identical to the no-attack oracle"
        );
        assert_eq!(report.deliveries[0].size, 2500);
    }
    pass("end_to_end_integrity_under_attack");
}

/// Determinism: identical scenario and seed give byte-identical reports.
#[test]
fn deterministic_reports() {
    let mut sc = scenario("determinism", 21);
    sc.honest_clients.push(client(2500, 2));
    sc.attackers.push(attacker(AttackerModel::Replayer, 30, 6, 36));
    sc.attackers.push(attacker(AttackerModel::Spoofer, 30, 6, 36));
    let a = serde_json::to_vec(&run(&sc).unwrap()).unwrap();
    let b = serde_json::to_vec(&run(&sc).unwrap()).unwrap();
    assert_eq!(a, b);
    pass("deterministic_reports");
}

/// The comparator's exact rows hold on any report.
#[test]
fn comparison_identities_hold() {
    let mut sc = replay_scaling_scenario(4, 55);
    sc.auth_waves.push(AuthWaveSpec {
        rate: 20,
        start: 0,
        stop: 5,
        issuer: 1,
    });
    let report = run(&sc).unwrap();
    let params = metrics::params_from_report(&report);
    let table = metrics::compare(&report, &params).unwrap();
    for metric in [
        "capacity_per_tick",
        "block_duration_mismatches",
        "request_split_identity",
        "unit_split_identity",
        "full_check_savings",
    ] {
        assert!(
            table.row(metric).unwrap().within_tolerance,
            "row {metric} out of tolerance"
        );
    }
    let _ = report_eq5_identity(&report);
    pass("comparison_identities_hold");
}

/// Unit conservation identity on measured counters.
fn report_eq5_identity(report: &SimReport) -> bool {
    report.units.total == report.units.honest + report.units.attacker
}
