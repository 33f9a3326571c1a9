//! Closed-form capacity and timing predictions, and a predicted-vs-
//! measured comparator over simulation reports. All arithmetic is exact
//! rational; statistical rows use squared-deviation binomial bands so no
//! floating point is needed.

use alloc::string::String;
use alloc::vec::Vec;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::netsim::SimReport;
use crate::Units;

/// Exact rational value used throughout the comparator.
pub type Rat = Ratio<i128>;

fn rat(n: i128, d: i128) -> Rat {
    Ratio::new(n, d)
}

fn rat_int(n: u64) -> Rat {
    Ratio::from_integer(n as i128)
}

/// A divisor that must be positive was zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivisorZero;

/// Clients serveable per tick: `floor(units_per_tick / processes_per_request)`.
pub fn capacity(units_per_tick: u64, processes_per_request: u64) -> Result<u64, DivisorZero> {
    if processes_per_request == 0 {
        return Err(DivisorZero);
    }
    Ok(units_per_tick / processes_per_request)
}

/// Symbols feeding the predictions: system capacity, measured request
/// splits, per-action costs, and attacker volumes.
#[derive(Debug, Clone)]
pub struct EfficiencyParams {
    /// Nominal process units consumed by one full client request.
    pub processes_per_request: u64,
    /// Process units the system can spend per tick.
    pub units_per_tick: u64,
    /// Fixed per-source block time before load scaling.
    pub fixed_block_ticks: u64,
    /// Endpoint count.
    pub endpoints: u64,
    /// Time per process unit (unitless scale factor).
    pub unit_time: u64,
    /// Requests handled for honest clients.
    pub honest_requests: u64,
    /// Requests handled for attackers.
    pub attacker_requests: u64,
    /// Average process units per honest request (exact ratio).
    pub avg_honest_processes: Rat,
    /// Average process units per attacker request (exact ratio).
    pub avg_attacker_processes: Rat,
    /// Attacker datagrams of the kind an endpoint could expect.
    pub attacker_expected_kind: u64,
    /// Process units spent on one expected attacker datagram.
    pub expected_packet_cost: Units,
    /// Malicious packets for the check-vs-drop comparison.
    pub malicious_count: u64,
    /// Cost of fully checking one malicious packet.
    pub full_check_cost: Units,
    /// Cost of dropping one malicious packet from its header.
    pub drop_cost: Units,
}

/// Output of [`predict_flood_time`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodPrediction {
    /// Total handling time for the measured request mix.
    pub handling_time: Rat,
    /// Time spent on attacker traffic when unexpected packets cost
    /// nothing beyond their header drop: `expected_kind * cost / I`.
    pub attacker_request_time: Rat,
}

/// Total handling time `(N_c * avg_c + N_f * avg_f) * t` and the
/// attacker-side time under endpoint filtering, where only the `1/I`
/// fraction of expected-kind packets gets processed past its header.
pub fn predict_flood_time(p: &EfficiencyParams) -> Result<FloodPrediction, DivisorZero> {
    if p.endpoints == 0 {
        return Err(DivisorZero);
    }
    let t = rat_int(p.unit_time);
    let handling_time = (rat_int(p.honest_requests) * p.avg_honest_processes
        + rat_int(p.attacker_requests) * p.avg_attacker_processes)
        * t;
    let attacker_request_time = rat_int(p.attacker_expected_kind)
        * rat_int(p.expected_packet_cost)
        * t
        / rat_int(p.endpoints);
    Ok(FloodPrediction {
        handling_time,
        attacker_request_time,
    })
}

/// Closed-form cost of checking vs dropping `n` malicious packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StampSavings {
    /// `n * t_c`: every packet fully checked.
    pub full_check_units: u128,
    /// `n * t_d`: every packet dropped from its header.
    pub header_drop_units: u128,
    /// Difference; positive whenever checking costs more than dropping.
    pub saved_units: i128,
}

pub fn predict_stamp_savings(malicious: u64, full_check: Units, drop: Units) -> StampSavings {
    let n = u128::from(malicious);
    let full_check_units = n * u128::from(full_check);
    let header_drop_units = n * u128::from(drop);
    StampSavings {
        full_check_units,
        header_drop_units,
        saved_units: full_check_units as i128 - header_drop_units as i128,
    }
}

/// One predicted-vs-measured row.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub metric: String,
    pub predicted: Rat,
    pub measured: Rat,
    pub rel_error: Rat,
    pub within_tolerance: bool,
}

fn format_rat(r: &Rat) -> String {
    if r.denom() == &1 {
        alloc::format!("{}", r.numer())
    } else {
        alloc::format!("{}/{}", r.numer(), r.denom())
    }
}

impl Serialize for ComparisonRow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ComparisonRow", 5)?;
        s.serialize_field("metric", &self.metric)?;
        s.serialize_field("predicted", &format_rat(&self.predicted))?;
        s.serialize_field("measured", &format_rat(&self.measured))?;
        s.serialize_field("rel_error", &format_rat(&self.rel_error))?;
        s.serialize_field("within_tolerance", &self.within_tolerance)?;
        s.end()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// The report and params describe different scenarios.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioMismatch {
    pub field: &'static str,
}

fn rel_error(predicted: &Rat, measured: &Rat) -> Rat {
    let diff = (measured - predicted).abs();
    if predicted.is_zero() {
        diff
    } else {
        diff / predicted.abs()
    }
}

fn row(metric: &str, predicted: Rat, measured: Rat, within_tolerance: bool) -> ComparisonRow {
    ComparisonRow {
        metric: String::from(metric),
        rel_error: rel_error(&predicted, &measured),
        predicted,
        measured,
        within_tolerance,
    }
}

/// Binomial 3-sigma acceptance without square roots: accepts iff
/// `(observed - n*p)^2 <= 9 * n * p * (1-p)`, all exact.
fn within_three_sigma(observed: Rat, trials: u64, p: Rat) -> bool {
    if trials == 0 {
        return true;
    }
    let n = rat_int(trials);
    let mean = n.clone() * p.clone();
    let var = n * p.clone() * (Rat::from_integer(1) - p);
    let dev = observed - mean;
    dev.clone() * dev <= var * Rat::from_integer(9)
}

/// Builds the predicted-vs-measured table for one run.
///
/// Exact rows (capacity, block durations, request splits, unit splits,
/// realized savings) carry zero tolerance; the attacker rows use binomial
/// 3-sigma bands around the endpoint-filtering prediction.
pub fn compare(
    report: &SimReport,
    params: &EfficiencyParams,
) -> Result<ComparisonTable, ScenarioMismatch> {
    if u64::from(report.endpoints) != params.endpoints {
        return Err(ScenarioMismatch { field: "endpoints" });
    }
    if report.units_per_tick != params.units_per_tick {
        return Err(ScenarioMismatch {
            field: "units_per_tick",
        });
    }

    let mut rows = Vec::new();

    // Serviceable requests per tick against the best tick observed.
    let cap = capacity(params.units_per_tick, params.processes_per_request)
        .map_err(|_| ScenarioMismatch {
            field: "processes_per_request",
        })?;
    let best_tick = report
        .per_tick
        .iter()
        .map(|t| t.ca_served)
        .max()
        .unwrap_or(0);
    rows.push(row(
        "capacity_per_tick",
        rat_int(cap),
        rat_int(best_tick),
        best_tick <= cap,
    ));

    // Dynamic block windows must match the ceiling formula exactly.
    let mismatches = report
        .block_samples
        .iter()
        .filter(|s| {
            crate::filter::block_duration(params.fixed_block_ticks, s.served, s.capacity)
                != Ok(s.duration)
        })
        .count() as u64;
    rows.push(row(
        "block_duration_mismatches",
        Rat::zero(),
        rat_int(mismatches),
        mismatches == 0,
    ));

    // Request conservation: handled = honest + attacker, exactly.
    let split = rat_int(report.traffic.honest_requests + report.traffic.attacker_requests);
    rows.push(row(
        "request_split_identity",
        rat_int(report.processed),
        split.clone(),
        split == rat_int(report.processed),
    ));

    // Unit conservation across actor classes, exactly.
    let unit_split = rat_int(report.units.honest + report.units.attacker);
    rows.push(row(
        "unit_split_identity",
        rat_int(report.units.total),
        unit_split.clone(),
        unit_split == rat_int(report.units.total),
    ));

    // Fraction of expected-kind attacker datagrams passing the header
    // check converges to 1/I.
    let acc = &report.traffic;
    let expected_fraction = rat(1, params.endpoints as i128);
    let (measured_fraction, fraction_ok) = if acc.attacker_acc_processed == 0 {
        (Rat::zero(), true)
    } else {
        let f = rat(
            acc.attacker_acc_passed_header as i128,
            acc.attacker_acc_processed as i128,
        );
        (
            f,
            within_three_sigma(
                rat_int(acc.attacker_acc_passed_header),
                acc.attacker_acc_processed,
                expected_fraction.clone(),
            ),
        )
    };
    rows.push(row(
        "expected_fraction",
        expected_fraction,
        measured_fraction,
        fraction_ok,
    ));

    // Units spent on attacker datagrams past the header check, against
    // the 1/I prediction, inside a binomial band scaled by per-packet cost.
    let flood = predict_flood_time(params).map_err(|_| ScenarioMismatch { field: "endpoints" })?;
    let measured_passed_units = rat_int(acc.attacker_acc_passed_units);
    let units_ok = if acc.attacker_acc_processed == 0 {
        measured_passed_units.is_zero()
    } else if params.expected_packet_cost == 0 {
        measured_passed_units == flood.attacker_request_time
    } else {
        within_three_sigma(
            measured_passed_units / rat_int(params.expected_packet_cost),
            acc.attacker_acc_processed,
            rat(1, params.endpoints as i128),
        )
    };
    rows.push(row(
        "attacker_expected_units",
        flood.attacker_request_time,
        rat_int(acc.attacker_acc_passed_units),
        units_ok,
    ));

    // Units saved by header drops over full checks, realized exactly for
    // every attacker datagram that failed the header check.
    let savings = predict_stamp_savings(
        params.malicious_count,
        params.full_check_cost,
        params.drop_cost,
    );
    let realized = u128::from(acc.attacker_acc_failed_header)
        * u128::from(params.full_check_cost - params.drop_cost);
    rows.push(row(
        "full_check_savings",
        Rat::from_integer(savings.saved_units),
        Rat::from_integer(realized as i128),
        u128::from(acc.attacker_acc_failed_header) * u128::from(params.full_check_cost)
            >= u128::from(acc.attacker_acc_failed_header) * u128::from(params.drop_cost),
    ));

    Ok(ComparisonTable { rows })
}

/// Derives comparison params from a report plus the scenario's cost
/// table values.
pub fn params_from_report(report: &SimReport) -> EfficiencyParams {
    let t = &report.traffic;
    let avg = |units: u64, count: u64| {
        if count == 0 {
            Rat::zero()
        } else {
            rat(units as i128, count as i128)
        }
    };
    EfficiencyParams {
        processes_per_request: report.processes_per_request,
        units_per_tick: report.units_per_tick,
        fixed_block_ticks: report.fixed_block_ticks,
        endpoints: u64::from(report.endpoints),
        unit_time: 1,
        honest_requests: t.honest_requests,
        attacker_requests: t.attacker_requests,
        avg_honest_processes: avg(report.units.honest, t.honest_requests),
        avg_attacker_processes: avg(report.units.attacker, t.attacker_requests),
        attacker_expected_kind: t.attacker_acc_processed,
        expected_packet_cost: report.expected_packet_cost,
        malicious_count: t.attacker_acc_failed_header,
        full_check_cost: report.full_check_cost,
        drop_cost: report.drop_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_is_floor_division() {
        assert_eq!(capacity(1200, 12), Ok(100));
        assert_eq!(capacity(5, 10), Ok(0));
        assert_eq!(capacity(7, 0), Err(DivisorZero));
    }

    #[test]
    fn handling_time_matches_direct_arithmetic() {
        let p = EfficiencyParams {
            processes_per_request: 4,
            units_per_tick: 1000,
            fixed_block_ticks: 10,
            endpoints: 4,
            unit_time: 1,
            honest_requests: 50,
            attacker_requests: 50,
            avg_honest_processes: Rat::from_integer(4),
            avg_attacker_processes: Rat::from_integer(4),
            attacker_expected_kind: 100,
            expected_packet_cost: 1,
            malicious_count: 0,
            full_check_cost: 5,
            drop_cost: 1,
        };
        let f = predict_flood_time(&p).unwrap();
        assert_eq!(f.handling_time, Rat::from_integer(400));
        assert_eq!(f.attacker_request_time, Rat::from_integer(25));
    }

    #[test]
    fn attacker_time_divides_by_endpoint_count() {
        let mut p = EfficiencyParams {
            processes_per_request: 1,
            units_per_tick: 1,
            fixed_block_ticks: 1,
            endpoints: 8,
            unit_time: 3,
            honest_requests: 0,
            attacker_requests: 0,
            avg_honest_processes: Rat::zero(),
            avg_attacker_processes: Rat::zero(),
            attacker_expected_kind: 10,
            expected_packet_cost: 1,
            malicious_count: 0,
            full_check_cost: 5,
            drop_cost: 1,
        };
        let f = predict_flood_time(&p).unwrap();
        assert_eq!(f.attacker_request_time, Rat::new(30, 8));
        p.endpoints = 0;
        assert!(predict_flood_time(&p).is_err());
    }

    #[test]
    fn savings_formula_is_exact() {
        let s = predict_stamp_savings(1000, 5, 1);
        assert_eq!(s.full_check_units, 5000);
        assert_eq!(s.header_drop_units, 1000);
        assert_eq!(s.saved_units, 4000);
        assert_eq!(predict_stamp_savings(7, 3, 3).saved_units, 0);
    }

    #[test]
    fn savings_positive_whenever_check_exceeds_drop() {
        for (t_c, t_d) in [(2u64, 1u64), (10, 9), (100, 1)] {
            assert!(predict_stamp_savings(1, t_c, t_d).saved_units > 0);
        }
    }

    #[test]
    fn three_sigma_band_behaves() {
        // 100 trials at p=1/2: mean 50, sigma 5.
        assert!(within_three_sigma(Rat::from_integer(50), 100, rat(1, 2)));
        assert!(within_three_sigma(Rat::from_integer(64), 100, rat(1, 2)));
        assert!(!within_three_sigma(Rat::from_integer(66), 100, rat(1, 2)));
        // Degenerate p=1: zero variance, only the mean passes.
        assert!(within_three_sigma(Rat::from_integer(100), 100, rat(1, 1)));
        assert!(!within_three_sigma(Rat::from_integer(99), 100, rat(1, 1)));
    }

    #[test]
    fn rational_rendering_is_exact() {
        assert_eq!(format_rat(&rat(3, 4)), "3/4");
        assert_eq!(format_rat(&rat(8, 2)), "4");
        assert_eq!(format_rat(&Rat::zero()), "0");
    }
}
