//! The terminal-side verification procedure.
//!
//! Given the broadcasts captured in one receipt, each stamped with the
//! inner clock's reading at its arrival, [`verify_position`] runs:
//!
//! 0. refuse service if the inner clock is past its validity period;
//!    collapse duplicates from one station to the earliest arrival;
//! 3. abort if fewer than `dims + 1` broadcasts remain;
//! 4. abort if any broadcast time is after its receipt time;
//! 5. drop entries whose signature fails; abort below `dims + 1`;
//! 6. turn each survivor into a distance bound and multilaterate;
//! 7. reject if the error range exceeds the configured limit;
//! 8. accept only if some simplex of accepted stations strictly contains
//!    the solved position.
//!
//! Everything here is local computation over the receipt. The verifier
//! has no way to transmit.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::authsig::{
    sign_beacon, verify_beacon, AuthError, BeaconBody, Broadcast, KeyRegistry, SigningKey,
    StationId,
};
use crate::geom::{Dims, Point, Simplex};
use crate::ranging::{distance_bound, solve_position, Fix, RangeObservation, RangingError};
use crate::timebase::{ClockModel, Instant};

/// One captured broadcast and the inner-clock reading at its arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiptEntry {
    pub broadcast: Broadcast,
    pub t_m: Instant,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Receipt {
    pub entries: Vec<ReceiptEntry>,
}

impl Receipt {
    pub fn new(entries: Vec<ReceiptEntry>) -> Self {
        Receipt { entries }
    }

    pub fn push(&mut self, broadcast: Broadcast, t_m: Instant) {
        self.entries.push(ReceiptEntry { broadcast, t_m });
    }
}

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub dims: Dims,
    /// Largest acceptable error range, meters.
    pub error_limit: f64,
    /// Propagation speed, m/s.
    pub c: f64,
    pub registry: Arc<KeyRegistry>,
    /// When set, verification is refused once this clock has expired.
    pub inner_clock: Option<ClockModel>,
}

/// Why a verification did not accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Reason {
    ClockExpired,
    TooFewBroadcasts,
    FutureTimestamp,
    TooFewValidSignatures,
    SolverFailure,
    ErrorRangeExceeded,
    NotContained,
}

impl Reason {
    pub fn code(self) -> &'static str {
        match self {
            Reason::ClockExpired => "ClockExpired",
            Reason::TooFewBroadcasts => "TooFewBroadcasts",
            Reason::FutureTimestamp => "FutureTimestamp",
            Reason::TooFewValidSignatures => "TooFewValidSignatures",
            Reason::SolverFailure => "SolverFailure",
            Reason::ErrorRangeExceeded => "ErrorRangeExceeded",
            Reason::NotContained => "NotContained",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance {
    pub fix: Fix,
    pub witness: Simplex,
    pub witness_stations: Vec<StationId>,
}

/// Outcome of one verification. Aborts come from steps 0–6, rejects from 7–8.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionResult {
    Accepted(Acceptance),
    Abort(Reason),
    Reject(Reason),
}

impl PositionResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, PositionResult::Accepted(_))
    }

    pub fn accepted(&self) -> Option<&Acceptance> {
        match self {
            PositionResult::Accepted(a) => Some(a),
            _ => None,
        }
    }

    pub fn reason(&self) -> Option<Reason> {
        match self {
            PositionResult::Accepted(_) => None,
            PositionResult::Abort(r) | PositionResult::Reject(r) => Some(*r),
        }
    }

    pub fn code(&self) -> &'static str {
        self.reason().map_or("Accepted", Reason::code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ClockValidity,
    Deduplicate,
    Count,
    Timestamps,
    Signatures,
    Solve,
    ErrorRange,
    Containment,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::ClockValidity => "clock_validity",
            Step::Deduplicate => "deduplicate",
            Step::Count => "count",
            Step::Timestamps => "timestamps",
            Step::Signatures => "signatures",
            Step::Solve => "solve",
            Step::ErrorRange => "error_range",
            Step::Containment => "containment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepVerdict {
    pub step: Step,
    pub passed: bool,
    pub detail: String,
}

/// Full record of a verification: the result plus what each step saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub result: PositionResult,
    pub steps: Vec<StepVerdict>,
    /// Stations whose broadcasts survived the signature check, in receipt order.
    pub accepted_stations: Vec<StationId>,
    /// Receipt indices dropped as duplicates of an earlier arrival.
    pub duplicates: Vec<usize>,
    /// Receipt indices dropped at the signature check.
    pub bad_signatures: Vec<usize>,
    pub observations: Vec<RangeObservation>,
    /// The solver's output, whether or not the later gates passed.
    pub fix: Option<Fix>,
    pub solver_error: Option<RangingError>,
}

/// Signs a beacon for emission at `t_s`.
pub fn make_broadcast(
    key: &SigningKey,
    station_id: StationId,
    t_s: Instant,
    x_s: Point,
) -> Result<Broadcast, AuthError> {
    sign_beacon(key, BeaconBody::new(station_id, t_s, x_s))
}

pub fn verify_position(receipt: &Receipt, config: &VerifierConfig) -> PositionResult {
    verify_position_traced(receipt, config).result
}

struct Trace {
    steps: Vec<StepVerdict>,
}

impl Trace {
    fn pass(&mut self, step: Step, detail: impl Into<String>) {
        self.steps.push(StepVerdict {
            step,
            passed: true,
            detail: detail.into(),
        });
    }

    fn fail(&mut self, step: Step, detail: impl Into<String>) {
        self.steps.push(StepVerdict {
            step,
            passed: false,
            detail: detail.into(),
        });
    }
}

/// Keeps the earliest arrival per station; returns kept and dropped receipt indices.
fn deduplicate(entries: &[ReceiptEntry]) -> (Vec<usize>, Vec<usize>) {
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let id = e.broadcast.body.station_id;
        match kept
            .iter()
            .position(|&k| entries[k].broadcast.body.station_id == id)
        {
            Some(slot) if entries[kept[slot]].t_m <= e.t_m => dropped.push(i),
            Some(slot) => {
                dropped.push(kept[slot]);
                kept[slot] = i;
            }
            None => kept.push(i),
        }
    }
    kept.sort_unstable();
    dropped.sort_unstable();
    (kept, dropped)
}

pub fn verify_position_traced(receipt: &Receipt, config: &VerifierConfig) -> Verification {
    let quorum = config.dims.simplex_size();
    let mut trace = Trace { steps: Vec::new() };
    let mut out = Verification {
        result: PositionResult::Abort(Reason::TooFewBroadcasts),
        steps: Vec::new(),
        accepted_stations: Vec::new(),
        duplicates: Vec::new(),
        bad_signatures: Vec::new(),
        observations: Vec::new(),
        fix: None,
        solver_error: None,
    };
    let finish = |mut out: Verification, trace: Trace, result| {
        out.result = result;
        out.steps = trace.steps;
        out
    };

    if let Some(clock) = &config.inner_clock {
        let latest = receipt.entries.iter().map(|e| e.t_m).max();
        match latest {
            Some(now) if clock.expired(now) => {
                trace.fail(
                    Step::ClockValidity,
                    format!("inner clock expired at reading {now}"),
                );
                return finish(out, trace, PositionResult::Abort(Reason::ClockExpired));
            }
            _ => trace.pass(Step::ClockValidity, "inner clock within validity period"),
        }
    }

    let (kept, dropped) = deduplicate(&receipt.entries);
    trace.pass(
        Step::Deduplicate,
        format!("{} duplicate(s) dropped", dropped.len()),
    );
    out.duplicates = dropped;

    if kept.len() < quorum {
        trace.fail(
            Step::Count,
            format!("{} broadcast(s), need {quorum}", kept.len()),
        );
        return finish(out, trace, PositionResult::Abort(Reason::TooFewBroadcasts));
    }
    trace.pass(Step::Count, format!("{} broadcast(s)", kept.len()));

    if let Some(&i) = kept
        .iter()
        .find(|&&i| receipt.entries[i].broadcast.body.t_s > receipt.entries[i].t_m)
    {
        let e = &receipt.entries[i];
        trace.fail(
            Step::Timestamps,
            format!(
                "entry {i}: broadcast time {} after receipt {}",
                e.broadcast.body.t_s, e.t_m
            ),
        );
        return finish(out, trace, PositionResult::Abort(Reason::FutureTimestamp));
    }
    trace.pass(Step::Timestamps, "all broadcast times precede receipt");

    let mut valid = Vec::new();
    for &i in &kept {
        let b = &receipt.entries[i].broadcast;
        if b.body.x_s.dims() == config.dims && verify_beacon(&config.registry, b) {
            valid.push(i);
        } else {
            out.bad_signatures.push(i);
        }
    }
    out.accepted_stations = valid
        .iter()
        .map(|&i| receipt.entries[i].broadcast.body.station_id)
        .collect();
    if valid.len() < quorum {
        trace.fail(
            Step::Signatures,
            format!("{} valid of {}, need {quorum}", valid.len(), kept.len()),
        );
        return finish(
            out,
            trace,
            PositionResult::Abort(Reason::TooFewValidSignatures),
        );
    }
    trace.pass(
        Step::Signatures,
        format!("{} valid of {}", valid.len(), kept.len()),
    );

    // Step 4 already guaranteed t_s <= t_m for every kept entry.
    out.observations = valid
        .iter()
        .map(|&i| {
            let e = &receipt.entries[i];
            RangeObservation {
                station_id: e.broadcast.body.station_id,
                station_pos: e.broadcast.body.x_s,
                bound: distance_bound(e.broadcast.body.t_s, e.t_m, config.c)
                    .expect("checked at step 4"),
            }
        })
        .collect();
    let located = locate(
        &out.observations,
        config.dims,
        config.error_limit,
        &mut trace,
    );
    out.fix = located.fix;
    out.solver_error = located.solver_error;
    finish(out, trace, located.result)
}

/// The geometric gates alone: solve, error range, containment. For range
/// bounds obtained some other way than from a receipt.
pub fn judge_observations(
    observations: &[RangeObservation],
    dims: Dims,
    error_limit: f64,
) -> Located {
    locate(
        observations,
        dims,
        error_limit,
        &mut Trace { steps: Vec::new() },
    )
}

/// Outcome of the geometric gates.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub result: PositionResult,
    pub fix: Option<Fix>,
    pub solver_error: Option<RangingError>,
}

fn locate(
    observations: &[RangeObservation],
    dims: Dims,
    error_limit: f64,
    trace: &mut Trace,
) -> Located {
    let fix = match solve_position(observations, dims) {
        Ok(fix) => fix,
        Err(e) => {
            trace.fail(Step::Solve, e.to_string());
            return Located {
                result: PositionResult::Abort(Reason::SolverFailure),
                fix: None,
                solver_error: Some(e),
            };
        }
    };
    let located = |result, fix| Located {
        result,
        fix: Some(fix),
        solver_error: None,
    };
    trace.pass(
        Step::Solve,
        format!(
            "position {} after {} iteration(s)",
            fix.position, fix.iterations
        ),
    );

    if fix.error_range > error_limit {
        trace.fail(
            Step::ErrorRange,
            format!(
                "error range {:.6} m exceeds {} m",
                fix.error_range, error_limit
            ),
        );
        return located(PositionResult::Reject(Reason::ErrorRangeExceeded), fix);
    }
    trace.pass(
        Step::ErrorRange,
        format!("error range {:.6} m", fix.error_range),
    );

    let positions: Vec<Point> = observations.iter().map(|o| o.station_pos).collect();
    match containment_witness_search(&positions, &fix.position) {
        Some((indices, witness)) => {
            let witness_stations = indices
                .iter()
                .map(|&k| observations[k].station_id)
                .collect();
            trace.pass(
                Step::Containment,
                format!("contained in stations {indices:?}"),
            );
            let acc = Acceptance {
                fix: fix.clone(),
                witness,
                witness_stations,
            };
            located(PositionResult::Accepted(acc), fix)
        }
        None => {
            trace.fail(
                Step::Containment,
                "no station simplex contains the position",
            );
            located(PositionResult::Reject(Reason::NotContained), fix)
        }
    }
}

/// Advances `idx` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// First non-degenerate simplex of `positions`, in lexicographic index
/// order, that strictly contains `p`.
pub fn containment_witness_search(positions: &[Point], p: &Point) -> Option<(Vec<usize>, Simplex)> {
    let k = p.dims().simplex_size();
    if positions.len() < k {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let vertices: Vec<Point> = idx.iter().map(|&i| positions[i]).collect();
        if let Ok(s) = Simplex::new(vertices) {
            if !s.is_degenerate() && s.contains(p) == Ok(true) {
                return Some((idx, s));
            }
        }
        if !next_combination(&mut idx, positions.len()) {
            return None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authsig::SchemeKind;
    use crate::timebase::{Span, C_DEFAULT};

    struct World {
        keys: Vec<(StationId, SigningKey, Point)>,
        config: VerifierConfig,
    }

    fn world(stations: &[Point]) -> World {
        let mut reg = KeyRegistry::new();
        let keys: Vec<_> = stations
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let id = StationId::from_label(&format!("S{}", i + 1)).unwrap();
                let k = SigningKey::derive(SchemeKind::HmacSha256, 11, &id.0);
                reg.insert(id, k.public_key()).unwrap();
                (id, k, *p)
            })
            .collect();
        World {
            keys,
            config: VerifierConfig {
                dims: stations[0].dims(),
                error_limit: 1.0,
                c: C_DEFAULT,
                registry: Arc::new(reg),
                inner_clock: None,
            },
        }
    }

    impl World {
        /// Honest receipt for a terminal at `truth` with broadcasts at `t0`.
        fn receipt(&self, truth: &Point, t0: Instant) -> Receipt {
            let mut r = Receipt::default();
            for (id, k, p) in &self.keys {
                let b = make_broadcast(k, *id, t0, *p).unwrap();
                r.push(b, t0 + Span::light_time(p.distance(truth), self.config.c));
            }
            r
        }
    }

    fn corners() -> Vec<Point> {
        vec![
            Point::new2(0.0, 0.0),
            Point::new2(4.0, 0.0),
            Point::new2(0.0, 4.0),
        ]
    }

    #[test]
    fn honest_receipt_is_accepted() {
        let w = world(&corners());
        let truth = Point::new2(1.0, 1.0);
        let v = verify_position_traced(&w.receipt(&truth, Instant::from_secs(1.0)), &w.config);
        let acc = v.result.accepted().expect("accepted");
        assert!(acc.fix.position.distance(&truth) < 1e-6);
        assert!(acc.witness.contains(&acc.fix.position).unwrap());
        assert_eq!(v.steps.last().unwrap().step, Step::Containment);
    }

    #[test]
    fn two_broadcasts_abort() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::EPOCH);
        r.entries.truncate(2);
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Abort(Reason::TooFewBroadcasts)
        );
    }

    #[test]
    fn future_timestamp_aborts() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::from_secs(1.0));
        let (id, k, p) = &w.keys[1];
        r.entries[1].broadcast = make_broadcast(k, *id, Instant::from_secs(2.0), *p).unwrap();
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Abort(Reason::FutureTimestamp)
        );
    }

    #[test]
    fn earlier_step_wins() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::from_secs(1.0));
        r.entries.truncate(2);
        r.entries[0].t_m = Instant::EPOCH;
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Abort(Reason::TooFewBroadcasts)
        );
    }

    #[test]
    fn bad_signature_below_quorum_aborts() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::EPOCH);
        r.entries[2].broadcast.signature[0] ^= 1;
        let v = verify_position_traced(&r, &w.config);
        assert_eq!(
            v.result,
            PositionResult::Abort(Reason::TooFewValidSignatures)
        );
        assert_eq!(v.bad_signatures, vec![2]);
    }

    #[test]
    fn bad_signature_above_quorum_is_dropped() {
        let mut s = corners();
        s.push(Point::new2(4.0, 4.0));
        let w = world(&s);
        let truth = Point::new2(1.0, 1.5);
        let mut r = w.receipt(&truth, Instant::EPOCH);
        r.entries[3].broadcast.signature[5] ^= 0x40;
        let v = verify_position_traced(&r, &w.config);
        assert!(v.result.accepted().unwrap().fix.position.distance(&truth) < 1e-6);
        assert_eq!(v.accepted_stations.len(), 3);
    }

    #[test]
    fn duplicates_do_not_count_toward_quorum() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::EPOCH);
        r.entries.truncate(2);
        let copy = r.entries[0].clone();
        r.entries.push(ReceiptEntry {
            t_m: copy.t_m + Span::from_secs(1e-3),
            ..copy
        });
        let v = verify_position_traced(&r, &w.config);
        assert_eq!(v.result, PositionResult::Abort(Reason::TooFewBroadcasts));
        assert_eq!(v.duplicates, vec![2]);
    }

    #[test]
    fn dedup_keeps_earliest_arrival() {
        let w = world(&corners());
        let truth = Point::new2(1.0, 1.0);
        let mut r = w.receipt(&truth, Instant::EPOCH);
        let mut late = r.entries[0].clone();
        late.t_m = late.t_m + Span::from_secs(1.0);
        r.entries.insert(0, late);
        let v = verify_position_traced(&r, &w.config);
        assert_eq!(v.duplicates, vec![0]);
        assert!(v.result.is_accepted());
    }

    #[test]
    fn inflated_bounds_exceed_error_limit() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::EPOCH);
        for e in &mut r.entries {
            e.t_m = e.t_m + Span::light_time(100.0, C_DEFAULT);
        }
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Reject(Reason::ErrorRangeExceeded)
        );
    }

    #[test]
    fn outside_position_not_contained() {
        let w = world(&corners());
        let r = w.receipt(&Point::new2(5.0, 5.0), Instant::EPOCH);
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Reject(Reason::NotContained)
        );
    }

    #[test]
    fn expired_clock_refuses_service() {
        let mut w = world(&corners());
        w.config.inner_clock = Some(ClockModel::perfect(30.0));
        let truth = Point::new2(1.0, 1.0);
        let ok = w.receipt(&truth, Instant::from_days(29.0));
        assert!(verify_position(&ok, &w.config).is_accepted());
        let late = w.receipt(&truth, Instant::from_days(31.0));
        assert_eq!(
            verify_position(&late, &w.config),
            PositionResult::Abort(Reason::ClockExpired)
        );
    }

    #[test]
    fn unregistered_station_fails_closed() {
        let w = world(&corners());
        let mut r = w.receipt(&Point::new2(1.0, 1.0), Instant::EPOCH);
        let rogue = SigningKey::derive(SchemeKind::HmacSha256, 1, b"rogue");
        let id = StationId::from_label("rogue").unwrap();
        r.entries[0].broadcast =
            make_broadcast(&rogue, id, Instant::EPOCH, Point::new2(0.0, 0.0)).unwrap();
        assert_eq!(
            verify_position(&r, &w.config),
            PositionResult::Abort(Reason::TooFewValidSignatures)
        );
    }

    #[test]
    fn broadcasts_with_distinct_times_differ() {
        let (id, k) = (
            StationId::from_label("S").unwrap(),
            SigningKey::derive(SchemeKind::Ed25519, 0, b"S"),
        );
        let p = Point::new2(1.0, 2.0);
        let a = make_broadcast(&k, id, Instant::from_secs(1.0), p).unwrap();
        let b = make_broadcast(&k, id, Instant::from_secs(2.0), p).unwrap();
        assert_ne!(a.body, b.body);
        assert_ne!(a.signature, b.signature);
    }

    #[test]
    fn witness_search_examples() {
        let tri = corners();
        let (idx, _) = containment_witness_search(&tri, &Point::new2(1.0, 1.0)).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);

        let collinear: Vec<Point> = (0..4).map(|i| Point::new2(i as f64, i as f64)).collect();
        assert!(containment_witness_search(&collinear, &Point::new2(1.0, 1.0)).is_none());
    }

    #[test]
    fn witness_search_finds_only_containing_subset() {
        // p sits on the diagonal 0-2, the boundary of both triangles that use it.
        let pts = vec![
            Point::new2(0.0, 0.0),
            Point::new2(10.0, 0.0),
            Point::new2(10.0, 10.0),
            Point::new2(0.0, 10.0),
        ];
        let p = Point::new2(2.0, 2.0);
        // Brute-force every 3-subset.
        let mut containing = Vec::new();
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    let s = Simplex::new(vec![pts[a], pts[b], pts[c]]).unwrap();
                    if !s.is_degenerate() && s.contains(&p).unwrap() {
                        containing.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(containing, vec![vec![0, 1, 3]]);
        assert_eq!(
            containment_witness_search(&pts, &p).unwrap().0,
            vec![0, 1, 3]
        );
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut idx = vec![0, 1, 2];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 5) {
            seen.push(idx.clone());
        }
        assert_eq!(seen.len(), 10);
        let mut sorted = seen.clone();
        sorted.sort();
        assert_eq!(seen, sorted);
    }
}
