//! Deterministic discrete-event radio medium.
//!
//! Stations emit their signed beacons at exactly the signed time; honest
//! signals reach the terminal after `distance / c`. The adversary controls
//! the medium: it may hold signals back, re-route them through relay nodes,
//! re-inject recordings, or transmit forgeries. It cannot make information
//! travel faster than light, and it holds no station key and cannot touch
//! the terminal's inner clock.
//!
//! Events are processed in `(time, sequence number)` order, sequence numbers
//! being assigned at scheduling time, so a run is a pure function of the
//! scenario.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::authsig::{
    sign_beacon, BeaconBody, Broadcast, KeyRegistry, SchemeKind, SigningKey, StationId,
};
use crate::geom::{Dims, Point};
use crate::timebase::{ClockModel, DriftSign, Instant, Span};
use crate::verifier::{
    make_broadcast, verify_position_traced, PositionResult, Receipt, Verification, VerifierConfig,
};

/// Default receiver frame: arrivals up to 10 ms after the first one.
pub const DEFAULT_LISTEN_WINDOW: Span = Span::from_ticks(10_000_000_000_000_000);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ValidationError {
    /// Location of the offending field, in scenario-file terms, e.g. `attacks[0].delay_s`.
    pub path: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("delay must be a finite non-negative number of seconds, got {0}")]
    NegativeDelay(f64),
    #[error("cannot deliver at {requested}: the recording only exists from {earliest}")]
    CausalityViolation {
        requested: Instant,
        earliest: Instant,
    },
    #[error("trace has no emission {0}")]
    UnknownEmission(usize),
}

/// A non-negative extra delay. There is no way to build a negative one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
pub struct ExtraDelay(Span);

impl ExtraDelay {
    pub const ZERO: ExtraDelay = ExtraDelay(Span::ZERO);

    pub fn from_secs(secs: f64) -> Result<Self, AttackError> {
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(AttackError::NegativeDelay(secs));
        }
        Ok(ExtraDelay(Span::from_secs(secs)))
    }

    pub fn span(self) -> Span {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0.as_secs()
    }
}

impl std::ops::Add for ExtraDelay {
    type Output = ExtraDelay;

    fn add(self, rhs: ExtraDelay) -> ExtraDelay {
        ExtraDelay(self.0 + rhs.0)
    }
}

#[derive(Debug, Clone)]
pub struct StationSpec {
    pub id: StationId,
    pub position: Point,
    pub key: SigningKey,
    /// Broadcast times, true time.
    pub schedule: Vec<Instant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    pub true_position: Point,
    pub clock: ClockModel,
    pub drift_sign: DriftSign,
    pub error_limit: f64,
    pub listen_window: Span,
    /// The receiver frame opens at the first arrival at or after this time.
    pub listen_from: Instant,
}

/// How a forger fills the signature field.
#[derive(Debug, Clone, PartialEq)]
pub enum SignatureSource {
    /// Uniformly random bytes of the right length.
    Random,
    /// All zero bytes.
    Zeroed,
    /// A genuine signature made by another station's key over the fake body.
    KeyOf(StationId),
    /// The signature of a genuine emission, lifted onto the fake body.
    Transplant { emission: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayNode {
    pub station: StationId,
    pub position: Point,
    pub hold: ExtraDelay,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    /// Transmit a made-up beacon from `emitter_pos` at `emit_at`.
    Forge {
        claimed: StationId,
        fake_t_s: Instant,
        fake_pos: Point,
        signature: SignatureSource,
        emitter_pos: Point,
        emit_at: Instant,
    },
    /// Re-deliver the exact bytes of an earlier emission at `deliver_at`.
    Replay {
        emission: usize,
        deliver_at: Instant,
    },
    /// Hold back every signal from `station` by `extra`.
    Delay {
        station: StationId,
        extra: ExtraDelay,
    },
    /// Per station, the smallest extra delay that makes the bound match the
    /// attack target's distance. Bounds that would need to shrink are left alone.
    SteerDelay,
    /// Intercept each listed station's signal at a relay node and forward it
    /// to the terminal after a hold. The direct path is suppressed. With a
    /// target, holds are stretched so each bound matches the target distance
    /// where physics allows.
    ColludeRelay {
        relays: Vec<RelayNode>,
        /// Whether the colluders also know the terminal's challenge-response
        /// nonces. Only the bidirectional protocol has nonces to leak.
        nonce_leak: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// The fake position the adversary is steering toward, if any.
    pub target: Option<Point>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec { kind, target: None }
    }

    pub fn targeting(kind: AttackKind, target: Point) -> Self {
        AttackSpec {
            kind,
            target: Some(target),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            AttackKind::Forge { .. } => "forge",
            AttackKind::Replay { .. } => "replay",
            AttackKind::Delay { .. } => "delay",
            AttackKind::SteerDelay => "steer_delay",
            AttackKind::ColludeRelay { .. } => "collude_relay",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub dims: Dims,
    /// Propagation speed, m/s.
    pub c: f64,
    pub rng_seed: u64,
    pub stations: Vec<StationSpec>,
    pub terminal: TerminalSpec,
    pub attacks: Vec<AttackSpec>,
}

impl Scenario {
    /// The verifier's view of the world: station keys and terminal settings.
    pub fn verifier_config(&self) -> VerifierConfig {
        let mut reg = KeyRegistry::new();
        for s in &self.stations {
            // Uniqueness is checked by validate().
            let _ = reg.insert(s.id, s.key.public_key());
        }
        VerifierConfig {
            dims: self.dims,
            error_limit: self.terminal.error_limit,
            c: self.c,
            registry: Arc::new(reg),
            inner_clock: Some(self.terminal.clock),
        }
    }

    fn station(&self, id: &StationId) -> Option<&StationSpec> {
        self.stations.iter().find(|s| s.id == *id)
    }

    /// The adversary's target, taken from the first attack that has one.
    pub fn target(&self) -> Option<Point> {
        self.attacks.iter().find_map(|a| a.target)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let dims = self.dims;
        let check_point = |path: String, p: &Point| {
            if p.dims() != dims {
                return Err(ValidationError::new(
                    path,
                    format!("expected {dims} coordinates"),
                ));
            }
            if !p.is_finite() {
                return Err(ValidationError::new(path, "coordinates must be finite"));
            }
            Ok(())
        };
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(ValidationError::new(
                "meta.c_m_per_s",
                "propagation speed must be positive",
            ));
        }
        for (i, s) in self.stations.iter().enumerate() {
            if self.stations[..i].iter().any(|o| o.id == s.id) {
                return Err(ValidationError::new(
                    format!("stations[{i}].id"),
                    format!("duplicate station id {}", s.id),
                ));
            }
            check_point(format!("stations[{i}].pos_m"), &s.position)?;
            if let Some(j) = s.schedule.iter().position(|t| t.to_picos().is_none()) {
                return Err(ValidationError::new(
                    format!("stations[{i}].schedule_s[{j}]"),
                    "broadcast times must be whole picoseconds within ±106 days",
                ));
            }
        }
        let t = &self.terminal;
        check_point("terminal.true_pos_m".into(), &t.true_position)?;
        if !(t.error_limit.is_finite() && t.error_limit > 0.0) {
            return Err(ValidationError::new(
                "terminal.verifier.error_limit_m",
                "must be positive",
            ));
        }
        if t.listen_window < Span::ZERO {
            return Err(ValidationError::new(
                "terminal.verifier.listen_window_ms",
                "must be non-negative",
            ));
        }
        if !(t.clock.drift_per_day.is_finite() && t.clock.drift_per_day >= 0.0) {
            return Err(ValidationError::new(
                "terminal.clock.drift_per_day",
                "must be a non-negative magnitude",
            ));
        }
        if !(t.clock.validity_days.is_finite() && t.clock.validity_days > 0.0) {
            return Err(ValidationError::new(
                "terminal.clock.validity_days",
                "must be positive",
            ));
        }
        if !t.clock.initial_offset.is_finite() {
            return Err(ValidationError::new(
                "terminal.clock.offset_s",
                "must be finite",
            ));
        }
        if t.listen_from < t.clock.last_sync {
            return Err(ValidationError::new(
                "terminal.listen_from_s",
                "cannot listen before the clock's last sync",
            ));
        }

        let emissions = self.emission_plan();
        for (i, a) in self.attacks.iter().enumerate() {
            if let Some(target) = &a.target {
                check_point(format!("attacks[{i}].target_m"), target)?;
            }
            let unknown = |field: &str, id: &StationId| {
                ValidationError::new(
                    format!("attacks[{i}].{field}"),
                    format!("unknown station {id}"),
                )
            };
            match &a.kind {
                AttackKind::Forge {
                    fake_pos,
                    emitter_pos,
                    signature,
                    ..
                } => {
                    check_point(format!("attacks[{i}].fake_pos_m"), fake_pos)?;
                    check_point(format!("attacks[{i}].emitter_pos_m"), emitter_pos)?;
                    match signature {
                        SignatureSource::KeyOf(id) if self.station(id).is_none() => {
                            return Err(unknown("signature", id));
                        }
                        SignatureSource::Transplant { emission }
                            if *emission >= emissions.len() =>
                        {
                            return Err(ValidationError::new(
                                format!("attacks[{i}].signature"),
                                format!("no emission {emission}"),
                            ));
                        }
                        _ => {}
                    }
                }
                AttackKind::Replay {
                    emission,
                    deliver_at,
                } => {
                    let Some(e) = emissions.get(*emission) else {
                        return Err(ValidationError::new(
                            format!("attacks[{i}].emission"),
                            format!("no emission {emission} (scenario has {})", emissions.len()),
                        ));
                    };
                    if *deliver_at < e.direct_arrival {
                        return Err(ValidationError::new(
                            format!("attacks[{i}].deliver_at_s"),
                            format!(
                                "replay before the original could arrive ({})",
                                e.direct_arrival
                            ),
                        ));
                    }
                }
                AttackKind::Delay { station, .. } => {
                    if self.station(station).is_none() {
                        return Err(unknown("station", station));
                    }
                }
                AttackKind::SteerDelay => {
                    if a.target.is_none() {
                        return Err(ValidationError::new(
                            format!("attacks[{i}].target_m"),
                            "steer_delay needs a target",
                        ));
                    }
                }
                AttackKind::ColludeRelay { relays, .. } => {
                    for (j, r) in relays.iter().enumerate() {
                        if self.station(&r.station).is_none() {
                            return Err(unknown(&format!("relays[{j}].station"), &r.station));
                        }
                        check_point(format!("attacks[{i}].relays[{j}].pos_m"), &r.position)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Honest emissions in `(t_s, station order)` order. Indices into this
    /// list are what replay and transplant attacks refer to.
    fn emission_plan(&self) -> Vec<PlannedEmission> {
        let mut plan: Vec<PlannedEmission> = self
            .stations
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                s.schedule.iter().map(move |&t| PlannedEmission {
                    station: si,
                    t_s: t,
                    direct_arrival: t + Span::light_time(
                        s.position.distance(&self.terminal.true_position),
                        self.c,
                    ),
                })
            })
            .collect();
        plan.sort_by_key(|e| (e.t_s, e.station));
        plan
    }
}

struct PlannedEmission {
    station: usize,
    t_s: Instant,
    direct_arrival: Instant,
}

/// A station beacon as it left the antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRecord {
    pub station_id: StationId,
    pub position: Point,
    pub t_s: Instant,
    /// When the signal would reach the terminal over the straight path.
    pub direct_arrival: Instant,
    pub broadcast: Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "via", rename_all = "snake_case")]
pub enum DeliveryOrigin {
    Direct {
        emission: usize,
    },
    Delayed {
        emission: usize,
        extra_s: f64,
    },
    Relayed {
        emission: usize,
        node: Point,
        hold_s: f64,
    },
    Replayed {
        emission: usize,
        attack: usize,
    },
    Forged {
        attack: usize,
    },
}

impl DeliveryOrigin {
    pub fn is_forged(&self) -> bool {
        matches!(self, DeliveryOrigin::Forged { .. })
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, DeliveryOrigin::Direct { .. })
    }

    pub fn emission(&self) -> Option<usize> {
        match *self {
            DeliveryOrigin::Direct { emission }
            | DeliveryOrigin::Delayed { emission, .. }
            | DeliveryOrigin::Relayed { emission, .. }
            | DeliveryOrigin::Replayed { emission, .. } => Some(emission),
            DeliveryOrigin::Forged { .. } => None,
        }
    }
}

/// One signal arriving at the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub seq: u64,
    pub origin: DeliveryOrigin,
    pub broadcast: Broadcast,
    /// When and where the information in this signal first went on air.
    pub emitted_at: Instant,
    pub emitted_from: Point,
    pub arrival: Instant,
    /// Length of the path actually travelled, meters.
    pub path_length: f64,
    /// Inner-clock reading, if the delivery made it into the receipt.
    pub t_m: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackLog {
    pub attack: usize,
    pub kind: &'static str,
    pub deliveries: Vec<u64>,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// Accepted within the error limit of the true position.
    Truthful,
    /// Accepted somewhere else.
    Spoofed,
    /// Aborted or rejected.
    Refused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub scenario: String,
    pub seed: u64,
    pub c: f64,
    pub terminal_position: Point,
    pub emissions: Vec<EmissionRecord>,
    /// Every delivery, in arrival order.
    pub deliveries: Vec<Delivery>,
    /// For each receipt entry, the `seq` of the delivery it came from.
    pub receipt_seqs: Vec<u64>,
    pub verification: Verification,
    pub attacks: Vec<AttackLog>,
    pub classification: Classification,
    /// Accepted within the error limit of the adversary's target.
    pub target_hit: bool,
}

impl TraceReport {
    pub fn result(&self) -> &PositionResult {
        &self.verification.result
    }

    /// Sequence numbers of deliveries that arrived sooner than light allows
    /// (more than one tick early).
    pub fn physics_violations(&self) -> Vec<u64> {
        self.deliveries
            .iter()
            .filter(|d| {
                let floor = d.emitted_at
                    + Span::light_time(d.emitted_from.distance(&self.terminal_position), self.c);
                d.arrival.ticks() < floor.ticks() - 1
            })
            .map(|d| d.seq)
            .collect()
    }

    pub fn delivery(&self, seq: u64) -> Option<&Delivery> {
        self.deliveries.iter().find(|d| d.seq == seq)
    }

    /// Distance bound implied by each accepted observation, paired with the
    /// station's true distance to the terminal.
    pub fn bounds_vs_truth(&self) -> Vec<(StationId, f64, f64)> {
        self.verification
            .observations
            .iter()
            .map(|o| {
                (
                    o.station_id,
                    o.bound,
                    o.station_pos.distance(&self.terminal_position),
                )
            })
            .collect()
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Classification::Truthful => "truthful",
            Classification::Spoofed => "spoofed",
            Classification::Refused => "refused",
        };
        f.write_str(s)
    }
}

/// Extra delay a relay at `node_pos` imposes on the station→terminal path, seconds.
pub fn collude_relay_delay(
    station_pos: &Point,
    node_pos: &Point,
    terminal_pos: &Point,
    c: f64,
) -> f64 {
    (station_pos.distance(node_pos) + node_pos.distance(terminal_pos)
        - station_pos.distance(terminal_pos))
        / c
}

/// Builds a replay of emission `index` from a recorded trace, delivered at `new_delivery`.
pub fn record_and_replay(
    trace: &TraceReport,
    index: usize,
    new_delivery: Instant,
) -> Result<AttackSpec, AttackError> {
    let e = trace
        .emissions
        .get(index)
        .ok_or(AttackError::UnknownEmission(index))?;
    if new_delivery < e.direct_arrival {
        return Err(AttackError::CausalityViolation {
            requested: new_delivery,
            earliest: e.direct_arrival,
        });
    }
    Ok(AttackSpec::new(AttackKind::Replay {
        emission: index,
        deliver_at: new_delivery,
    }))
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Emit { emission: usize },
    Forge { attack: usize },
    Arrive { pending: usize },
}

struct PendingDelivery {
    origin: DeliveryOrigin,
    broadcast: Broadcast,
    emitted_at: Instant,
    emitted_from: Point,
    path_length: f64,
    attack: Option<usize>,
}

struct Medium<'a> {
    scenario: &'a Scenario,
    queue: BinaryHeap<Reverse<(Instant, u64, EventKind)>>,
    next_seq: u64,
    pending: Vec<PendingDelivery>,
    deliveries: Vec<Delivery>,
    logs: Vec<AttackLog>,
}

impl<'a> Medium<'a> {
    fn schedule(&mut self, at: Instant, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at, seq, kind)));
        seq
    }

    fn send(&mut self, arrival: Instant, d: PendingDelivery) {
        let attack = d.attack;
        self.pending.push(d);
        let seq = self.schedule(
            arrival,
            EventKind::Arrive {
                pending: self.pending.len() - 1,
            },
        );
        if let Some(a) = attack {
            self.logs[a].deliveries.push(seq);
        }
    }
}

fn steer_delay(station: &Point, honest: &Point, target: &Point, c: f64) -> ExtraDelay {
    let gap = station.distance(target) - station.distance(honest);
    ExtraDelay::from_secs((gap / c).max(0.0)).unwrap_or(ExtraDelay::ZERO)
}

/// Runs one scenario to completion: emissions, adversary, receipt, verification.
pub fn run_scenario(s: &Scenario) -> Result<TraceReport, ValidationError> {
    s.validate()?;
    let terminal = s.terminal.true_position;
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);

    let emissions: Vec<EmissionRecord> = s
        .emission_plan()
        .into_iter()
        .map(|p| {
            let st = &s.stations[p.station];
            let broadcast = make_broadcast(&st.key, st.id, p.t_s, st.position).map_err(|e| {
                ValidationError::new(format!("stations[{}]", p.station), e.to_string())
            })?;
            Ok(EmissionRecord {
                station_id: st.id,
                position: broadcast.body.x_s,
                t_s: p.t_s,
                direct_arrival: p.direct_arrival,
                broadcast,
            })
        })
        .collect::<Result<_, ValidationError>>()?;

    let mut medium = Medium {
        scenario: s,
        queue: BinaryHeap::new(),
        next_seq: 0,
        pending: Vec::new(),
        deliveries: Vec::new(),
        logs: s
            .attacks
            .iter()
            .enumerate()
            .map(|(i, a)| AttackLog {
                attack: i,
                kind: a.kind_name(),
                deliveries: Vec::new(),
                note: String::new(),
            })
            .collect(),
    };

    for (i, e) in emissions.iter().enumerate() {
        medium.schedule(e.t_s, EventKind::Emit { emission: i });
    }
    for (i, a) in s.attacks.iter().enumerate() {
        match &a.kind {
            AttackKind::Forge { emit_at, .. } => {
                medium.schedule(*emit_at, EventKind::Forge { attack: i });
            }
            AttackKind::Replay {
                emission,
                deliver_at,
            } => {
                let e = &emissions[*emission];
                medium.logs[i].note =
                    format!("replay of emission {emission} from {}", e.station_id);
                medium.send(
                    *deliver_at,
                    PendingDelivery {
                        origin: DeliveryOrigin::Replayed {
                            emission: *emission,
                            attack: i,
                        },
                        broadcast: e.broadcast.clone(),
                        emitted_at: e.t_s,
                        emitted_from: e.position,
                        path_length: s.c * (*deliver_at - e.t_s).as_secs(),
                        attack: Some(i),
                    },
                );
            }
            _ => {}
        }
    }

    while let Some(Reverse((now, seq, kind))) = medium.queue.pop() {
        match kind {
            EventKind::Emit { emission } => emit(&mut medium, &emissions, emission, now),
            EventKind::Forge { attack } => forge(&mut medium, &emissions, attack, now, &mut rng),
            EventKind::Arrive { pending } => {
                let p = &medium.pending[pending];
                medium.deliveries.push(Delivery {
                    seq,
                    origin: p.origin.clone(),
                    broadcast: p.broadcast.clone(),
                    emitted_at: p.emitted_at,
                    emitted_from: p.emitted_from,
                    arrival: now,
                    path_length: p.path_length,
                    t_m: None,
                });
            }
        }
    }

    // Receiver frame: from the first arrival at or after listen_from.
    let t = &s.terminal;
    let mut receipt = Receipt::default();
    let mut receipt_seqs = Vec::new();
    if let Some(open) = medium
        .deliveries
        .iter()
        .map(|d| d.arrival)
        .find(|&a| a >= t.listen_from)
    {
        let close = open + t.listen_window;
        for d in medium.deliveries.iter_mut() {
            if d.arrival < open || d.arrival > close {
                continue;
            }
            let t_m = t
                .clock
                .read(d.arrival, t.drift_sign)
                .expect("listen_from is not before last_sync");
            d.t_m = Some(t_m);
            receipt.push(d.broadcast.clone(), t_m);
            receipt_seqs.push(d.seq);
        }
    }

    let verification = verify_position_traced(&receipt, &s.verifier_config());
    let target = s.target();
    let (classification, target_hit) = match verification.result.accepted() {
        Some(acc) => {
            let p = &acc.fix.position;
            let class = if p.distance(&terminal) <= t.error_limit {
                Classification::Truthful
            } else {
                Classification::Spoofed
            };
            (
                class,
                target.is_some_and(|q| p.distance(&q) <= t.error_limit),
            )
        }
        None => (Classification::Refused, false),
    };

    Ok(TraceReport {
        scenario: s.name.clone(),
        seed: s.rng_seed,
        c: s.c,
        terminal_position: terminal,
        emissions,
        deliveries: medium.deliveries,
        receipt_seqs,
        verification,
        attacks: medium.logs,
        classification,
        target_hit,
    })
}

fn emit(m: &mut Medium<'_>, emissions: &[EmissionRecord], index: usize, now: Instant) {
    let s = m.scenario;
    let e = &emissions[index];
    let terminal = s.terminal.true_position;
    let direct = e.position.distance(&terminal);

    // A relay intercepts the signal and replaces the direct path.
    for (ai, a) in s.attacks.iter().enumerate() {
        let AttackKind::ColludeRelay { relays, .. } = &a.kind else {
            continue;
        };
        if let Some(r) = relays.iter().find(|r| r.station == e.station_id) {
            let path = e.position.distance(&r.position) + r.position.distance(&terminal);
            let steer = a.target.map_or(ExtraDelay::ZERO, |q| {
                let gap = e.position.distance(&q) - path;
                ExtraDelay::from_secs((gap / s.c).max(0.0)).unwrap_or(ExtraDelay::ZERO)
            });
            let hold = r.hold + steer;
            m.send(
                now + Span::light_time(path, s.c) + hold.span(),
                PendingDelivery {
                    origin: DeliveryOrigin::Relayed {
                        emission: index,
                        node: r.position,
                        hold_s: hold.as_secs(),
                    },
                    broadcast: e.broadcast.clone(),
                    emitted_at: now,
                    emitted_from: e.position,
                    path_length: path,
                    attack: Some(ai),
                },
            );
            return;
        }
    }

    let mut extra = ExtraDelay::ZERO;
    let mut by: Vec<usize> = Vec::new();
    for (ai, a) in s.attacks.iter().enumerate() {
        let add = match &a.kind {
            AttackKind::Delay { station, extra } if *station == e.station_id => *extra,
            AttackKind::SteerDelay => {
                let q = a.target.expect("validated");
                steer_delay(&e.position, &terminal, &q, s.c)
            }
            _ => continue,
        };
        extra = extra + add;
        by.push(ai);
    }
    let arrival = now + Span::light_time(direct, s.c) + extra.span();
    let origin = if by.is_empty() {
        DeliveryOrigin::Direct { emission: index }
    } else {
        DeliveryOrigin::Delayed {
            emission: index,
            extra_s: extra.as_secs(),
        }
    };
    m.send(
        arrival,
        PendingDelivery {
            origin,
            broadcast: e.broadcast.clone(),
            emitted_at: now,
            emitted_from: e.position,
            path_length: direct,
            attack: by.first().copied(),
        },
    );
    // Credit the remaining delaying attacks too.
    if by.len() > 1 {
        let seq = m.next_seq - 1;
        for &ai in &by[1..] {
            m.logs[ai].deliveries.push(seq);
        }
    }
}

fn forge(
    m: &mut Medium<'_>,
    emissions: &[EmissionRecord],
    attack: usize,
    now: Instant,
    rng: &mut ChaCha8Rng,
) {
    let s = m.scenario;
    let AttackKind::Forge {
        claimed,
        fake_t_s,
        fake_pos,
        signature,
        emitter_pos,
        ..
    } = &s.attacks[attack].kind
    else {
        unreachable!("forge events come from forge attacks");
    };
    let body = BeaconBody::new(*claimed, *fake_t_s, *fake_pos);
    let sig_len = s
        .station(claimed)
        .map_or(SchemeKind::default(), |st| st.key.kind())
        .signature_len();
    let signature = match signature {
        SignatureSource::Random => {
            let mut sig = vec![0u8; sig_len];
            rng.fill_bytes(&mut sig);
            sig
        }
        SignatureSource::Zeroed => vec![0u8; sig_len],
        SignatureSource::KeyOf(id) => {
            let key = &s.station(id).expect("validated").key;
            sign_beacon(key, body)
                .map(|b| b.signature)
                .unwrap_or_else(|_| vec![0u8; sig_len])
        }
        SignatureSource::Transplant { emission } => {
            emissions[*emission].broadcast.signature.clone()
        }
    };
    let path = emitter_pos.distance(&s.terminal.true_position);
    m.logs[attack].note = format!("forged beacon claiming {claimed} at {fake_pos}");
    m.send(
        now + Span::light_time(path, s.c),
        PendingDelivery {
            origin: DeliveryOrigin::Forged { attack },
            broadcast: Broadcast { body, signature },
            emitted_at: now,
            emitted_from: *emitter_pos,
            path_length: path,
            attack: Some(attack),
        },
    );
}
