//! Challenge-response distance bounding, for comparison.
//!
//! A Brands–Chaum style exchange at message granularity: the claimant
//! commits to nonces `m_i`, the verifier sends challenges `α_i`, the claimant
//! answers each with `β_i = m_i ⊕ α_i`, then opens the commitment and signs
//! the `α‖β` transcript. The verifier bounds the distance from the longest
//! round trip minus the declared processing time.
//!
//! The weak spot is that the response is a pure function of public
//! challenges and secret nonces. Whoever knows the nonces can answer from
//! anywhere, and the claimant's signature over the transcript is still good.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airsim::{
    run_scenario, AttackKind, Classification, Scenario, TraceReport, ValidationError,
};
use crate::authsig::{PublicKey, SchemeKind, SigningKey, StationId};
use crate::geom::Point;
use crate::ranging::{Fix, RangeObservation, RangingError};
use crate::timebase::{Instant, Span};
use crate::verifier::{judge_observations, Located, PositionResult, Reason};

const COMMIT_TAG: &[u8] = b"unipos-commit-v1";
const TRANSCRIPT_TAG: &[u8] = b"unipos-bidir-v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BidirError {
    #[error("invalid exchange parameter {field}: {message}")]
    InvalidParams {
        field: &'static str,
        message: String,
    },
    #[error("session has no rounds")]
    EmptySession,
    #[error("round {round}: response does not precede its challenge")]
    Acausal { round: usize },
    #[error("commitment does not open to the revealed nonces")]
    BadCommitment,
    #[error("round {round}: wrong response")]
    WrongResponse { round: usize },
    #[error("transcript signature does not verify")]
    BadSignature,
    #[error("scenario cannot be run under both protocols: {0}")]
    ComparisonUnsupported(String),
    #[error(transparent)]
    Scenario(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidirParams {
    /// Bits per challenge and response, 1 to 64.
    pub k_bits: u32,
    pub rounds: usize,
    /// Actual time the responder spends per round, seconds.
    pub processing_time: f64,
    /// What the verifier subtracts for processing, seconds.
    pub declared_processing: f64,
    /// Delay an adversary adds to every round trip, seconds.
    pub channel_delay: f64,
    pub c: f64,
    pub seed: u64,
}

impl Default for BidirParams {
    fn default() -> Self {
        BidirParams {
            k_bits: 1,
            rounds: 32,
            processing_time: 0.0,
            declared_processing: 0.0,
            channel_delay: 0.0,
            c: crate::timebase::C_DEFAULT,
            seed: 0,
        }
    }
}

impl BidirParams {
    pub fn validate(&self) -> Result<(), BidirError> {
        let bad = |field, message: &str| {
            Err(BidirError::InvalidParams {
                field,
                message: message.into(),
            })
        };
        if !(1..=64).contains(&self.k_bits) {
            return bad("k_bits", "must be between 1 and 64");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        for (field, v) in [
            ("processing_time", self.processing_time),
            ("declared_processing", self.declared_processing),
            ("channel_delay", self.channel_delay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be a finite non-negative number of seconds");
            }
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad("c", "must be positive");
        }
        Ok(())
    }

    fn mask(&self) -> u64 {
        if self.k_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.k_bits) - 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExchangeRound {
    pub alpha: u64,
    pub beta: u64,
    pub challenge_emit: Instant,
    pub response_arrival: Instant,
}

impl ExchangeRound {
    pub fn rtt(&self) -> Span {
        self.response_arrival - self.challenge_emit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub k_bits: u32,
    pub rounds: Vec<ExchangeRound>,
    pub commitment: [u8; 32],
    /// Revealed after the rapid phase.
    pub opened_nonces: Vec<u64>,
    pub opening_salt: [u8; 32],
    /// Claimant's signature over the `α‖β` transcript it saw.
    pub signature: Vec<u8>,
    pub declared_processing: Span,
}

impl Session {
    /// `c · (max RTT − declared processing) / 2`, meters.
    pub fn rtt_bound(&self, c: f64) -> f64 {
        let max_rtt = self
            .rounds
            .iter()
            .map(|r| r.rtt())
            .max()
            .unwrap_or(Span::ZERO);
        c * (max_rtt.as_secs() - self.declared_processing.as_secs()) / 2.0
    }

    pub fn transcript(&self) -> Vec<u8> {
        transcript(self.k_bits, self.rounds.iter().map(|r| (r.alpha, r.beta)))
    }
}

pub fn commit(k_bits: u32, nonces: &[u64], salt: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(COMMIT_TAG);
    h.update(k_bits.to_le_bytes());
    h.update(salt);
    for m in nonces {
        h.update(m.to_le_bytes());
    }
    h.finalize().into()
}

fn transcript(k_bits: u32, pairs: impl Iterator<Item = (u64, u64)>) -> Vec<u8> {
    let mut out = TRANSCRIPT_TAG.to_vec();
    out.extend_from_slice(&k_bits.to_le_bytes());
    for (a, b) in pairs {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

/// Checks a finished session and returns its distance bound.
pub fn verify_session(session: &Session, claimant: &PublicKey, c: f64) -> Result<f64, BidirError> {
    if session.rounds.is_empty() {
        return Err(BidirError::EmptySession);
    }
    if let Some(round) = session
        .rounds
        .iter()
        .position(|r| r.response_arrival <= r.challenge_emit)
    {
        return Err(BidirError::Acausal { round });
    }
    if session.opened_nonces.len() != session.rounds.len()
        || commit(
            session.k_bits,
            &session.opened_nonces,
            &session.opening_salt,
        ) != session.commitment
    {
        return Err(BidirError::BadCommitment);
    }
    let mask = if session.k_bits >= 64 {
        u64::MAX
    } else {
        (1u64 << session.k_bits) - 1
    };
    for (round, (r, m)) in session
        .rounds
        .iter()
        .zip(&session.opened_nonces)
        .enumerate()
    {
        if r.beta != (r.alpha ^ m) & mask {
            return Err(BidirError::WrongResponse { round });
        }
    }
    if !claimant.verify(&session.transcript(), &session.signature) {
        return Err(BidirError::BadSignature);
    }
    Ok(session.rtt_bound(c))
}

/// Who answers the rapid-phase challenges.
enum Responder {
    /// The claimant itself.
    Claimant,
    /// Someone else who knows the nonces.
    Informed,
    /// Someone else guessing the nonces.
    Guessing,
}

struct Exchange<'a> {
    /// One-way path length from the verifier to whoever answers.
    path: f64,
    /// Extra round-trip delay on top of `params.channel_delay`.
    extra_rtt: Span,
    claimant_key: &'a SigningKey,
    responder: Responder,
}

fn run(ex: Exchange<'_>, params: &BidirParams, rng: &mut ChaCha8Rng) -> Session {
    let mask = params.mask();
    let nonces: Vec<u64> = (0..params.rounds).map(|_| rng.next_u64() & mask).collect();
    let mut salt = [0u8; 32];
    rng.fill_bytes(&mut salt);
    let commitment = commit(params.k_bits, &nonces, &salt);

    let trip = Span::light_time(2.0 * ex.path, params.c)
        + Span::from_secs(params.processing_time)
        + Span::from_secs(params.channel_delay)
        + ex.extra_rtt;
    let mut now = Instant::EPOCH;
    let mut rounds = Vec::with_capacity(params.rounds);
    let mut claimant_view = Vec::with_capacity(params.rounds);
    for m in &nonces {
        let alpha = rng.next_u64() & mask;
        let honest = (alpha ^ m) & mask;
        let beta = match ex.responder {
            Responder::Claimant | Responder::Informed => honest,
            Responder::Guessing => (alpha ^ rng.gen::<u64>()) & mask,
        };
        let arrival = now + trip;
        rounds.push(ExchangeRound {
            alpha,
            beta,
            challenge_emit: now,
            response_arrival: arrival,
        });
        // The claimant sees the same challenge, forwarded if need be, and
        // signs what it would have answered.
        claimant_view.push((alpha, honest));
        now = arrival;
    }
    let signature = ex
        .claimant_key
        .sign(&transcript(params.k_bits, claimant_view.into_iter()));
    Session {
        k_bits: params.k_bits,
        rounds,
        commitment,
        opened_nonces: nonces,
        opening_salt: salt,
        signature,
        declared_processing: Span::from_secs(params.declared_processing),
    }
}

/// Honest exchange between a verifier and a claimant. Returns the session
/// and its distance bound.
pub fn run_exchange(
    verifier_pos: &Point,
    claimant_pos: &Point,
    claimant_key: &SigningKey,
    params: &BidirParams,
) -> Result<(Session, f64), BidirError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let session = run(
        Exchange {
            path: verifier_pos.distance(claimant_pos),
            extra_rtt: Span::ZERO,
            claimant_key,
            responder: Responder::Claimant,
        },
        params,
        &mut rng,
    );
    let bound = session.rtt_bound(params.c);
    Ok((session, bound))
}

#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub verifier_pos: Point,
    pub claimant_pos: Point,
    pub claimant_key: SigningKey,
    pub params: BidirParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub session: Session,
    pub nonces_leaked: bool,
    /// Where the responses physically came from.
    pub responder_pos: Point,
    pub rtt_bound: f64,
    pub verdict: Result<f64, BidirError>,
}

impl AttackOutcome {
    pub fn accepted(&self) -> bool {
        self.verdict.is_ok()
    }
}

/// The adversary sits at `adversary_pos`, answers challenges itself and
/// forwards them to the claimant so the claimant signs the transcript.
/// Answers are right only if the claimant's nonces were leaked.
pub fn stolen_nonce_attack(
    setup: &SessionSetup,
    adversary_pos: &Point,
    nonces_leaked: bool,
) -> Result<AttackOutcome, BidirError> {
    setup.params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.params.seed);
    let session = run(
        Exchange {
            path: setup.verifier_pos.distance(adversary_pos),
            extra_rtt: Span::ZERO,
            claimant_key: &setup.claimant_key,
            responder: if nonces_leaked {
                Responder::Informed
            } else {
                Responder::Guessing
            },
        },
        &setup.params,
        &mut rng,
    );
    let verdict = verify_session(&session, &setup.claimant_key.public_key(), setup.params.c);
    Ok(AttackOutcome {
        rtt_bound: session.rtt_bound(setup.params.c),
        session,
        nonces_leaked,
        responder_pos: *adversary_pos,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationSession {
    pub station_id: StationId,
    pub station_pos: Point,
    pub responder_pos: Point,
    pub rtt_bound: f64,
    pub true_distance: f64,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidirRun {
    pub sessions: Vec<StationSession>,
    pub result: PositionResult,
    pub fix: Option<Fix>,
    pub solver_error: Option<RangingError>,
    pub classification: Classification,
    pub target_hit: bool,
}

impl BidirRun {
    /// Some accepted session claims the terminal is closer than it is.
    pub fn shortened(&self) -> bool {
        self.sessions
            .iter()
            .any(|s| s.accepted && s.rtt_bound < s.true_distance - 1e-6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub unidirectional: TraceReport,
    pub bidirectional: BidirRun,
}

/// Runs the scenario under both protocols. For the bidirectional side every
/// station acts as a distance-bounding verifier against the terminal, and
/// the resulting bounds go through the same geometric gates as the
/// unidirectional fix.
///
/// A one-way delay `e` maps to a round-trip delay `2e`, which lengthens the
/// bound by the same `c·e`. Relays forward challenges to the terminal unless
/// nonces leaked, in which case they answer themselves.
pub fn compare_protocols(
    scenario: &Scenario,
    params: &BidirParams,
) -> Result<Comparison, BidirError> {
    params.validate()?;
    for (i, a) in scenario.attacks.iter().enumerate() {
        if let AttackKind::Forge { .. } | AttackKind::Replay { .. } = a.kind {
            return Err(BidirError::ComparisonUnsupported(format!(
                "attacks[{i}]: {} has no round-trip counterpart",
                a.kind_name()
            )));
        }
    }
    let uni = run_scenario(scenario)?;

    let terminal = scenario.terminal.true_position;
    let c = scenario.c;
    let params = BidirParams {
        c,
        ..params.clone()
    };
    let claimant_key = SigningKey::derive(SchemeKind::Ed25519, scenario.rng_seed, b"terminal");
    let claimant_pub = claimant_key.public_key();
    let target = scenario.target();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ scenario.rng_seed);

    let mut sessions = Vec::with_capacity(scenario.stations.len());
    for st in &scenario.stations {
        let s = st.position;
        let mut path = s.distance(&terminal);
        let mut responder_pos = terminal;
        let mut responder = Responder::Claimant;
        let mut one_way = 0.0f64;

        for a in &scenario.attacks {
            match &a.kind {
                AttackKind::Delay { station, extra } if *station == st.id => {
                    one_way += extra.as_secs()
                }
                AttackKind::SteerDelay => {
                    let q = a.target.expect("validated");
                    one_way += ((s.distance(&q) - path) / c).max(0.0);
                }
                AttackKind::ColludeRelay { relays, nonce_leak } => {
                    let Some(r) = relays.iter().find(|r| r.station == st.id) else {
                        continue;
                    };
                    if *nonce_leak {
                        path = s.distance(&r.position);
                        responder_pos = r.position;
                        responder = Responder::Informed;
                    } else {
                        path = s.distance(&r.position) + r.position.distance(&terminal);
                    }
                    let steer = a
                        .target
                        .map_or(0.0, |q| ((s.distance(&q) - path) / c).max(0.0));
                    one_way += r.hold.as_secs() + steer;
                }
                _ => {}
            }
        }

        let session = run(
            Exchange {
                path,
                extra_rtt: Span::from_secs(2.0 * one_way),
                claimant_key: &claimant_key,
                responder,
            },
            &params,
            &mut rng,
        );
        let verdict = verify_session(&session, &claimant_pub, c);
        sessions.push(StationSession {
            station_id: st.id,
            station_pos: s,
            responder_pos,
            rtt_bound: session.rtt_bound(c),
            true_distance: s.distance(&terminal),
            accepted: verdict.is_ok(),
            error: verdict.err().map(|e| e.to_string()),
        });
    }

    let observations: Vec<RangeObservation> = sessions
        .iter()
        .filter(|s| s.accepted)
        .map(|s| RangeObservation {
            station_id: s.station_id,
            station_pos: s.station_pos,
            bound: s.rtt_bound,
        })
        .collect();
    let limit = scenario.terminal.error_limit;
    let located = if observations.len() < scenario.dims.simplex_size() {
        Located {
            result: PositionResult::Abort(Reason::TooFewValidSignatures),
            fix: None,
            solver_error: None,
        }
    } else {
        judge_observations(&observations, scenario.dims, limit)
    };
    let Located {
        result,
        fix,
        solver_error,
    } = located;
    let (classification, target_hit) = match result.accepted() {
        Some(acc) => {
            let p = &acc.fix.position;
            let class = if p.distance(&terminal) <= limit {
                Classification::Truthful
            } else {
                Classification::Spoofed
            };
            (class, target.is_some_and(|q| p.distance(&q) <= limit))
        }
        None => (Classification::Refused, false),
    };

    Ok(Comparison {
        unidirectional: uni,
        bidirectional: BidirRun {
            sessions,
            result,
            fix,
            solver_error,
            classification,
            target_hit,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> SigningKey {
        SigningKey::derive(SchemeKind::Ed25519, 7, b"claimant")
    }

    fn params(k_bits: u32, seed: u64) -> BidirParams {
        BidirParams {
            k_bits,
            rounds: 8,
            seed,
            ..BidirParams::default()
        }
    }

    #[test]
    fn three_hundred_meters() {
        let (session, bound) = run_exchange(
            &Point::new2(0.0, 0.0),
            &Point::new2(300.0, 0.0),
            &key(),
            &params(32, 1),
        )
        .unwrap();
        assert!((session.rounds[0].rtt().as_secs() - 2e-6).abs() < 1e-18);
        assert!((bound - 300.0).abs() < 1e-9);
        assert_eq!(
            verify_session(&session, &key().public_key(), 3e8),
            Ok(bound)
        );
    }

    #[test]
    fn understated_processing_inflates_bound() {
        let tau = 1e-7;
        let p = BidirParams {
            processing_time: 2e-7,
            declared_processing: 2e-7 - tau,
            ..params(32, 2)
        };
        let (_, bound) =
            run_exchange(&Point::new2(0.0, 0.0), &Point::new2(300.0, 0.0), &key(), &p).unwrap();
        assert!((bound - (300.0 + 3e8 * tau / 2.0)).abs() < 1e-6);
    }

    #[test]
    fn bad_params_are_rejected() {
        for p in [
            BidirParams {
                k_bits: 0,
                ..params(1, 0)
            },
            BidirParams {
                k_bits: 65,
                ..params(1, 0)
            },
            BidirParams {
                rounds: 0,
                ..params(1, 0)
            },
            BidirParams {
                processing_time: -1e-9,
                ..params(1, 0)
            },
            BidirParams {
                channel_delay: f64::NAN,
                ..params(1, 0)
            },
        ] {
            assert!(matches!(
                p.validate(),
                Err(BidirError::InvalidParams { .. })
            ));
        }
    }

    #[test]
    fn tampered_sessions_fail() {
        let (session, _) = run_exchange(
            &Point::new2(0.0, 0.0),
            &Point::new2(30.0, 0.0),
            &key(),
            &params(32, 3),
        )
        .unwrap();
        let pk = key().public_key();
        let mut s = session.clone();
        s.rounds[3].beta ^= 1;
        assert_eq!(
            verify_session(&s, &pk, 3e8),
            Err(BidirError::WrongResponse { round: 3 })
        );
        let mut s = session.clone();
        s.opened_nonces[0] ^= 1;
        assert_eq!(verify_session(&s, &pk, 3e8), Err(BidirError::BadCommitment));
        let mut s = session.clone();
        s.signature[0] ^= 1;
        assert_eq!(verify_session(&s, &pk, 3e8), Err(BidirError::BadSignature));
        let other = SigningKey::derive(SchemeKind::Ed25519, 8, b"claimant").public_key();
        assert_eq!(
            verify_session(&session, &other, 3e8),
            Err(BidirError::BadSignature)
        );
    }

    fn setup(seed: u64) -> SessionSetup {
        SessionSetup {
            verifier_pos: Point::new2(0.0, 0.0),
            claimant_pos: Point::new2(10_000.0, 0.0),
            claimant_key: key(),
            params: params(32, seed),
        }
    }

    #[test]
    fn leaked_nonces_shorten_distance() {
        let out = stolen_nonce_attack(&setup(4), &Point::new2(10.0, 0.0), true).unwrap();
        assert!(out.accepted());
        assert!((out.rtt_bound - 10.0).abs() < 1e-6);
        assert!(out.rtt_bound < 10_000.0);
    }

    #[test]
    fn guessing_never_passes_at_32_bits() {
        let accepted = (0..1000)
            .filter(|&seed| {
                stolen_nonce_attack(&setup(seed), &Point::new2(10.0, 0.0), false)
                    .unwrap()
                    .accepted()
            })
            .count();
        assert_eq!(accepted, 0);
    }

    #[test]
    fn colocated_adversary_gets_honest_bound() {
        let s = setup(5);
        let out = stolen_nonce_attack(&s, &s.claimant_pos, true).unwrap();
        let (_, honest) =
            run_exchange(&s.verifier_pos, &s.claimant_pos, &s.claimant_key, &s.params).unwrap();
        assert!(out.accepted());
        assert!((out.rtt_bound - honest).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn channel_delay_only_lengthens(tau in 0.0f64..1e-3, d in 0.0f64..1e5, seed: u64) {
            let p = BidirParams { channel_delay: tau, ..params(16, seed) };
            let (_, bound) = run_exchange(&Point::new2(0.0, 0.0), &Point::new2(d, 0.0), &key(), &p).unwrap();
            prop_assert!(bound >= d - 3e8 * 1e-18);
            prop_assert!((bound - (d + 3e8 * tau / 2.0)).abs() < 1e-6 * (1.0 + d));
        }

        #[test]
        fn bound_at_least_responder_distance(
            ax in -1e4f64..1e4, ay in -1e4f64..1e4, leak: bool, seed: u64,
        ) {
            let a = Point::new2(ax, ay);
            let out = stolen_nonce_attack(&setup(seed), &a, leak).unwrap();
            prop_assert!(out.rtt_bound >= Point::new2(0.0, 0.0).distance(&a) - 3e8 * 1e-18);
            // The leak flag gates acceptance.
            if out.accepted() {
                prop_assert!(leak);
            }
        }
    }
}
