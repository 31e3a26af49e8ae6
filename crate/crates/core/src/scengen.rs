//! Seeded random scenarios for property suites and corpus generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::airsim::{
    AttackKind, AttackSpec, ExtraDelay, RelayNode, Scenario, StationSpec, TerminalSpec,
    DEFAULT_LISTEN_WINDOW,
};
use crate::authsig::{snap_to_micros, SchemeKind, SigningKey, StationId};
use crate::geom::{signed_measure, Dims, Point};
use crate::timebase::{ClockModel, DriftSign, Instant, Span, C_DEFAULT};

/// Half-width of the box stations are drawn from, meters.
pub const ARENA: f64 = 1000.0;
pub const ERROR_LIMIT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpoofKind {
    Delay,
    Replay,
    Collusion,
}

impl SpoofKind {
    pub const ALL: [SpoofKind; 3] = [SpoofKind::Delay, SpoofKind::Replay, SpoofKind::Collusion];
}

fn random_point(rng: &mut ChaCha8Rng, dims: Dims, half: f64) -> Point {
    let mut c = [0.0; 3];
    for v in c.iter_mut().take(dims.count()) {
        *v = rng.gen_range(-half..half);
    }
    snap_to_micros(&Point::from_slice(&c[..dims.count()]).expect("2 or 3 coordinates"))
}

/// Random convex combination with every weight at least `floor`.
pub fn interior_point(rng: &mut ChaCha8Rng, vertices: &[Point], floor: f64) -> Point {
    let k = vertices.len();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let spare = 1.0 - floor * k as f64;
    let dims = vertices[0].dims();
    let mut c = [0.0; 3];
    for (v, r) in vertices.iter().zip(&raw) {
        let w = floor + spare * r / sum;
        for (a, x) in c.iter_mut().zip(v.coords()) {
            *a += w * x;
        }
    }
    Point::from_slice(&c[..dims.count()]).expect("same dims")
}

/// Station set whose first `dims + 1` members form a well-shaped simplex.
fn stations(
    rng: &mut ChaCha8Rng,
    dims: Dims,
    n: usize,
    seed: u64,
    scheme: SchemeKind,
) -> Vec<StationSpec> {
    let k = dims.simplex_size();
    // Reject slivers: measure must be a decent fraction of the arena.
    let min_measure = match dims {
        Dims::Two => 0.05 * ARENA * ARENA,
        Dims::Three => 0.01 * ARENA * ARENA * ARENA,
    };
    let mut pos: Vec<Point>;
    loop {
        pos = (0..k).map(|_| random_point(rng, dims, ARENA)).collect();
        if signed_measure(&pos).is_ok_and(|m| m.abs() >= min_measure) {
            break;
        }
    }
    pos.extend((k..n.max(k)).map(|_| random_point(rng, dims, ARENA)));
    pos.into_iter()
        .enumerate()
        .map(|(i, p)| {
            let label = format!("S{i}");
            StationSpec {
                id: StationId::from_label(&label).expect("short label"),
                position: p,
                key: SigningKey::derive(scheme, seed, label.as_bytes()),
                schedule: vec![Instant::from_secs(1.0)],
            }
        })
        .collect()
}

/// Honest scenario: truth strictly inside the first station simplex,
/// perfect clock, no adversary.
pub fn honest_scenario(seed: u64, dims: Dims, n_stations: usize, scheme: SchemeKind) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = stations(&mut rng, dims, n_stations, seed, scheme);
    let simplex: Vec<Point> = stations[..dims.simplex_size()]
        .iter()
        .map(|s| s.position)
        .collect();
    let truth = interior_point(&mut rng, &simplex, 0.05);
    Scenario {
        name: format!("honest-{}d-{seed}", dims.count()),
        dims,
        c: C_DEFAULT,
        rng_seed: seed,
        stations,
        terminal: TerminalSpec {
            true_position: truth,
            clock: ClockModel::perfect(30.0),
            drift_sign: DriftSign::Ahead,
            error_limit: ERROR_LIMIT,
            listen_window: DEFAULT_LISTEN_WINDOW,
            listen_from: Instant::EPOCH,
        },
        attacks: Vec::new(),
    }
}

/// Honest scenario plus an adversary steering toward a fake point inside the
/// first station simplex, at least `2 · error_limit` from the truth. The
/// error limit varies between scenarios.
pub fn spoof_scenario(seed: u64, dims: Dims, kind: SpoofKind) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let n = rng.gen_range(dims.simplex_size()..=dims.simplex_size() + 3);
    let mut s = honest_scenario(seed, dims, n, SchemeKind::HmacSha256);
    let truth = s.terminal.true_position;
    let simplex: Vec<Point> = s.stations[..dims.simplex_size()]
        .iter()
        .map(|s| s.position)
        .collect();
    let limit = [1.0, ERROR_LIMIT, 20.0, 60.0][rng.gen_range(0..4)];
    s.terminal.error_limit = limit;
    let target = loop {
        let q = interior_point(&mut rng, &simplex, 0.02);
        if q.distance(&truth) >= 2.0 * limit {
            break q;
        }
    };
    s.name = format!("spoof-{kind:?}-{}d-{seed}", dims.count()).to_lowercase();
    let c = s.c;

    match kind {
        SpoofKind::Delay => {
            // Steer a random subset toward the target, pad some at random.
            for st in &s.stations {
                let steer =
                    ((st.position.distance(&target) - st.position.distance(&truth)) / c).max(0.0);
                let mut extra = if rng.gen_bool(0.7) { steer } else { 0.0 };
                if rng.gen_bool(0.3) {
                    extra += rng.gen_range(0.0..2e-7);
                }
                if extra > 0.0 {
                    let extra = ExtraDelay::from_secs(extra).expect("non-negative");
                    s.attacks.push(AttackSpec::targeting(
                        AttackKind::Delay {
                            station: st.id,
                            extra,
                        },
                        target,
                    ));
                }
            }
            if s.attacks.is_empty() {
                s.attacks
                    .push(AttackSpec::targeting(AttackKind::SteerDelay, target));
            }
        }
        SpoofKind::Replay => {
            // Each station broadcast a little earlier too; the adversary
            // replays those older beacons timed for the target.
            let t_old = Instant::from_picos(1_000_000_000_000 - rng.gen_range(100_000..5_000_000));
            for st in &mut s.stations {
                st.schedule = vec![t_old, Instant::from_secs(1.0)];
            }
            s.terminal.listen_from = Instant::from_secs(1.0);
            let old: Vec<(usize, f64, f64)> = s
                .stations
                .iter()
                .enumerate()
                .map(|(i, st)| {
                    (
                        i,
                        st.position.distance(&target),
                        st.position.distance(&truth),
                    )
                })
                .collect();
            // Emissions sort by (time, station): the old ones come first.
            for (i, to_q, to_truth) in old {
                let lag = to_q.max(to_truth) / c + rng.gen_range(0.0..1e-8);
                s.attacks.push(AttackSpec::targeting(
                    AttackKind::Replay {
                        emission: i,
                        deliver_at: t_old + Span::from_secs(lag) + Span::from_ticks(1),
                    },
                    target,
                ));
            }
            s.attacks
                .push(AttackSpec::targeting(AttackKind::SteerDelay, target));
        }
        SpoofKind::Collusion => {
            let mut relays = Vec::new();
            for st in &s.stations {
                if !rng.gen_bool(0.8) {
                    continue;
                }
                // A node somewhere near the station, possibly right next to it.
                let reach = rng.gen_range(0.0..0.5) * st.position.distance(&truth);
                let dir = random_point(&mut rng, dims, 1.0);
                let norm = dir.distance(&Point::origin(dims)).max(1e-9);
                let step = dir.map(|x| x / norm * reach).sub(&Point::origin(dims));
                let hold = if rng.gen_bool(0.5) {
                    0.0
                } else {
                    rng.gen_range(0.0..1e-7)
                };
                relays.push(RelayNode {
                    station: st.id,
                    position: snap_to_micros(&st.position.offset(&step, 1.0)),
                    hold: ExtraDelay::from_secs(hold).expect("non-negative"),
                });
            }
            s.attacks.push(AttackSpec::targeting(
                AttackKind::ColludeRelay {
                    relays,
                    nonce_leak: rng.gen_bool(0.5),
                },
                target,
            ));
        }
    }
    s
}
