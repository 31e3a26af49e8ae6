use std::path::Path;

use unipos_cli::commands::{execute, Execution};
use unipos_cli::schema::load_scenario;

fn run(name: &str) -> Execution {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    execute(&load_scenario(&p, None).unwrap()).unwrap()
}

#[test]
fn forgeries() {
    let ex = run("forgery");
    assert_eq!(ex.record.outcome, "Accepted");
    assert_eq!(ex.trace.verification.bad_signatures.len(), 1);
    assert_eq!(ex.record.classification, "truthful");

    let ex = run("forgery-transplant");
    assert_eq!(ex.record.outcome, "Accepted");
    assert_eq!(ex.trace.verification.bad_signatures.len(), 1);

    assert_eq!(
        run("forgery-key-of").record.outcome,
        "TooFewValidSignatures"
    );
}

#[test]
fn stale_replays_blow_up_the_bound() {
    let ex = run("stale-replay");
    assert!(ex.trace.verification.observations[0].bound > 2.5e13);
    assert!(!ex.trace.result().is_accepted());
}

#[test]
fn clock_sweep() {
    let cases = [
        ("clock-drift-sweep-5em10-30d-ahead", "Accepted"),
        ("clock-drift-sweep-5em10-30d-behind", "Accepted"),
        ("clock-drift-sweep-5em11-30d-ahead", "Accepted"),
        ("clock-drift-sweep-5em10-10d-ahead", "ErrorRangeExceeded"),
        ("clock-drift-sweep-2em09-15d-ahead", "ErrorRangeExceeded"),
        ("clock-drift-sweep-5em10-31d-ahead", "ClockExpired"),
    ];
    for (name, outcome) in cases {
        assert_eq!(run(name).record.outcome, outcome, "{name}");
    }
    // Symmetric stations: a uniform bound error keeps the fix at the truth.
    let p = run("clock-drift-sweep-5em10-30d-ahead")
        .record
        .position_m
        .unwrap();
    assert!(p[0].abs() < 1e-6 && p[1].abs() < 1e-6);
}

#[test]
fn delays_only_lengthen_under_both_protocols() {
    for name in ["forced-delay", "collusion-relay-compare"] {
        let ex = run(name);
        for (id, bound, truth) in ex.trace.bounds_vs_truth() {
            assert!(bound >= truth - 1e-6, "{name} {id}");
        }
        let cmp = ex.comparison.unwrap();
        for s in &cmp.bidirectional.sessions {
            assert!(
                s.rtt_bound >= s.true_distance - 1e-6,
                "{name} {}",
                s.station_id
            );
        }
        assert!(!cmp.bidirectional.shortened());
        assert!(!ex.record.target_hit);
    }
}

#[test]
fn stolen_nonces_fool_only_the_round_trip() {
    let ex = run("stolen-nonce-compare");
    let cmp = ex.comparison.unwrap();
    let b = &cmp.bidirectional;
    assert!(b.result.is_accepted());
    assert!(b.shortened());
    assert!(b.target_hit);
    assert!(!ex.record.target_hit);
    assert!(!ex.trace.result().is_accepted());

    let rec = run("stolen-nonce-bidirectional").record;
    assert_eq!(rec.outcome, "BidirAccepted");
    assert_eq!(rec.classification, "spoofed");
}
