//! Report records: one per scenario run.
//!
//! JSON lines are the canonical form and round-trip exactly. CSV is a flat
//! projection for spreadsheets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unipos_core::airsim::TraceReport;
use unipos_core::bidir::BidirRun;
use unipos_core::geom::Point;
use unipos_core::ranging::Fix;

use crate::schema::Protocol;

pub const REPORT_VERSION: u32 = 1;

pub const BIDIR_ACCEPTED: &str = "BidirAccepted";
pub const BIDIR_REJECTED: &str = "BidirRejected";

/// Every outcome code a record may carry.
pub const OUTCOME_CODES: [&str; 10] = [
    "Accepted",
    "ClockExpired",
    "TooFewBroadcasts",
    "FutureTimestamp",
    "TooFewValidSignatures",
    "SolverFailure",
    "ErrorRangeExceeded",
    "NotContained",
    BIDIR_ACCEPTED,
    BIDIR_REJECTED,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub outcome: String,
    /// `truthful`, `spoofed` or `refused`.
    pub classification: String,
    /// The solved position, present whenever the solver ran.
    pub position_m: Option<Vec<f64>>,
    /// Null when the solver did not run or the range is unbounded.
    pub error_range_m: Option<f64>,
    pub witness: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub attacks: Vec<AttackRecord>,
    pub deliveries: usize,
    pub physics_violations: usize,
    pub target_hit: bool,
    pub bidir: Option<BidirRecord>,
    /// Only filled when timing is requested, so default output is reproducible.
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRecord {
    pub index: usize,
    pub kind: String,
    /// Sequence numbers of the deliveries this attack produced or altered.
    pub deliveries: Vec<u64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidirRecord {
    pub outcome: String,
    /// The underlying verifier code (`Accepted`, `NotContained`, ...).
    pub reason: String,
    pub classification: String,
    pub position_m: Option<Vec<f64>>,
    pub error_range_m: Option<f64>,
    /// Some accepted session reported a bound shorter than the true distance.
    pub shortened: bool,
    pub target_hit: bool,
    pub sessions: Vec<SessionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub station: String,
    pub responder_pos_m: Vec<f64>,
    pub rtt_bound_m: f64,
    pub true_distance_m: f64,
    pub accepted: bool,
}

fn coords(p: &Point) -> Vec<f64> {
    p.coords().to_vec()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn fix_fields(fix: Option<&Fix>) -> (Option<Vec<f64>>, Option<f64>) {
    match fix {
        Some(f) => (Some(coords(&f.position)), finite(f.error_range)),
        None => (None, None),
    }
}

impl BidirRecord {
    pub fn from_run(run: &BidirRun) -> Self {
        let (position_m, error_range_m) = fix_fields(run.fix.as_ref());
        BidirRecord {
            outcome: if run.result.is_accepted() {
                BIDIR_ACCEPTED
            } else {
                BIDIR_REJECTED
            }
            .into(),
            reason: run.result.code().into(),
            classification: run.classification.to_string(),
            position_m,
            error_range_m,
            shortened: run.shortened(),
            target_hit: run.target_hit,
            sessions: run
                .sessions
                .iter()
                .map(|s| SessionRecord {
                    station: s.station_id.to_string(),
                    responder_pos_m: coords(&s.responder_pos),
                    rtt_bound_m: s.rtt_bound,
                    true_distance_m: s.true_distance,
                    accepted: s.accepted,
                })
                .collect(),
        }
    }
}

impl ReportRecord {
    /// Record for a unidirectional run, optionally with the bidirectional side.
    pub fn from_trace(trace: &TraceReport, protocol: Protocol, bidir: Option<&BidirRun>) -> Self {
        let v = &trace.verification;
        let (position_m, error_range_m) = fix_fields(v.fix.as_ref());
        ReportRecord {
            schema_version: REPORT_VERSION,
            scenario: trace.scenario.clone(),
            seed: trace.seed,
            protocol,
            outcome: v.result.code().into(),
            classification: trace.classification.to_string(),
            position_m,
            error_range_m,
            witness: v
                .result
                .accepted()
                .map(|a| a.witness_stations.iter().map(|s| s.to_string()).collect())
                .unwrap_or_default(),
            steps: v
                .steps
                .iter()
                .map(|s| StepRecord {
                    step: s.step.name().into(),
                    passed: s.passed,
                    detail: s.detail.clone(),
                })
                .collect(),
            attacks: trace
                .attacks
                .iter()
                .map(|a| AttackRecord {
                    index: a.attack,
                    kind: a.kind.into(),
                    deliveries: a.deliveries.clone(),
                    note: a.note.clone(),
                })
                .collect(),
            deliveries: trace.deliveries.len(),
            physics_violations: trace.physics_violations().len(),
            target_hit: trace.target_hit,
            bidir: bidir.map(BidirRecord::from_run),
            runtime_ms: None,
        }
    }

    /// Record for a bidirectional-only run: the headline fields describe the
    /// round-trip protocol.
    pub fn from_bidir(trace: &TraceReport, run: &BidirRun) -> Self {
        let b = BidirRecord::from_run(run);
        let mut r = ReportRecord::from_trace(trace, Protocol::Bidirectional, None);
        r.outcome = b.outcome.clone();
        r.classification = b.classification.clone();
        r.position_m = b.position_m.clone();
        r.error_range_m = b.error_range_m;
        r.witness = run
            .result
            .accepted()
            .map(|a| a.witness_stations.iter().map(|s| s.to_string()).collect())
            .unwrap_or_default();
        r.steps.clear();
        r.target_hit = b.target_hit;
        r.bidir = Some(b);
        r
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Flat CSV projection of a record.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    seed: u64,
    protocol: &'a str,
    outcome: &'a str,
    classification: &'a str,
    x_m: Option<f64>,
    y_m: Option<f64>,
    z_m: Option<f64>,
    error_range_m: Option<f64>,
    witness: String,
    failed_step: &'a str,
    deliveries: usize,
    physics_violations: usize,
    target_hit: bool,
    bidir_outcome: &'a str,
    bidir_shortened: Option<bool>,
    runtime_ms: Option<f64>,
}

pub fn write_csv<W: Write>(out: W, records: &[ReportRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let pos = |i: usize| r.position_m.as_ref().and_then(|p| p.get(i).copied());
        w.serialize(CsvRow {
            scenario: &r.scenario,
            seed: r.seed,
            protocol: r.protocol.name(),
            outcome: &r.outcome,
            classification: &r.classification,
            x_m: pos(0),
            y_m: pos(1),
            z_m: pos(2),
            error_range_m: r.error_range_m,
            witness: r.witness.join(";"),
            failed_step: r
                .steps
                .iter()
                .find(|s| !s.passed)
                .map_or("", |s| s.step.as_str()),
            deliveries: r.deliveries,
            physics_violations: r.physics_violations,
            target_hit: r.target_hit,
            bidir_outcome: r.bidir.as_ref().map_or("", |b| b.outcome.as_str()),
            bidir_shortened: r.bidir.as_ref().map(|b| b.shortened),
            runtime_ms: r.runtime_ms,
        })
        .map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[ReportRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ReportRecord>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            ReportRecord::from_json_line(&line).map_err(|source| ReadError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Plain-text summary table of a record set.
pub fn summarize(records: &[ReportRecord]) -> String {
    let mut by_outcome: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *by_outcome
            .entry((r.protocol.name(), r.outcome.as_str()))
            .or_default() += 1;
        *by_class.entry(r.classification.as_str()).or_default() += 1;
    }
    let hits = records.iter().filter(|r| r.target_hit).count();
    let violations: usize = records.iter().map(|r| r.physics_violations).sum();
    let compared: Vec<&BidirRecord> = records.iter().filter_map(|r| r.bidir.as_ref()).collect();

    let mut s = String::new();
    let _ = writeln!(s, "records: {}", records.len());
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:<24} {:>6}", "protocol", "outcome", "count");
    for ((p, o), n) in &by_outcome {
        let _ = writeln!(s, "{p:<16} {o:<24} {n:>6}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:>6}", "classification", "count");
    for (c, n) in &by_class {
        let _ = writeln!(s, "{c:<16} {n:>6}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "target hits:        {hits}");
    let _ = writeln!(s, "physics violations: {violations}");
    if !compared.is_empty() {
        let accepted = compared
            .iter()
            .filter(|b| b.outcome == BIDIR_ACCEPTED)
            .count();
        let shortened = compared.iter().filter(|b| b.shortened).count();
        let _ = writeln!(
            s,
            "round-trip runs:    {} ({accepted} accepted, {shortened} with a shortened bound)",
            compared.len()
        );
    }
    s
}
