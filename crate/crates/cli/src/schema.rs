//! Scenario files.
//!
//! TOML, one scenario per file, `meta.schema_version = 1`. Units live in the
//! field names. Unknown fields are errors. See `SCENARIOS.md` for the
//! field-by-field reference.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unipos_core::airsim::{
    AttackKind, AttackSpec, ExtraDelay, RelayNode, Scenario, SignatureSource, StationSpec,
    TerminalSpec,
};
use unipos_core::authsig::{snap_to_micros, SchemeKind, SigningKey, StationId};
use unipos_core::bidir::{BidirError, BidirParams};
use unipos_core::geom::{Dims, Point};
use unipos_core::timebase::{ClockModel, DriftSign, Instant, Span, C_DEFAULT};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Unidirectional,
    Bidirectional,
    Compare,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Unidirectional => "unidirectional",
            Protocol::Bidirectional => "bidirectional",
            Protocol::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub protocol: Protocol,
    pub meta: Meta,
    pub stations: Vec<StationEntry>,
    pub terminal: TerminalEntry,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    pub bidir: Option<BidirEntry>,
}

fn default_c() -> f64 {
    C_DEFAULT
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub dims: u8,
    #[serde(default = "default_c")]
    pub c_m_per_s: f64,
    #[serde(default)]
    pub scheme: SchemeKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationEntry {
    pub id: String,
    pub pos_m: Vec<f64>,
    pub schedule_s: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalEntry {
    pub true_pos_m: Vec<f64>,
    #[serde(default)]
    pub listen_from_s: f64,
    pub clock: ClockEntry,
    pub verifier: VerifierEntry,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockEntry {
    /// Seconds of drift per day.
    #[serde(default)]
    pub drift_per_day: f64,
    #[serde(default)]
    pub drift_sign: DriftSign,
    #[serde(default)]
    pub offset_s: f64,
    pub validity_days: f64,
    #[serde(default)]
    pub last_sync_days: f64,
}

fn default_window() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierEntry {
    pub error_limit_m: f64,
    #[serde(default = "default_window")]
    pub listen_window_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureEntry {
    #[default]
    Random,
    Zeroed,
    /// Signed with `signer`'s key.
    KeyOf,
    /// Lifted from honest emission `emission`.
    Transplant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayEntry {
    pub station: String,
    pub pos_m: Vec<f64>,
    #[serde(default)]
    pub hold_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackEntry {
    Forge {
        claimed: String,
        fake_t_s: f64,
        fake_pos_m: Vec<f64>,
        #[serde(default)]
        signature: SignatureEntry,
        signer: Option<String>,
        emission: Option<usize>,
        emitter_pos_m: Vec<f64>,
        emit_at_s: f64,
        target_m: Option<Vec<f64>>,
    },
    Replay {
        emission: usize,
        deliver_at_s: f64,
        target_m: Option<Vec<f64>>,
    },
    Delay {
        station: String,
        delay_s: f64,
        target_m: Option<Vec<f64>>,
    },
    SteerDelay {
        target_m: Vec<f64>,
    },
    ColludeRelay {
        relays: Vec<RelayEntry>,
        #[serde(default)]
        nonce_leak: bool,
        target_m: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidirEntry {
    pub k_bits: Option<u32>,
    pub rounds: Option<usize>,
    #[serde(default)]
    pub processing_time_s: f64,
    #[serde(default)]
    pub declared_processing_s: f64,
    #[serde(default)]
    pub channel_delay_s: f64,
}

/// A scenario ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub source: PathBuf,
    pub protocol: Protocol,
    pub scenario: Scenario,
    pub bidir: BidirParams,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{}: {field}: {message}", file.display(), line.map_or("?".to_string(), |l| l.to_string()))]
    Parse {
        file: PathBuf,
        line: Option<usize>,
        field: String,
        message: String,
    },
    #[error("{}:{}: {field}: {message}", file.display(), line.map_or("?".to_string(), |l| l.to_string()))]
    Invalid {
        file: PathBuf,
        line: Option<usize>,
        field: String,
        message: String,
    },
}

impl LoadError {
    /// Field path of the offending value, if the error has one.
    pub fn field(&self) -> Option<&str> {
        match self {
            LoadError::Io { .. } => None,
            LoadError::Parse { field, .. } | LoadError::Invalid { field, .. } => Some(field),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            LoadError::Io { .. } => None,
            LoadError::Parse { line, .. } | LoadError::Invalid { line, .. } => *line,
        }
    }
}

struct Invalid {
    field: String,
    message: String,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Invalid {
    Invalid {
        field: field.into(),
        message: message.into(),
    }
}

pub fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<LoadedScenario, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path, seed_override)
}

/// Parses and validates scenario text. `path` is only used in diagnostics.
pub fn parse_scenario(
    text: &str,
    path: &Path,
    seed_override: Option<u64>,
) -> Result<LoadedScenario, LoadError> {
    let file: ScenarioFile = toml::Deserializer::parse(text)
        .map_err(|e| (String::new(), e))
        .and_then(|de| {
            serde_path_to_error::deserialize(de).map_err(|e| (e.path().to_string(), e.into_inner()))
        })
        .map_err(|(field, e)| LoadError::Parse {
            file: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)),
            field: if field.is_empty() || field == "." {
                "(document)".into()
            } else {
                field
            },
            message: e.message().trim().to_string(),
        })?;
    build(file, path, seed_override).map_err(|e| LoadError::Invalid {
        file: path.to_path_buf(),
        line: locate_field(text, &e.field),
        field: e.field,
        message: e.message,
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line for a field path like `attacks[1].delay_s`.
fn locate_field(text: &str, field: &str) -> Option<usize> {
    let lines: Vec<&str> = text.lines().collect();
    let mut from = 0;
    let mut prefix = String::new();
    let mut found = None;
    for seg in field.split('.') {
        let (name, index) = match seg.split_once('[') {
            Some((n, rest)) => (n, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (seg, None),
        };
        let qualified = if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        };
        let header_array = format!("[[{qualified}]]");
        let header = format!("[{qualified}]");
        let key = |l: &str| {
            let l = l.trim_start();
            l.strip_prefix(name)
                .is_some_and(|r| r.trim_start().starts_with('='))
        };
        let mut hit = None;
        if let Some(i) = index {
            hit = lines
                .iter()
                .enumerate()
                .skip(from)
                .filter(|(_, l)| l.trim() == header_array)
                .nth(i)
                .map(|(n, _)| n);
        }
        if hit.is_none() {
            hit = lines
                .iter()
                .enumerate()
                .skip(from)
                .find(|(_, l)| l.trim() == header || key(l))
                .map(|(n, _)| n);
        }
        match hit {
            Some(n) => {
                found = Some(n + 1);
                from = n;
            }
            None => break,
        }
        prefix = qualified;
    }
    found
}

fn point(field: String, coords: &[f64], dims: Dims) -> Result<Point, Invalid> {
    if coords.len() != dims.count() {
        return Err(invalid(
            field,
            format!(
                "expected {} coordinates, got {}",
                dims.count(),
                coords.len()
            ),
        ));
    }
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(invalid(field, "coordinates must be finite"));
    }
    Point::from_slice(coords).map_err(|e| invalid(field, e.to_string()))
}

fn seconds(field: String, s: f64) -> Result<Instant, Invalid> {
    // i64 picoseconds cover about ±106 days.
    if !s.is_finite() || s.abs() > 9.0e6 {
        return Err(invalid(field, "time must be finite and within ±9e6 s"));
    }
    Ok(Instant::from_secs(s).round_to_picos())
}

fn delay(field: String, s: f64) -> Result<ExtraDelay, Invalid> {
    ExtraDelay::from_secs(s).map_err(|e| invalid(field, e.to_string()))
}

fn build(
    file: ScenarioFile,
    path: &Path,
    seed_override: Option<u64>,
) -> Result<LoadedScenario, Invalid> {
    let meta = &file.meta;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "meta.schema_version",
            format!(
                "unsupported version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            ),
        ));
    }
    let dims =
        Dims::from_count(meta.dims as usize).map_err(|e| invalid("meta.dims", e.to_string()))?;
    if !(meta.c_m_per_s.is_finite() && meta.c_m_per_s > 0.0) {
        return Err(invalid("meta.c_m_per_s", "must be positive"));
    }
    let seed = seed_override.unwrap_or(meta.seed);

    let mut ids = BTreeSet::new();
    let mut stations = Vec::with_capacity(file.stations.len());
    for (i, st) in file.stations.iter().enumerate() {
        let id = StationId::from_label(&st.id)
            .filter(|_| !st.id.is_empty())
            .ok_or_else(|| invalid(format!("stations[{i}].id"), "must be 1 to 16 bytes"))?;
        if !ids.insert(st.id.clone()) {
            return Err(invalid(
                format!("stations[{i}].id"),
                format!("duplicate station id {}", st.id),
            ));
        }
        let position = snap_to_micros(&point(format!("stations[{i}].pos_m"), &st.pos_m, dims)?);
        let schedule = st
            .schedule_s
            .iter()
            .enumerate()
            .map(|(j, &t)| seconds(format!("stations[{i}].schedule_s[{j}]"), t))
            .collect::<Result<_, _>>()?;
        stations.push(StationSpec {
            id,
            position,
            key: SigningKey::derive(meta.scheme, seed, st.id.as_bytes()),
            schedule,
        });
    }
    let station_id = |field: String, label: &str| {
        if ids.contains(label) {
            Ok(StationId::from_label(label).expect("checked above"))
        } else {
            Err(invalid(field, format!("unknown station {label}")))
        }
    };

    let t = &file.terminal;
    let c = &t.clock;
    for (field, v) in [
        ("terminal.clock.drift_per_day", c.drift_per_day),
        ("terminal.clock.validity_days", c.validity_days),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(field, "must be a finite non-negative number"));
        }
    }
    if !(c.last_sync_days.is_finite() && c.last_sync_days.abs() <= 100.0) {
        return Err(invalid(
            "terminal.clock.last_sync_days",
            "must be finite and within ±100 days",
        ));
    }
    let window_ms = t.verifier.listen_window_ms;
    if !(window_ms.is_finite() && window_ms >= 0.0) {
        return Err(invalid(
            "terminal.verifier.listen_window_ms",
            "must be a finite non-negative number",
        ));
    }
    let terminal = TerminalSpec {
        true_position: point("terminal.true_pos_m".into(), &t.true_pos_m, dims)?,
        clock: ClockModel {
            initial_offset: c.offset_s,
            drift_per_day: c.drift_per_day,
            last_sync: Instant::from_days(c.last_sync_days),
            validity_days: c.validity_days,
        },
        drift_sign: c.drift_sign,
        error_limit: t.verifier.error_limit_m,
        listen_window: Span::from_secs(window_ms / 1000.0),
        listen_from: seconds("terminal.listen_from_s".into(), t.listen_from_s)?,
    };

    let mut attacks = Vec::with_capacity(file.attacks.len());
    for (i, a) in file.attacks.iter().enumerate() {
        let at = |f: &str| format!("attacks[{i}].{f}");
        let target = |t: &Option<Vec<f64>>| {
            t.as_ref()
                .map(|q| point(at("target_m"), q, dims))
                .transpose()
        };
        let spec = match a {
            AttackEntry::Forge {
                claimed,
                fake_t_s,
                fake_pos_m,
                signature,
                signer,
                emission,
                emitter_pos_m,
                emit_at_s,
                target_m,
            } => {
                let signature = match signature {
                    SignatureEntry::Random => SignatureSource::Random,
                    SignatureEntry::Zeroed => SignatureSource::Zeroed,
                    SignatureEntry::KeyOf => {
                        let s = signer
                            .as_deref()
                            .ok_or_else(|| invalid(at("signer"), "key_of needs a signer"))?;
                        SignatureSource::KeyOf(station_id(at("signer"), s)?)
                    }
                    SignatureEntry::Transplant => SignatureSource::Transplant {
                        emission: emission.ok_or_else(|| {
                            invalid(at("emission"), "transplant needs an emission")
                        })?,
                    },
                };
                let claimed = StationId::from_label(claimed)
                    .ok_or_else(|| invalid(at("claimed"), "must be at most 16 bytes"))?;
                AttackSpec {
                    kind: AttackKind::Forge {
                        claimed,
                        fake_t_s: seconds(at("fake_t_s"), *fake_t_s)?,
                        fake_pos: point(at("fake_pos_m"), fake_pos_m, dims)?,
                        signature,
                        emitter_pos: point(at("emitter_pos_m"), emitter_pos_m, dims)?,
                        emit_at: seconds(at("emit_at_s"), *emit_at_s)?,
                    },
                    target: target(target_m)?,
                }
            }
            AttackEntry::Replay {
                emission,
                deliver_at_s,
                target_m,
            } => AttackSpec {
                kind: AttackKind::Replay {
                    emission: *emission,
                    deliver_at: seconds(at("deliver_at_s"), *deliver_at_s)?,
                },
                target: target(target_m)?,
            },
            AttackEntry::Delay {
                station,
                delay_s,
                target_m,
            } => AttackSpec {
                kind: AttackKind::Delay {
                    station: station_id(at("station"), station)?,
                    extra: delay(at("delay_s"), *delay_s)?,
                },
                target: target(target_m)?,
            },
            AttackEntry::SteerDelay { target_m } => AttackSpec {
                kind: AttackKind::SteerDelay,
                target: Some(point(at("target_m"), target_m, dims)?),
            },
            AttackEntry::ColludeRelay {
                relays,
                nonce_leak,
                target_m,
            } => {
                let relays = relays
                    .iter()
                    .enumerate()
                    .map(|(j, r)| {
                        Ok(RelayNode {
                            station: station_id(at(&format!("relays[{j}].station")), &r.station)?,
                            position: snap_to_micros(&point(
                                at(&format!("relays[{j}].pos_m")),
                                &r.pos_m,
                                dims,
                            )?),
                            hold: delay(at(&format!("relays[{j}].hold_s")), r.hold_s)?,
                        })
                    })
                    .collect::<Result<_, Invalid>>()?;
                AttackSpec {
                    kind: AttackKind::ColludeRelay {
                        relays,
                        nonce_leak: *nonce_leak,
                    },
                    target: target(target_m)?,
                }
            }
        };
        if file.protocol != Protocol::Unidirectional
            && matches!(
                spec.kind,
                AttackKind::Forge { .. } | AttackKind::Replay { .. }
            )
        {
            return Err(invalid(
                at("kind"),
                format!(
                    "{} has no round-trip counterpart; use protocol = \"unidirectional\"",
                    spec.kind_name()
                ),
            ));
        }
        attacks.push(spec);
    }

    let defaults = BidirParams::default();
    let bidir = match &file.bidir {
        Some(b) => BidirParams {
            k_bits: b.k_bits.unwrap_or(defaults.k_bits),
            rounds: b.rounds.unwrap_or(defaults.rounds),
            processing_time: b.processing_time_s,
            declared_processing: b.declared_processing_s,
            channel_delay: b.channel_delay_s,
            c: meta.c_m_per_s,
            seed,
        },
        None => BidirParams {
            c: meta.c_m_per_s,
            seed,
            ..defaults
        },
    };
    bidir.validate().map_err(|e| match e {
        BidirError::InvalidParams { field, message } => {
            let field = match field {
                "processing_time" => "processing_time_s",
                "declared_processing" => "declared_processing_s",
                "channel_delay" => "channel_delay_s",
                f => f,
            };
            invalid(format!("bidir.{field}"), message)
        }
        other => invalid("bidir", other.to_string()),
    })?;

    let scenario = Scenario {
        name: meta.name.clone(),
        dims,
        c: meta.c_m_per_s,
        rng_seed: seed,
        stations,
        terminal,
        attacks,
    };
    scenario
        .validate()
        .map_err(|e| invalid(e.path, e.message))?;
    Ok(LoadedScenario {
        source: path.to_path_buf(),
        protocol: file.protocol,
        scenario,
        bidir,
    })
}
