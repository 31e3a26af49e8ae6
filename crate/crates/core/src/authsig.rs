//! Beacon bodies, their canonical byte encoding, and the signature schemes
//! stations use to authenticate them.
//!
//! Wire layout of an encoded body (all integers little-endian):
//!
//! | bytes        | field                                          |
//! |--------------|------------------------------------------------|
//! | 4            | magic `"UPS1"`                                 |
//! | 1            | dims (2 or 3)                                  |
//! | 8            | broadcast time, signed picoseconds since epoch |
//! | 8 × dims     | station coordinates, signed micrometers        |
//! | 16           | station id                                     |
//!
//! The station id is part of the signed bytes, so a signature cannot be
//! moved to another station's identity.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer as _, Verifier as _};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geom::{Dims, Point};
use crate::timebase::Instant;

pub const MAGIC: &[u8; 4] = b"UPS1";
pub const MICROS_PER_METER: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuthError {
    #[error("coordinate {index} does not fit in 64-bit micrometers")]
    EncodingOverflow { index: usize },
    #[error("broadcast time does not fit in 64-bit picoseconds")]
    TimeOverflow,
    #[error("malformed beacon encoding: {0}")]
    Malformed(&'static str),
    #[error("station {0} is already registered")]
    DuplicateStation(StationId),
}

/// Opaque 16-byte station identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StationId(pub [u8; 16]);

impl StationId {
    /// Builds an id from a short label, zero-padded. Labels longer than 16
    /// bytes are rejected.
    pub fn from_label(label: &str) -> Option<Self> {
        let bytes = label.as_bytes();
        if bytes.is_empty() || bytes.len() > 16 {
            return None;
        }
        let mut id = [0u8; 16];
        id[..bytes.len()].copy_from_slice(bytes);
        Some(StationId(id))
    }

    /// Label form if the id is printable ASCII followed by zero padding.
    pub fn label(&self) -> Option<&str> {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(16);
        if end == 0 || self.0[end..].iter().any(|&b| b != 0) {
            return None;
        }
        let s = std::str::from_utf8(&self.0[..end]).ok()?;
        s.chars().all(|c| c.is_ascii_graphic()).then_some(s)
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(l),
            None => {
                for b in self.0 {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StationId({self})")
    }
}

impl Serialize for StationId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The signed content of a broadcast: who, when, and where.
///
/// Construction snaps `t_s` to whole picoseconds and coordinates to whole
/// micrometers, the resolution of the wire format, so that decoding an
/// encoded body gives back the identical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconBody {
    pub station_id: StationId,
    pub t_s: Instant,
    pub x_s: Point,
}

impl BeaconBody {
    pub fn new(station_id: StationId, t_s: Instant, x_s: Point) -> Self {
        BeaconBody {
            station_id,
            t_s: t_s.round_to_picos(),
            x_s: snap_to_micros(&x_s),
        }
    }
}

/// Rounds every coordinate to the micrometer grid of the wire format.
pub fn snap_to_micros(p: &Point) -> Point {
    p.map(|c| (c * MICROS_PER_METER).round() / MICROS_PER_METER)
}

/// Canonical, injective byte encoding of a body.
pub fn encode_body(body: &BeaconBody) -> Result<Vec<u8>, AuthError> {
    let dims = body.x_s.dims();
    let mut out = Vec::with_capacity(4 + 1 + 8 + 8 * dims.count() + 16);
    out.extend_from_slice(MAGIC);
    out.push(dims.count() as u8);
    let picos = body
        .t_s
        .round_to_picos()
        .to_picos()
        .ok_or(AuthError::TimeOverflow)?;
    out.extend_from_slice(&picos.to_le_bytes());
    for (index, c) in body.x_s.coords().iter().enumerate() {
        let micros = (c * MICROS_PER_METER).round();
        // i64::MAX as f64 rounds up to 2^63, which is itself out of range.
        if !micros.is_finite() || micros.abs() >= i64::MAX as f64 {
            return Err(AuthError::EncodingOverflow { index });
        }
        out.extend_from_slice(&(micros as i64).to_le_bytes());
    }
    out.extend_from_slice(&body.station_id.0);
    Ok(out)
}

/// Inverse of [`encode_body`]. Rejects anything that is not exactly one
/// well-formed body.
pub fn decode_body(bytes: &[u8]) -> Result<BeaconBody, AuthError> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or(AuthError::Malformed("bad magic"))?;
    let (&dims, rest) = rest
        .split_first()
        .ok_or(AuthError::Malformed("truncated"))?;
    let dims = Dims::from_count(dims as usize).map_err(|_| AuthError::Malformed("bad dims"))?;
    if rest.len() != 8 + 8 * dims.count() + 16 {
        return Err(AuthError::Malformed("wrong length"));
    }
    let word = |i: usize| i64::from_le_bytes(rest[8 * i..8 * i + 8].try_into().unwrap());
    let t_s = Instant::from_picos(word(0));
    let coords: Vec<f64> = (1..=dims.count())
        .map(|i| word(i) as f64 / MICROS_PER_METER)
        .collect();
    let x_s = Point::from_slice(&coords).map_err(|_| AuthError::Malformed("bad coordinates"))?;
    let mut id = [0u8; 16];
    id.copy_from_slice(&rest[rest.len() - 16..]);
    Ok(BeaconBody {
        station_id: StationId(id),
        t_s,
        x_s,
    })
}

/// Which signature scheme a key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Ed25519 public-key signatures.
    #[default]
    Ed25519,
    /// HMAC-SHA256 with a key shared between station and verifier. A fast
    /// deterministic stand-in for property tests; it does not give the
    /// verifier a public key.
    HmacSha256,
}

impl SchemeKind {
    pub fn signature_len(self) -> usize {
        match self {
            SchemeKind::Ed25519 => ed25519_dalek::SIGNATURE_LENGTH,
            SchemeKind::HmacSha256 => 32,
        }
    }
}

/// A station's secret signing material.
#[derive(Clone)]
pub enum SigningKey {
    Ed25519(ed25519_dalek::SigningKey),
    HmacSha256([u8; 32]),
}

/// The verifier-side key for a station.
#[derive(Clone, PartialEq, Eq)]
pub enum PublicKey {
    Ed25519(ed25519_dalek::VerifyingKey),
    HmacSha256([u8; 32]),
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey({:?})", self.kind())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PublicKey::Ed25519(k) => write!(f, "PublicKey::Ed25519({:02x?})", &k.as_bytes()[..4]),
            PublicKey::HmacSha256(_) => write!(f, "PublicKey::HmacSha256(..)"),
        }
    }
}

type HmacSha256 = Hmac<Sha256>;

impl SigningKey {
    /// Deterministic key from 32 bytes of seed material.
    pub fn from_seed(kind: SchemeKind, seed: [u8; 32]) -> Self {
        match kind {
            SchemeKind::Ed25519 => {
                SigningKey::Ed25519(ed25519_dalek::SigningKey::from_bytes(&seed))
            }
            SchemeKind::HmacSha256 => SigningKey::HmacSha256(seed),
        }
    }

    /// Key derived from a scenario seed and a domain label.
    pub fn derive(kind: SchemeKind, seed: u64, label: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"unipos-key-v1");
        h.update(seed.to_le_bytes());
        h.update(label);
        SigningKey::from_seed(kind, h.finalize().into())
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            SigningKey::Ed25519(_) => SchemeKind::Ed25519,
            SigningKey::HmacSha256(_) => SchemeKind::HmacSha256,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        match self {
            SigningKey::Ed25519(k) => PublicKey::Ed25519(k.verifying_key()),
            SigningKey::HmacSha256(k) => PublicKey::HmacSha256(*k),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        match self {
            SigningKey::Ed25519(k) => k.sign(msg).to_bytes().to_vec(),
            SigningKey::HmacSha256(k) => {
                let mut mac = HmacSha256::new_from_slice(k).expect("any key length");
                mac.update(msg);
                mac.finalize().into_bytes().to_vec()
            }
        }
    }
}

impl PublicKey {
    pub fn kind(&self) -> SchemeKind {
        match self {
            PublicKey::Ed25519(_) => SchemeKind::Ed25519,
            PublicKey::HmacSha256(_) => SchemeKind::HmacSha256,
        }
    }

    pub fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        match self {
            PublicKey::Ed25519(k) => {
                let Ok(sig) = ed25519_dalek::Signature::from_slice(sig) else {
                    return false;
                };
                k.verify(msg, &sig).is_ok()
            }
            PublicKey::HmacSha256(k) => {
                let mut mac = HmacSha256::new_from_slice(k).expect("any key length");
                mac.update(msg);
                mac.verify_slice(sig).is_ok()
            }
        }
    }
}

/// A signed beacon as it travels over the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub body: BeaconBody,
    pub signature: Vec<u8>,
}

pub fn sign_beacon(key: &SigningKey, body: BeaconBody) -> Result<Broadcast, AuthError> {
    let bytes = encode_body(&body)?;
    Ok(Broadcast {
        body,
        signature: key.sign(&bytes),
    })
}

/// Authentic verification keys, one per station. Read-only once built.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<StationId, PublicKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: StationId, key: PublicKey) -> Result<(), AuthError> {
        if self.keys.contains_key(&id) {
            return Err(AuthError::DuplicateStation(id));
        }
        self.keys.insert(id, key);
        Ok(())
    }

    pub fn get(&self, id: &StationId) -> Option<&PublicKey> {
        self.keys.get(id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// True iff the station is registered and the signature checks out over the
/// canonical encoding. Unknown stations and unencodable bodies fail closed.
pub fn verify_beacon(registry: &KeyRegistry, b: &Broadcast) -> bool {
    let Some(key) = registry.get(&b.body.station_id) else {
        return false;
    };
    if b.signature.len() != key.kind().signature_len() {
        return false;
    }
    match encode_body(&b.body) {
        Ok(bytes) => key.verify(&bytes, &b.signature),
        Err(_) => false,
    }
}
