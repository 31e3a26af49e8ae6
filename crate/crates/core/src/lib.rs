//! Secure positioning over one-way radio broadcasts.
//!
//! Trusted stations broadcast signed `(time, location)` beacons. A terminal
//! with a tamper-resistant clock turns each beacon into an upper bound on its
//! distance to the station, multilaterates, and accepts the position only if
//! the error range is small and the position lies strictly inside a
//! triangle (or tetrahedron) of accepted stations. An adversary who can only
//! delay signals can lengthen bounds but never shorten them, and no point
//! inside a simplex can be reached without shortening some vertex distance.
//!
//! Modules:
//! - [`geom`]: points, simplices, containment.
//! - [`timebase`]: scenario time and the inner-clock drift model.
//! - [`authsig`]: beacon encoding, signatures, key registry.
//! - [`ranging`]: distance bounds and the multilateration solver.
//! - [`verifier`]: the terminal-side verification procedure.
//! - [`airsim`]: deterministic radio medium with adversaries.
//! - [`bidir`]: challenge-response distance bounding, for comparison.
//! - [`scengen`]: seeded random scenarios for tests and corpora.

pub mod airsim;
pub mod authsig;
pub mod bidir;
pub mod geom;
pub mod ranging;
pub mod scengen;
pub mod timebase;
pub mod verifier;
