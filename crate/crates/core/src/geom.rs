//! Points, simplices and the containment predicates used by the final
//! verification step.
//!
//! Barycentric coordinates are computed as ratios of signed measures: the
//! measure of the simplex with vertex `i` replaced by the query point, over
//! the measure of the simplex itself. No matrix is inverted.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum barycentric coordinate for a point to count as contained.
///
/// Vertices and edges are rejected: containment is strict interior with a
/// small tolerance for float noise.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Simplices with |area| at or below this (m²) are degenerate.
pub const DEGENERATE_AREA_EPS: f64 = 1e-6;

/// Simplices with |volume| at or below this (m³) are degenerate.
pub const DEGENERATE_VOLUME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("points must have 2 or 3 coordinates, got {0}")]
    BadDims(usize),
    #[error("coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("a {dims}D simplex needs {expected} vertices, got {actual}")]
    VertexCount {
        dims: usize,
        expected: usize,
        actual: usize,
    },
    #[error("degenerate simplex (signed measure {measure:e})")]
    DegenerateSimplex { measure: f64 },
}

/// Spatial dimensionality of a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    pub fn count(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }

    /// Vertices in a simplex of this dimension; also the broadcast quorum.
    pub fn simplex_size(self) -> usize {
        self.count() + 1
    }

    pub fn from_count(n: usize) -> Result<Self, GeomError> {
        match n {
            2 => Ok(Dims::Two),
            3 => Ok(Dims::Three),
            other => Err(GeomError::BadDims(other)),
        }
    }

    fn degenerate_eps(self) -> f64 {
        match self {
            Dims::Two => DEGENERATE_AREA_EPS,
            Dims::Three => DEGENERATE_VOLUME_EPS,
        }
    }
}

impl TryFrom<u8> for Dims {
    type Error = GeomError;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Dims::from_count(n as usize)
    }
}

impl From<Dims> for u8 {
    fn from(d: Dims) -> u8 {
        d.count() as u8
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.count())
    }
}

/// A position in meters, in the plane or in space.
///
/// Unused trailing coordinates of a 2D point are kept at zero so that
/// derived equality and hashing behave.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point {
    coords: [f64; 3],
    dims: Dims,
}

impl Point {
    pub fn new2(x: f64, y: f64) -> Self {
        Point {
            coords: [x, y, 0.0],
            dims: Dims::Two,
        }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Point {
            coords: [x, y, z],
            dims: Dims::Three,
        }
    }

    /// Builds a point from a coordinate slice, checking length and finiteness.
    pub fn from_slice(coords: &[f64]) -> Result<Self, GeomError> {
        let dims = Dims::from_count(coords.len())?;
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(GeomError::NonFinite { index });
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point { coords: c, dims })
    }

    pub fn origin(dims: Dims) -> Self {
        Point {
            coords: [0.0; 3],
            dims,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dims.count()]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    pub fn z(&self) -> f64 {
        self.coords[2]
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    /// Applies `f` to every coordinate.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = *self;
        for c in out.coords[..self.dims.count()].iter_mut() {
            *c = f(*c);
        }
        out
    }

    pub fn sub(&self, other: &Point) -> [f64; 3] {
        [
            self.coords[0] - other.coords[0],
            self.coords[1] - other.coords[1],
            self.coords[2] - other.coords[2],
        ]
    }

    /// `self + t * dir`, where `dir` is a displacement in the same frame.
    pub fn offset(&self, dir: &[f64; 3], t: f64) -> Self {
        let mut out = *self;
        let n = self.dims.count();
        for (c, d) in out.coords[..n].iter_mut().zip(dir) {
            *c += t * d;
        }
        out
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        let d = self.sub(other);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Arithmetic mean of a non-empty set of points sharing dims.
    pub fn centroid(points: &[Point]) -> Option<Point> {
        let first = points.first()?;
        let mut acc = [0.0; 3];
        for p in points {
            for (a, c) in acc.iter_mut().zip(p.coords.iter()) {
                *a += c;
            }
        }
        let n = points.len() as f64;
        Some(Point {
            coords: [acc[0] / n, acc[1] / n, acc[2] / n],
            dims: first.dims,
        })
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Point{:?}", self.coords())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = GeomError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Point::from_slice(&v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.coords().to_vec()
    }
}

fn check_same_dims(dims: Dims, points: &[Point]) -> Result<(), GeomError> {
    match points.iter().find(|p| p.dims != dims) {
        Some(p) => Err(GeomError::DimensionMismatch {
            expected: dims.count(),
            actual: p.dims.count(),
        }),
        None => Ok(()),
    }
}

fn area2(a: &Point, b: &Point, c: &Point) -> f64 {
    let u = b.sub(a);
    let v = c.sub(a);
    0.5 * (u[0] * v[1] - u[1] * v[0])
}

fn volume3(a: &Point, b: &Point, c: &Point, d: &Point) -> f64 {
    let u = b.sub(a);
    let v = c.sub(a);
    let w = d.sub(a);
    let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0]);
    det / 6.0
}

fn measure_of(v: &[Point]) -> f64 {
    match v.len() {
        3 => area2(&v[0], &v[1], &v[2]),
        4 => volume3(&v[0], &v[1], &v[2], &v[3]),
        _ => unreachable!("simplex vertex count checked on construction"),
    }
}

/// A triangle (2D) or tetrahedron (3D).
///
/// Construction checks vertex count and dimension agreement but not
/// degeneracy; operations that need a proper simplex check it themselves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simplex {
    vertices: Vec<Point>,
}

impl Simplex {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeomError> {
        let dims = vertices
            .first()
            .map(|p| p.dims)
            .ok_or(GeomError::VertexCount {
                dims: 0,
                expected: 0,
                actual: 0,
            })?;
        if vertices.len() != dims.simplex_size() {
            return Err(GeomError::VertexCount {
                dims: dims.count(),
                expected: dims.simplex_size(),
                actual: vertices.len(),
            });
        }
        check_same_dims(dims, &vertices)?;
        Ok(Simplex { vertices })
    }

    pub fn dims(&self) -> Dims {
        self.vertices[0].dims
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Signed area (2D) or signed volume (3D). Positive for counter-clockwise
    /// triangles and right-handed tetrahedra.
    pub fn signed_measure(&self) -> f64 {
        measure_of(&self.vertices)
    }

    pub fn is_degenerate(&self) -> bool {
        self.signed_measure().abs() <= self.dims().degenerate_eps()
    }

    /// Barycentric coordinates of `p`, one per vertex, summing to one.
    pub fn barycentric(&self, p: &Point) -> Result<Vec<f64>, GeomError> {
        check_same_dims(self.dims(), std::slice::from_ref(p))?;
        let total = self.signed_measure();
        if total.abs() <= self.dims().degenerate_eps() {
            return Err(GeomError::DegenerateSimplex { measure: total });
        }
        let mut scratch = self.vertices.clone();
        let coords = (0..self.vertices.len())
            .map(|i| {
                scratch[i] = *p;
                let m = measure_of(&scratch);
                scratch[i] = self.vertices[i];
                m / total
            })
            .collect();
        Ok(coords)
    }

    /// Strict-interior containment: every barycentric coordinate of `p` must
    /// be at least [`BOUNDARY_EPS`].
    pub fn contains(&self, p: &Point) -> Result<bool, GeomError> {
        Ok(self
            .barycentric(p)?
            .iter()
            .all(|&lambda| lambda >= BOUNDARY_EPS))
    }

    /// Returns a vertex that `q` is strictly closer to than `p` is.
    ///
    /// For `q` inside the simplex and `p != q` such a vertex always exists:
    /// no point can reach an interior point without getting closer to at
    /// least one vertex.
    pub fn shortening_witness(&self, p: &Point, q: &Point) -> Option<usize> {
        self.vertices
            .iter()
            .position(|v| q.distance_squared(v) < p.distance_squared(v))
    }
}

/// Signed measure of an arbitrary vertex list. Degenerate input gives (near) zero.
pub fn signed_measure(vertices: &[Point]) -> Result<f64, GeomError> {
    Simplex::new(vertices.to_vec()).map(|s| s.signed_measure())
}

/// Convenience wrapper over [`Simplex::contains`].
pub fn contains(simplex: &Simplex, p: &Point) -> Result<bool, GeomError> {
    simplex.contains(p)
}

/// Convenience wrapper over [`Simplex::shortening_witness`].
pub fn shortening_witness(simplex: &Simplex, p: &Point, q: &Point) -> Option<usize> {
    simplex.shortening_witness(p, q)
}
