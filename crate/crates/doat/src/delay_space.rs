//! The multi-dimensional delay space: node positions whose Euclidean
//! distance is the network latency (in milliseconds) between hosts.
//!
//! Positions are either generated uniformly inside a bounding box or
//! ingested from a coordinate file (one `<id> <x1> .. <xd>` record per
//! line, `#` comments allowed). The same Euclidean metric drives both
//! simulated message latency and the accuracy oracles, so there is a
//! single source of truth for "how far apart" two hosts are.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Identity of the seedable generator used for every random draw in a
/// run; recorded in run metadata so results replay across platforms.
pub const GENERATOR_NAME: &str = "chacha12";

/// A position in the delay space. Axis units are milliseconds-scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPoint {
    coords: Vec<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DelaySpaceError {
    #[error("coordinate values must be finite")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("bounding box is degenerate on axis {0} (min must be < max)")]
    DegenerateBox(usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

impl DelayPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, DelaySpaceError> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(DelaySpaceError::NonFinite);
        }
        Ok(Self { coords })
    }

    /// Shorthand for the common two-dimensional case.
    pub fn xy(x: f64, y: f64) -> Self {
        Self::new(vec![x, y]).expect("finite coordinates")
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

impl fmt::Display for DelayPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Per-axis extent of the delay space; `min < max` on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl BoundingBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, DelaySpaceError> {
        if min.len() != max.len() {
            return Err(DelaySpaceError::DimensionMismatch(min.len(), max.len()));
        }
        if min.iter().any(|c| !c.is_finite()) || max.iter().any(|c| !c.is_finite()) {
            return Err(DelaySpaceError::NonFinite);
        }
        for (axis, (lo, hi)) in min.iter().zip(&max).enumerate() {
            if lo >= hi {
                return Err(DelaySpaceError::DegenerateBox(axis));
            }
        }
        Ok(Self { min, max })
    }

    /// A box with the same `[lo, hi]` range on every axis.
    pub fn square(lo: f64, hi: f64, dim: usize) -> Result<Self, DelaySpaceError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Tight per-axis bounds of `points`; degenerate axes are widened by
    /// half a unit each way so single-point or flat datasets still map.
    pub fn fit(points: &[DelayPoint]) -> Result<Self, DelaySpaceError> {
        let first = points
            .first()
            .ok_or(DelaySpaceError::TooFewPoints { needed: 1, got: 0 })?;
        let dim = first.dim();
        let mut min = first.coords().to_vec();
        let mut max = first.coords().to_vec();
        for p in points {
            if p.dim() != dim {
                return Err(DelaySpaceError::DimensionMismatch(dim, p.dim()));
            }
            for (axis, &c) in p.coords().iter().enumerate() {
                min[axis] = min[axis].min(c);
                max[axis] = max[axis].max(c);
            }
        }
        for axis in 0..dim {
            if min[axis] >= max[axis] {
                min[axis] -= 0.5;
                max[axis] += 0.5;
            }
        }
        Self::new(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn contains(&self, p: &DelayPoint) -> bool {
        p.dim() == self.dim()
            && p.coords()
                .iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(c, (lo, hi))| lo <= c && c <= hi)
    }
}

/// Draws `n` points, each axis independent and uniform over the box.
/// Identical `(n, bounds, seed)` always yields the identical list:
/// points are drawn in order, axes in order, from a chacha12 stream.
pub fn generate_uniform(
    n: usize,
    bounds: &BoundingBox,
    seed: u64,
) -> Result<Vec<DelayPoint>, DelaySpaceError> {
    if n == 0 {
        return Err(DelaySpaceError::TooFewPoints { needed: 1, got: 0 });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let coords = bounds
            .min
            .iter()
            .zip(&bounds.max)
            .map(|(&lo, &hi)| rng.random_range(lo..hi))
            .collect();
        points.push(DelayPoint { coords });
    }
    Ok(points)
}

/// Euclidean distance between two positions, i.e. the one-way latency in
/// milliseconds between the hosts sitting at them.
pub fn delay(a: &DelayPoint, b: &DelayPoint) -> Result<f64, DelaySpaceError> {
    if a.dim() != b.dim() {
        return Err(DelaySpaceError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Mean delay over all unordered distinct pairs. This is the
/// normalisation constant of the accuracy metric.
pub fn average_pairwise_delay(points: &[DelayPoint]) -> Result<f64, DelaySpaceError> {
    if points.len() < 2 {
        return Err(DelaySpaceError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let mut sum = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            sum += delay(a, b)?;
        }
    }
    let pairs = points.len() * (points.len() - 1) / 2;
    Ok(sum / pairs as f64)
}

#[derive(Debug, Error)]
pub enum CoordFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: expected {expected} coordinates, got {got}")]
    Dimension {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: u64 },
}

/// Parses a coordinate file: one `<id> <x1> .. <xd>` record per line,
/// whitespace separated; `#` starts a comment line; blank lines are
/// skipped. Ids must be unique non-negative integers; record order is
/// preserved. Line numbers in errors are 1-based and count every line.
pub fn load_coordinates(path: &Path) -> Result<Vec<DelayPoint>, CoordFileError> {
    read_coordinates(BufReader::new(File::open(path)?))
}

pub fn read_coordinates<R: Read>(reader: BufReader<R>) -> Result<Vec<DelayPoint>, CoordFileError> {
    let mut points = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut fields = body.split_whitespace();
        let id_field = fields.next().expect("non-empty line has a first field");
        let id: u64 = id_field.parse().map_err(|_| CoordFileError::Parse {
            line: line_no,
            reason: format!("invalid id {id_field:?}"),
        })?;
        if !seen_ids.insert(id) {
            return Err(CoordFileError::DuplicateId { line: line_no, id });
        }
        let mut coords = Vec::new();
        for field in fields {
            let value: f64 = field.parse().map_err(|_| CoordFileError::Parse {
                line: line_no,
                reason: format!("invalid coordinate {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(CoordFileError::Parse {
                    line: line_no,
                    reason: format!("non-finite coordinate {field:?}"),
                });
            }
            coords.push(value);
        }
        if coords.is_empty() {
            return Err(CoordFileError::Parse {
                line: line_no,
                reason: "record has no coordinates".into(),
            });
        }
        match dim {
            None => dim = Some(coords.len()),
            Some(expected) if expected != coords.len() => {
                return Err(CoordFileError::Dimension {
                    line: line_no,
                    expected,
                    got: coords.len(),
                });
            }
            _ => {}
        }
        points.push(DelayPoint { coords });
    }
    Ok(points)
}

/// Writes points in the same format `load_coordinates` reads; ids are
/// the positional indices. Floats use shortest round-trip formatting,
/// so a write/read cycle is exact.
pub fn write_coordinates<W: Write>(points: &[DelayPoint], mut w: W) -> io::Result<()> {
    for (id, p) in points.iter().enumerate() {
        write!(w, "{id}")?;
        for c in p.coords() {
            write!(w, " {c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_coordinates(points: &[DelayPoint], path: &Path) -> io::Result<()> {
    let mut file = File::create(path)?;
    write_coordinates(points, &mut file)?;
    file.flush()
}
