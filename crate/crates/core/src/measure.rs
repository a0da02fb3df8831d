//! Discrete probability measures on the plane and squared-Euclidean costs.
//!
//! A shape boundary is represented by a finite weighted point cloud whose
//! weights are strictly positive and sum to one.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

/// Tolerance on the total mass of a measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from points and weights.
    ///
    /// Weights must be finite, strictly positive and sum to one within
    /// [`MASS_TOLERANCE`]. Points must be finite.
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite point {p:?}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weights must be strictly positive, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Uniform measure on `points`: every atom has weight `1/n`.
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::new(points, weights)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All weights are bitwise equal.
    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| w.to_bits() == w0.to_bits())
    }

    /// Serializes as CSV with header `x,y,w`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,w\n");
        for (p, w) in self.points.iter().zip(&self.weights) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", p[0], p[1], w).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("x,y,w") => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `x,y,w`, found {other:?}"
                )))
            }
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!(
                    "row {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}: {s:?}", lineno + 1)))
            };
            points.push([parse(fields[0])?, parse(fields[1])?]);
            weights.push(parse(fields[2])?);
        }
        Self::new(points, weights)
    }
}

/// Uniform measure on the given support.
pub fn make_uniform_measure(points: Vec<Point>) -> Result<DiscreteMeasure> {
    DiscreteMeasure::uniform(points)
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            entries,
        }
    }

    /// Builds from nested rows. Entries must be finite and nonnegative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || ncols == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut entries = Vec::with_capacity(nrows * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::Mismatch("ragged cost rows".into()));
            }
            for &c in row {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::Mismatch(format!("invalid cost entry {c}")));
                }
                entries.push(c);
            }
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::CostShape {
                rows: self.rows,
                cols: self.cols,
                expected_rows: rows,
                expected_cols: cols,
            });
        }
        Ok(())
    }
}

#[inline]
pub fn squared_distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// `C[i][j] = |x_i - y_j|^2`.
pub fn squared_euclidean_cost(source: &DiscreteMeasure, target: &DiscreteMeasure) -> CostMatrix {
    let (xs, ys) = (source.points(), target.points());
    CostMatrix::from_fn(xs.len(), ys.len(), |i, j| squared_distance(xs[i], ys[j]))
}
