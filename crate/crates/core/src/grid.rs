//! Grid geometry, field storage and the double mirror flip.
//!
//! A field lives on an `n1 x n2` uniform grid over `[0,1)^2`, with
//! `x = j / n1` along the column index `j` and `y = i / n2` along the row
//! index `i`. Values are stored column-stacked from the `n2 x n1` pixel
//! array `M`: `values[j * n2 + i] = M[i, j]`.
//!
//! Flipping mirrors the field once along `x` and once along `y`, giving a
//! `2n1 x 2n2` field whose periodic extension has no boundary jumps. The
//! flipped pixel array is `[I, J]^T M [I, J]` for the default variant, so
//! in column-stacked form the flip matrix is
//! `R = [I_{n1}, J_{n1}]^T (x) [I_{n2}, J_{n2}]^T` (the `x` factor on the
//! left). This is the order that reproduces the 2x2 worked example for
//! non-square grids; the two orders coincide when `n1 == n2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridSpec {
    n1: usize,
    n2: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n1: usize,
    n2: usize,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(r: RawGrid) -> Result<Self> {
        GridSpec::new(r.n1, r.n2)
    }
}

impl GridSpec {
    /// Both dimensions must be even and at least 2.
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidGrid {
                n1,
                n2,
                reason: "each dimension must be at least 2",
            });
        }
        if n1 % 2 != 0 || n2 % 2 != 0 {
            return Err(Error::InvalidGrid {
                n1,
                n2,
                reason: "dimensions must be even",
            });
        }
        Ok(Self { n1, n2 })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    /// Points along `x` (columns of the pixel array).
    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Points along `y` (rows of the pixel array).
    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n2 + i
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.n1 as f64
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        i as f64 / self.n2 as f64
    }

    pub fn doubled(&self) -> GridSpec {
        GridSpec {
            n1: 2 * self.n1,
            n2: 2 * self.n2,
        }
    }

    /// Grid points in storage order as `(x, y)`.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.n1).flat_map(move |j| (0..self.n2).map(move |i| (self.x(j), self.y(i))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Evaluates `f(x, y)` at every grid point.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = grid.points().map(|(x, y)| f(x, y)).collect();
        Self { grid, values }
    }

    /// Builds a field from `n2` rows of `n1` values (row `i` is the y-index).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n2 = rows.len();
        let n1 = rows.first().map_or(0, Vec::len);
        let grid = GridSpec::new(n1, n2)?;
        let mut values = vec![0.0; grid.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n1 {
                return Err(Error::DimensionMismatch {
                    expected: n1,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                values[grid.index(i, j)] = v;
            }
        }
        Self::new(grid, values)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.grid.n2)
            .map(|i| (0..self.grid.n1).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.grid.index(i, j);
        self.values[idx] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.n1, self.grid.n2, other.grid.n1, other.grid.n2
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XAnchor {
    /// Mirror image appended beyond the right edge; original on the left.
    #[default]
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YAnchor {
    /// Mirror image appended beyond the last row; original in rows `0..n2`.
    #[default]
    Bottom,
    Top,
}

/// Which boundaries the two mirror flips reflect across.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlipVariant {
    pub x_anchor: XAnchor,
    pub y_anchor: YAnchor,
}

impl FlipVariant {
    pub const ALL: [FlipVariant; 4] = [
        FlipVariant::new(XAnchor::Right, YAnchor::Bottom),
        FlipVariant::new(XAnchor::Right, YAnchor::Top),
        FlipVariant::new(XAnchor::Left, YAnchor::Bottom),
        FlipVariant::new(XAnchor::Left, YAnchor::Top),
    ];

    pub const fn new(x_anchor: XAnchor, y_anchor: YAnchor) -> Self {
        Self { x_anchor, y_anchor }
    }

    /// Source column of flipped column `js` (0 <= js < 2n).
    #[inline]
    fn source_col(&self, js: usize, n: usize) -> usize {
        match self.x_anchor {
            XAnchor::Right if js < n => js,
            XAnchor::Right => 2 * n - 1 - js,
            XAnchor::Left if js >= n => js - n,
            XAnchor::Left => n - 1 - js,
        }
    }

    #[inline]
    fn source_row(&self, is: usize, n: usize) -> usize {
        match self.y_anchor {
            YAnchor::Bottom if is < n => is,
            YAnchor::Bottom => 2 * n - 1 - is,
            YAnchor::Top if is >= n => is - n,
            YAnchor::Top => n - 1 - is,
        }
    }

    /// Offsets `(row, col)` of the verbatim copy inside the flipped array.
    fn quadrant_offset(&self, g: GridSpec) -> (usize, usize) {
        let r = match self.y_anchor {
            YAnchor::Bottom => 0,
            YAnchor::Top => g.n2,
        };
        let c = match self.x_anchor {
            XAnchor::Right => 0,
            XAnchor::Left => g.n1,
        };
        (r, c)
    }
}

/// Source index (in the original storage order) of every flipped sample.
fn flip_sources(g: GridSpec, v: FlipVariant) -> Vec<usize> {
    let gs = g.doubled();
    let mut src = Vec::with_capacity(gs.len());
    for js in 0..gs.n1 {
        let j = v.source_col(js, g.n1);
        for is in 0..gs.n2 {
            let i = v.source_row(is, g.n2);
            src.push(g.index(i, j));
        }
    }
    src
}

/// Mirrors `f` along `x` and then along `y`, doubling both dimensions.
pub fn flip_field(f: &Field, v: FlipVariant) -> Field {
    let g = f.grid;
    let values = flip_sources(g, v)
        .into_iter()
        .map(|k| f.values[k])
        .collect();
    Field {
        grid: g.doubled(),
        values,
    }
}

/// Restricts a flipped field to the quadrant holding the original copy.
pub fn unflip(f: &Field, v: FlipVariant) -> Result<Field> {
    let gs = f.grid;
    if gs.n1 % 4 != 0 || gs.n2 % 4 != 0 {
        // the original grid must itself be even in both directions
        return Err(Error::InvalidGrid {
            n1: gs.n1,
            n2: gs.n2,
            reason: "flipped grid must be twice an even grid",
        });
    }
    let g = GridSpec::new(gs.n1 / 2, gs.n2 / 2)?;
    let (r0, c0) = v.quadrant_offset(g);
    let mut values = Vec::with_capacity(g.len());
    for j in 0..g.n1 {
        for i in 0..g.n2 {
            values.push(f.get(r0 + i, c0 + j));
        }
    }
    Ok(Field { grid: g, values })
}

/// The `4N x N` flip matrix stored as one source column per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipMatrix {
    grid: GridSpec,
    source: Vec<usize>,
}

pub fn flip_matrix(g: GridSpec, v: FlipVariant) -> FlipMatrix {
    FlipMatrix {
        grid: g,
        source: flip_sources(g, v),
    }
}

impl FlipMatrix {
    pub fn nrows(&self) -> usize {
        self.source.len()
    }

    pub fn ncols(&self) -> usize {
        self.grid.len()
    }

    /// Column holding the single 1 of row `r`.
    pub fn source_of(&self, r: usize) -> usize {
        self.source[r]
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.ncols());
        self.source.iter().map(|&k| y[k]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.nrows(), self.ncols());
        for (row, &col) in self.source.iter().enumerate() {
            r[(row, col)] = 1.0;
        }
        r
    }
}
