//! Piecewise-constant functions on dyadic grids of the unit cube.
//!
//! A `DyadicFunction` stores one value per cell of the regular grid that
//! splits every axis of `[0,1]^d` into `2^depth` pieces, in row-major order
//! (first coordinate slowest). All integrals against such functions are
//! finite sums, so every quantity derived from them is computed without
//! quadrature error. Edge functions pair a pointwise evaluator with such a
//! grid representation.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::KahanSum;

#[derive(Error, Debug)]
pub enum DyadicError {
    #[error("dimension must be >= 1, got {0}")]
    ZeroDimension(usize),
    #[error("grid of dimension {d} and depth {depth} does not fit in memory/usize")]
    GridTooLarge { d: usize, depth: usize },
    #[error("expected {expected} cell values, got {got}")]
    CellCountMismatch { expected: usize, got: usize },
    #[error("cannot coarsen from depth {from} to depth {to}")]
    CoarserTarget { from: usize, to: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite cell value at index {0}")]
    NonFinite(usize),
    #[error("malformed dyadic CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of cells per axis at `depth`.
fn side(depth: usize) -> usize {
    1usize << depth
}

/// Total cell count `2^(d*depth)`, guarded against overflow.
fn cell_count(d: usize, depth: usize) -> Result<usize, DyadicError> {
    let bits = d.checked_mul(depth).ok_or(DyadicError::GridTooLarge { d, depth })?;
    if bits >= usize::BITS as usize - 1 {
        return Err(DyadicError::GridTooLarge { d, depth });
    }
    Ok(1usize << bits)
}

/// A real-valued function on `[0,1]^d`, constant on dyadic cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicFunction {
    d: usize,
    depth: usize,
    values: Vec<f64>,
}

impl DyadicFunction {
    pub fn new(d: usize, depth: usize, values: Vec<f64>) -> Result<Self, DyadicError> {
        if d == 0 {
            return Err(DyadicError::ZeroDimension(d));
        }
        let expected = cell_count(d, depth)?;
        if values.len() != expected {
            return Err(DyadicError::CellCountMismatch { expected, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DyadicError::NonFinite(i));
        }
        Ok(Self { d, depth, values })
    }

    pub fn constant(d: usize, value: f64) -> Self {
        Self::new(d, 0, vec![value]).expect("constant function is always valid")
    }

    pub fn zeros(d: usize, depth: usize) -> Result<Self, DyadicError> {
        let n = cell_count(d, depth)?;
        Ok(Self { d, depth, values: vec![0.0; n] })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell_volume(&self) -> f64 {
        (self.values.len() as f64).recip()
    }

    /// Row-major cell index of the cell containing `s`.
    ///
    /// Cells are half-open except at the upper face, so the function is
    /// defined on the closed cube.
    pub fn cell_of(&self, s: &[f64]) -> usize {
        debug_assert_eq!(s.len(), self.d);
        let m = side(self.depth);
        let mut idx = 0usize;
        for &x in s {
            let c = ((x * m as f64).floor() as isize).clamp(0, m as isize - 1) as usize;
            idx = idx * m + c;
        }
        idx
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.values[self.cell_of(s)]
    }

    /// Midpoint of the cell with the given row-major index.
    pub fn cell_midpoint(&self, index: usize) -> Vec<f64> {
        let m = side(self.depth);
        let mut rem = index;
        let mut out = vec![0.0; self.d];
        for i in (0..self.d).rev() {
            out[i] = (rem % m) as f64;
            rem /= m;
        }
        for x in &mut out {
            *x = (*x + 0.5) / m as f64;
        }
        out
    }

    /// Exact refinement to a deeper grid (each cell splits into `2^(d*k)`).
    pub fn refine(&self, depth: usize) -> Result<Self, DyadicError> {
        if depth < self.depth {
            return Err(DyadicError::CoarserTarget { from: self.depth, to: depth });
        }
        if depth == self.depth {
            return Ok(self.clone());
        }
        let n = cell_count(self.d, depth)?;
        let shift = depth - self.depth;
        let coarse_side = side(self.depth);
        let fine_side = side(depth);
        let mut values = vec![0.0; n];
        for (idx, v) in values.iter_mut().enumerate() {
            // Map the fine index to its coarse ancestor, one axis at a time.
            let mut rem = idx;
            let mut coarse = 0usize;
            let mut axes = vec![0usize; self.d];
            for i in (0..self.d).rev() {
                axes[i] = rem % fine_side;
                rem /= fine_side;
            }
            for &a in &axes {
                coarse = coarse * coarse_side + (a >> shift);
            }
            *v = self.values[coarse];
        }
        Ok(Self { d: self.d, depth, values })
    }

    /// Common refinement depth for exact binary operations.
    pub fn align(&self, other: &Self) -> Result<(Self, Self), DyadicError> {
        if self.d != other.d {
            return Err(DyadicError::DimensionMismatch(self.d, other.d));
        }
        let depth = self.depth.max(other.depth);
        Ok((self.refine(depth)?, other.refine(depth)?))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            d: self.d,
            depth: self.depth,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Exact integral over the cube.
    pub fn integral(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &v in &self.values {
            acc.add(v);
        }
        acc.value() * self.cell_volume()
    }

    /// Exact L1 norm.
    pub fn l1_norm(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &v in &self.values {
            acc.add(v.abs());
        }
        acc.value() * self.cell_volume()
    }

    /// Exact squared L2 norm.
    pub fn l2_norm_sq(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &v in &self.values {
            acc.add(v * v);
        }
        acc.value() * self.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Exact inner product in L2; both functions are refined to a common grid.
    pub fn inner_product(&self, other: &Self) -> Result<f64, DyadicError> {
        let (a, b) = self.align(other)?;
        let mut acc = KahanSum::default();
        for (&x, &y) in a.values.iter().zip(&b.values) {
            acc.add(x * y);
        }
        Ok(acc.value() * a.cell_volume())
    }

    /// Exact sup-norm distance on a common grid.
    pub fn sup_distance(&self, other: &Self) -> Result<f64, DyadicError> {
        let (a, b) = self.align(other)?;
        Ok(a.values
            .iter()
            .zip(&b.values)
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs())))
    }

    /// Writes the flat CSV form: a one-line `d=..,depth=..` header, then one
    /// cell value per line in row-major order. `comments` lines, if any, are
    /// emitted first, each prefixed with `# `.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<(), DyadicError> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "d={},depth={}", self.d, self.depth)?;
        for v in &self.values {
            writeln!(w, "{}", format_float(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, DyadicError> {
        let mut lines = r.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if line.starts_with('#') || line.trim().is_empty() {
                        continue;
                    }
                    break line;
                }
                None => return Err(DyadicError::Parse("missing header".into())),
            }
        };
        let mut d = None;
        let mut depth = None;
        for field in header.split(',') {
            let mut kv = field.splitn(2, '=');
            match (kv.next().map(str::trim), kv.next().map(str::trim)) {
                (Some("d"), Some(v)) => {
                    d = Some(v.parse().map_err(|_| DyadicError::Parse(format!("bad d: {v}")))?)
                }
                (Some("depth"), Some(v)) => {
                    depth =
                        Some(v.parse().map_err(|_| DyadicError::Parse(format!("bad depth: {v}")))?)
                }
                _ => return Err(DyadicError::Parse(format!("bad header field: {field}"))),
            }
        }
        let (d, depth) = match (d, depth) {
            (Some(d), Some(depth)) => (d, depth),
            _ => return Err(DyadicError::Parse("header must carry d and depth".into())),
        };
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            values.push(t.parse::<f64>().map_err(|_| DyadicError::Parse(format!("bad value: {t}")))?);
        }
        Self::new(d, depth, values)
    }
}

/// Fixed 17-significant-digit form used by every CSV the crate emits, so
/// replayed runs are byte-identical and values round-trip exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A low-frequency separable cosine mode; building block of smooth edges.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CosineMode {
    pub amplitude: f64,
    /// Per-axis integer frequency (multiplied by pi inside the evaluator).
    pub frequencies: Vec<u32>,
    pub phases: Vec<f64>,
}

impl CosineMode {
    fn eval(&self, s: &[f64]) -> f64 {
        let mut v = self.amplitude;
        for ((&x, &f), &ph) in s.iter().zip(&self.frequencies).zip(&self.phases) {
            v *= (std::f64::consts::PI * f as f64 * x + ph).cos();
        }
        v
    }
}

/// An edge function `[0,1]^d -> R`: a pointwise evaluator together with an
/// optional dyadic-cell representation. For smooth edges the representation
/// is the midpoint sample at a stated depth, so evaluator and representation
/// agree at cell midpoints by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EdgeFunction {
    Dyadic(DyadicFunction),
    Smooth {
        base: f64,
        modes: Vec<CosineMode>,
        table: DyadicFunction,
    },
}

impl EdgeFunction {
    pub fn constant(d: usize, value: f64) -> Self {
        EdgeFunction::Dyadic(DyadicFunction::constant(d, value))
    }

    pub fn from_table(table: DyadicFunction) -> Self {
        EdgeFunction::Dyadic(table)
    }

    pub fn smooth(d: usize, base: f64, modes: Vec<CosineMode>, snapshot_depth: usize) -> Result<Self, DyadicError> {
        let mut table = DyadicFunction::zeros(d, snapshot_depth)?;
        let n = table.values().len();
        for i in 0..n {
            let mid = table.cell_midpoint(i);
            let mut v = base;
            for m in &modes {
                v += m.eval(&mid);
            }
            table.values_mut()[i] = v;
        }
        Ok(EdgeFunction::Smooth { base, modes, table })
    }

    pub fn d(&self) -> usize {
        match self {
            EdgeFunction::Dyadic(t) => t.d(),
            EdgeFunction::Smooth { table, .. } => table.d(),
        }
    }

    /// Pointwise evaluation. Dyadic edges evaluate by cell lookup, smooth
    /// edges analytically.
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            EdgeFunction::Dyadic(t) => t.eval(s),
            EdgeFunction::Smooth { base, modes, .. } => {
                let mut v = *base;
                for m in modes {
                    v += m.eval(s);
                }
                v
            }
        }
    }

    /// The dyadic representation: exact for dyadic edges, the midpoint
    /// snapshot for smooth ones.
    pub fn table(&self) -> &DyadicFunction {
        match self {
            EdgeFunction::Dyadic(t) => t,
            EdgeFunction::Smooth { table, .. } => table,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, EdgeFunction::Dyadic(_))
    }

    pub fn range(&self) -> (f64, f64) {
        let vals = self.table().values();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

pub(crate) fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}
