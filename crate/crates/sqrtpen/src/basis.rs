//! Tensor-product Haar multiresolution systems on the unit cube.
//!
//! The system is grouped into levels: level 1 holds the scaling function and
//! the resolution-0 wavelets, level `l >= 2` holds the wavelets of support
//! side `2^-(l-1)`. With this grouping the block sizes grow like `2^(d l)`
//! and the basis of `L` levels spans exactly the functions that are
//! piecewise constant on the depth-`L` dyadic grid, so analysis and
//! synthesis are finite exact transforms rather than quadratures.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dyadic::{DyadicError, DyadicFunction};
use crate::util::{stream_rng, KahanSum};
use rand::Rng;

#[derive(Error, Debug)]
pub enum BasisError {
    #[error("dimension must be >= 1, got {0}")]
    InvalidDimension(usize),
    #[error("level count must be >= 1, got {0}")]
    InvalidLevels(usize),
    #[error("basis of dimension {d} with {levels} levels overflows machine integers")]
    Overflow { d: usize, levels: usize },
    #[error("coefficient vector shape does not match basis: {0}")]
    CoefficientShape(String),
    #[error("dyadic representation at depth {depth} is coarser than the basis resolution {need}")]
    TableTooShallow { depth: usize, need: usize },
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
}

/// One member of the Haar system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HaarFunction {
    /// The constant function 1 on the cube.
    Scaling,
    /// Tensor wavelet: `pattern` marks the axes carrying the oscillating
    /// factor (bit i = axis i, at least one bit set), `cell` is the support
    /// cell at `resolution` (side `2^-resolution`).
    Wavelet {
        resolution: usize,
        pattern: u32,
        cell: Vec<usize>,
    },
}

impl HaarFunction {
    /// L2-normalizing amplitude `2^(resolution*d/2)`.
    fn amplitude(&self, d: usize) -> f64 {
        match self {
            HaarFunction::Scaling => 1.0,
            HaarFunction::Wavelet { resolution, .. } => {
                2f64.powf((resolution * d) as f64 * 0.5)
            }
        }
    }

    /// Exact L1 norm.
    pub fn l1_norm(&self, d: usize) -> f64 {
        match self {
            HaarFunction::Scaling => 1.0,
            HaarFunction::Wavelet { resolution, .. } => {
                // |psi| = amplitude on a cell of volume 2^(-resolution*d).
                2f64.powf(-((resolution * d) as f64) * 0.5)
            }
        }
    }

    /// Sign of the wavelet on the child cell with half-offsets `bits`
    /// (bit i of `bits` = axis i).
    fn sign(pattern: u32, bits: u32) -> f64 {
        if (pattern & bits).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// An orthonormal Haar multiresolution system with certified constants.
#[derive(Clone, Debug)]
pub struct BasisSystem {
    d: usize,
    levels: usize,
    c_psi: f64,
    blocks: Vec<Vec<HaarFunction>>,
    total: usize,
}

impl BasisSystem {
    /// Builds the tensor Haar system with `levels` blocks on `[0,1]^d`.
    pub fn haar(d: usize, levels: usize) -> Result<Self, BasisError> {
        if d == 0 {
            return Err(BasisError::InvalidDimension(d));
        }
        if levels == 0 {
            return Err(BasisError::InvalidLevels(levels));
        }
        if d.saturating_mul(levels) >= usize::BITS as usize - 2 || d >= 31 {
            return Err(BasisError::Overflow { d, levels });
        }
        let patterns = (1u32 << d) - 1; // nonzero axis masks
        let mut blocks = Vec::with_capacity(levels);
        for l in 1..=levels {
            let r = l - 1;
            let cells_per_axis = 1usize << r;
            let cell_count = 1usize << (r * d);
            let mut block = Vec::new();
            if l == 1 {
                block.push(HaarFunction::Scaling);
            }
            for rank in 0..cell_count {
                let cell = decompose(rank, cells_per_axis, d);
                for pattern in 1..=patterns {
                    block.push(HaarFunction::Wavelet { resolution: r, pattern, cell: cell.clone() });
                }
            }
            blocks.push(block);
        }
        let total = blocks.iter().map(Vec::len).sum();
        let c_psi = minimal_c_psi(d, levels, total);
        Ok(Self { d, levels, c_psi, blocks, total })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of levels L.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Certified constant for the norm, overlap and block-size bounds.
    pub fn c_psi(&self) -> f64 {
        self.c_psi
    }

    /// Total number of basis functions (the dimension of the expansion).
    pub fn total(&self) -> usize {
        self.total
    }

    /// Depth of the dyadic grid on which every synthesized function is
    /// piecewise constant.
    pub fn grid_depth(&self) -> usize {
        self.levels
    }

    pub fn block_size(&self, level: usize) -> usize {
        self.blocks[level - 1].len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Cumulative size of the first `m` blocks; 0 for `m = 0`.
    pub fn cumulative_size(&self, m: usize) -> usize {
        assert!(m <= self.levels, "level {m} out of range");
        self.blocks[..m].iter().map(Vec::len).sum()
    }

    pub fn function(&self, level: usize, j: usize) -> &HaarFunction {
        &self.blocks[level - 1][j]
    }

    pub fn functions(&self) -> impl Iterator<Item = (usize, usize, &HaarFunction)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(li, b)| b.iter().enumerate().map(move |(j, f)| (li + 1, j, f)))
    }

    /// Pointwise value of one basis function, using the same closed-cube
    /// cell convention as `DyadicFunction::eval`.
    pub fn eval(&self, level: usize, j: usize, s: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.d);
        let f = self.function(level, j);
        match f {
            HaarFunction::Scaling => 1.0,
            HaarFunction::Wavelet { resolution, pattern, cell } => {
                let fine_side = 1usize << (resolution + 1);
                let mut bits = 0u32;
                for (i, &x) in s.iter().enumerate() {
                    let c = ((x * fine_side as f64).floor() as isize)
                        .clamp(0, fine_side as isize - 1) as usize;
                    if c >> 1 != cell[i] {
                        return 0.0;
                    }
                    bits |= ((c & 1) as u32) << i;
                }
                f.amplitude(self.d) * HaarFunction::sign(*pattern, bits)
            }
        }
    }

    fn check_shape(&self, alpha: &CoefficientVector) -> Result<(), BasisError> {
        if alpha.d() != self.d {
            return Err(BasisError::CoefficientShape(format!(
                "dimension {} vs basis {}",
                alpha.d(),
                self.d
            )));
        }
        if alpha.level_count() != self.levels {
            return Err(BasisError::CoefficientShape(format!(
                "{} levels vs basis {}",
                alpha.level_count(),
                self.levels
            )));
        }
        for l in 1..=self.levels {
            if alpha.level(l).len() != self.block_size(l) {
                return Err(BasisError::CoefficientShape(format!(
                    "level {l} has {} coefficients, block size is {}",
                    alpha.level(l).len(),
                    self.block_size(l)
                )));
            }
        }
        Ok(())
    }

    /// Value of `f_alpha` at a point: the sum of all coefficients times the
    /// basis values, walking only the functions whose support contains `s`.
    pub fn synthesize_at(&self, alpha: &CoefficientVector, s: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.d);
        let patterns = (1u32 << self.d) - 1;
        let mut acc = alpha.level(1)[0]; // scaling coefficient
        for l in 1..=self.levels {
            let r = l - 1;
            let fine_side = 1usize << (r + 1);
            let mut rank = 0usize;
            let mut bits = 0u32;
            for (i, &x) in s.iter().enumerate() {
                let c = ((x * fine_side as f64).floor() as isize)
                    .clamp(0, fine_side as isize - 1) as usize;
                rank = rank * (fine_side >> 1) + (c >> 1);
                bits |= ((c & 1) as u32) << i;
            }
            let amp = 2f64.powf((r * self.d) as f64 * 0.5);
            let base = if l == 1 { 1 } else { 0 } + rank * patterns as usize;
            let coeffs = alpha.level(l);
            for pattern in 1..=patterns {
                let a = coeffs[base + (pattern - 1) as usize];
                if a != 0.0 {
                    acc += a * amp * HaarFunction::sign(pattern, bits);
                }
            }
        }
        acc
    }

    /// Exact synthesis on the full depth-L grid by pyramid reconstruction.
    pub fn synthesize_table(&self, alpha: &CoefficientVector) -> Result<DyadicFunction, BasisError> {
        self.check_shape(alpha)?;
        let d = self.d;
        let patterns = ((1u32 << d) - 1) as usize;
        let mut vals = vec![alpha.level(1)[0]];
        for l in 1..=self.levels {
            let r = l - 1;
            let coarse_side = 1usize << r;
            let fine_side = coarse_side << 1;
            let amp = 2f64.powf((r * d) as f64 * 0.5);
            let coeffs = alpha.level(l);
            let offset = usize::from(l == 1);
            let mut next = vec![0.0; 1usize << ((r + 1) * d)];
            for (rank, &parent) in vals.iter().enumerate() {
                let cell = decompose(rank, coarse_side, d);
                for bits in 0..(1u32 << d) {
                    let mut contrib = parent;
                    for pattern in 1..=patterns {
                        let a = coeffs[offset + rank * patterns + pattern - 1];
                        if a != 0.0 {
                            contrib += a * amp * HaarFunction::sign(pattern as u32, bits);
                        }
                    }
                    next[child_index(&cell, bits, fine_side, d)] = contrib;
                }
            }
            vals = next;
        }
        Ok(DyadicFunction::new(d, self.levels, vals)?)
    }

    /// Exact inner products of a dyadic function against every basis member,
    /// computed from the cell-mean pyramid. Requires the representation to
    /// resolve the basis grid.
    pub fn analyze(&self, f: &DyadicFunction) -> Result<CoefficientVector, BasisError> {
        if f.d() != self.d {
            return Err(BasisError::CoefficientShape(format!(
                "function dimension {} vs basis {}",
                f.d(),
                self.d
            )));
        }
        if f.depth() < self.levels {
            return Err(BasisError::TableTooShallow { depth: f.depth(), need: self.levels });
        }
        let d = self.d;
        let patterns = ((1u32 << d) - 1) as usize;
        // Cell means at every depth from f.depth() down to 0.
        let mut pyramid = vec![f.values().to_vec()];
        for depth in (0..f.depth()).rev() {
            let side_fine = 1usize << (depth + 1);
            let finer = pyramid.last().unwrap();
            let mut means = vec![0.0; 1usize << (depth * d)];
            let inv = ((1usize << d) as f64).recip();
            for (rank, m) in means.iter_mut().enumerate() {
                let cell = decompose(rank, 1usize << depth, d);
                let mut acc = 0.0;
                for bits in 0..(1u32 << d) {
                    acc += finer[child_index(&cell, bits, side_fine, d)];
                }
                *m = acc * inv;
            }
            pyramid.push(means);
        }
        pyramid.reverse(); // pyramid[depth] = means at that depth
        let mut levels = Vec::with_capacity(self.levels);
        for l in 1..=self.levels {
            let r = l - 1;
            let coarse_side = 1usize << r;
            let fine_side = coarse_side << 1;
            let amp = 2f64.powf((r * d) as f64 * 0.5);
            let child_volume = 2f64.powf(-(((r + 1) * d) as f64));
            let mut block = Vec::with_capacity(self.block_size(l));
            if l == 1 {
                block.push(pyramid[0][0]); // scaling coefficient = global mean
            }
            let fine_means = &pyramid[r + 1];
            let mut child_vals = vec![0.0f64; 1usize << d];
            for rank in 0..(1usize << (r * d)) {
                let cell = decompose(rank, coarse_side, d);
                for bits in 0..(1u32 << d) {
                    child_vals[bits as usize] = fine_means[child_index(&cell, bits, fine_side, d)];
                }
                for pattern in 1..=patterns {
                    let mut acc = 0.0;
                    for bits in 0..(1u32 << d) {
                        acc += HaarFunction::sign(pattern as u32, bits) * child_vals[bits as usize];
                    }
                    block.push(acc * amp * child_volume);
                }
            }
            levels.push(block);
        }
        Ok(CoefficientVector::from_levels(self.d, levels))
    }

    /// Sparse table of one basis function: (row-major depth-L index, value)
    /// over its support, in index order.
    fn sparse_table(&self, level: usize, j: usize) -> Vec<(usize, f64)> {
        let d = self.d;
        let depth = self.levels;
        let fine_side = 1usize << depth;
        match self.function(level, j) {
            HaarFunction::Scaling => (0..(1usize << (depth * d))).map(|i| (i, 1.0)).collect(),
            HaarFunction::Wavelet { resolution, pattern, cell } => {
                let r = *resolution;
                let amp = 2f64.powf((r * d) as f64 * 0.5);
                let span = 1usize << (depth - r); // fine cells per axis inside the support
                let mut out = Vec::with_capacity(span.pow(d as u32));
                let mut offsets = vec![0usize; d];
                loop {
                    let mut idx = 0usize;
                    let mut bits = 0u32;
                    for i in 0..d {
                        let fine = (cell[i] << (depth - r)) + offsets[i];
                        idx = idx * fine_side + fine;
                        // Half-offset bit = top bit of the in-support offset.
                        bits |= (((offsets[i] >> (depth - r - 1)) & 1) as u32) << i;
                    }
                    out.push((idx, amp * HaarFunction::sign(*pattern, bits)));
                    // Odometer over the support cells.
                    let mut i = d;
                    loop {
                        if i == 0 {
                            break;
                        }
                        i -= 1;
                        offsets[i] += 1;
                        if offsets[i] < span {
                            break;
                        }
                        offsets[i] = 0;
                        if i == 0 {
                            out.sort_unstable_by_key(|&(k, _)| k);
                            return out;
                        }
                    }
                }
            }
        }
    }

    /// Exact certification of the norm, overlap, block-size and depth bounds
    /// together with sampled orthonormality spot checks.
    pub fn verify_assumption_b(&self, sample_pairs: usize, rng_seed: u64) -> CertificationReport {
        let d = self.d;
        let depth = self.levels;
        let cells = 1usize << (depth * d);
        let cell_volume = (cells as f64).recip();
        let mut levels = Vec::with_capacity(self.levels);
        for l in 1..=self.levels {
            let mut overlap = vec![0.0f64; cells];
            let mut l1_max = 0.0f64;
            for j in 0..self.block_size(l) {
                let table = self.sparse_table(l, j);
                let mut acc = KahanSum::default();
                for &(idx, v) in &table {
                    overlap[idx] += v.abs();
                    acc.add(v.abs());
                }
                l1_max = l1_max.max(acc.value() * cell_volume);
            }
            let sup_abs_sum = overlap.iter().cloned().fold(0.0f64, f64::max);
            let weight = 2f64.powf((d * l) as f64 * 0.5);
            levels.push(LevelCertificate {
                level: l,
                block_size: self.block_size(l),
                l1_norm_max: l1_max,
                sup_abs_sum,
                l1_ratio: l1_max * weight,
                sup_ratio: sup_abs_sum / weight,
                size_ratio_upper: self.block_size(l) as f64 / weight.powi(2),
                size_ratio_lower: weight.powi(2) / self.block_size(l) as f64,
            });
        }
        let depth_ratio = self.levels as f64 * d as f64 / (self.total as f64).ln();
        let mut minimal = depth_ratio.max(1.0);
        for lc in &levels {
            minimal = minimal
                .max(lc.l1_ratio)
                .max(lc.sup_ratio)
                .max(lc.size_ratio_upper)
                .max(lc.size_ratio_lower);
        }
        // Sampled exact orthonormality checks.
        let mut rng = stream_rng(rng_seed, 0);
        let mut worst = 0.0f64;
        let flat: Vec<(usize, usize)> = self
            .functions()
            .map(|(l, j, _)| (l, j))
            .collect();
        for _ in 0..sample_pairs {
            let a = flat[rng.random_range(0..flat.len())];
            let b = flat[rng.random_range(0..flat.len())];
            let ip = self.sparse_inner_product(a, b) * cell_volume;
            let expect = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((ip - expect).abs());
        }
        let tol = 1e-9;
        let pass = self.c_psi + tol >= minimal && worst <= 1e-12;
        CertificationReport {
            d,
            levels,
            depth_ratio,
            minimal_c_psi: minimal,
            stored_c_psi: self.c_psi,
            orthonormality_pairs: sample_pairs,
            orthonormality_worst_error: worst,
            pass,
        }
    }

    fn sparse_inner_product(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let ta = self.sparse_table(a.0, a.1);
        let tb = self.sparse_table(b.0, b.1);
        let (mut i, mut j) = (0usize, 0usize);
        let mut acc = KahanSum::default();
        while i < ta.len() && j < tb.len() {
            match ta[i].0.cmp(&tb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc.add(ta[i].1 * tb[j].1);
                    i += 1;
                    j += 1;
                }
            }
        }
        acc.value()
    }
}

/// Smallest constant satisfying all four certified bounds for the tensor
/// Haar system with this grouping, in closed form: the L1-norm and overlap
/// ratios both peak at `2^(d/2)`, the block-size lower bound needs
/// `2^d/(2^d - 1)`, and the depth bound needs `1/ln 2`.
fn minimal_c_psi(d: usize, _levels: usize, _total: usize) -> f64 {
    let two_d = 2f64.powi(d as i32);
    2f64.powf(d as f64 * 0.5)
        .max(two_d / (two_d - 1.0))
        .max(std::f64::consts::LN_2.recip())
        .max(1.0)
}

fn decompose(rank: usize, side: usize, d: usize) -> Vec<usize> {
    let mut rem = rank;
    let mut cell = vec![0usize; d];
    for i in (0..d).rev() {
        cell[i] = rem % side;
        rem /= side;
    }
    cell
}

fn child_index(cell: &[usize], bits: u32, fine_side: usize, _d: usize) -> usize {
    let mut idx = 0usize;
    for (i, &k) in cell.iter().enumerate() {
        idx = idx * fine_side + (k << 1 | ((bits >> i) & 1) as usize);
    }
    idx
}

/// Per-level exact quantities behind the certification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub level: usize,
    pub block_size: usize,
    pub l1_norm_max: f64,
    pub sup_abs_sum: f64,
    /// `max_j ||psi_{j,l}||_1 * 2^(dl/2)`; must stay <= c_psi.
    pub l1_ratio: f64,
    /// `sup_s sum_j |psi_{j,l}(s)| / 2^(dl/2)`; must stay <= c_psi.
    pub sup_ratio: f64,
    pub size_ratio_upper: f64,
    pub size_ratio_lower: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub d: usize,
    pub levels: Vec<LevelCertificate>,
    pub depth_ratio: f64,
    pub minimal_c_psi: f64,
    pub stored_c_psi: f64,
    pub orthonormality_pairs: usize,
    pub orthonormality_worst_error: f64,
    pub pass: bool,
}

/// Level-blocked coefficients of a basis expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    d: usize,
    levels: Vec<Vec<f64>>,
}

impl CoefficientVector {
    pub fn zeros(basis: &BasisSystem) -> Self {
        Self {
            d: basis.d(),
            levels: basis.block_sizes().iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_levels(d: usize, levels: Vec<Vec<f64>>) -> Self {
        debug_assert!(levels.iter().flatten().all(|v| v.is_finite()));
        Self { d, levels }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Coefficients of block `l` (1-based).
    pub fn level(&self, l: usize) -> &[f64] {
        &self.levels[l - 1]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.levels[l - 1]
    }

    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.levels[l - 1][j]
    }

    pub fn set(&mut self, l: usize, j: usize, v: f64) {
        self.levels[l - 1][j] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(li, b)| b.iter().enumerate().map(move |(j, &v)| ((li + 1, j), v)))
    }

    pub fn coefficient_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.levels.iter().flatten().all(|&v| v == 0.0)
    }

    /// Keeps only the blocks up to level `m`, zeroing everything above.
    pub fn truncated(&self, m: usize) -> Self {
        let mut out = self.clone();
        for l in (m + 1)..=self.level_count() {
            for v in out.level_mut(l) {
                *v = 0.0;
            }
        }
        out
    }

    /// Coefficient-wise difference; shapes must match.
    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.d, other.d);
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Self { d: self.d, levels }
    }

    pub fn add(&self, other: &Self) -> Self {
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Self { d: self.d, levels }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            d: self.d,
            levels: self.levels.iter().map(|b| b.iter().map(|&v| c * v).collect()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CoefficientWire {
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    blocks: Vec<Vec<f64>>,
}

impl Serialize for CoefficientVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CoefficientWire { d: self.d, l: self.levels.len(), blocks: self.levels.clone() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CoefficientVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = CoefficientWire::deserialize(deserializer)?;
        if wire.blocks.len() != wire.l {
            return Err(D::Error::custom(format!(
                "L={} but {} blocks present",
                wire.l,
                wire.blocks.len()
            )));
        }
        if wire.blocks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(D::Error::custom("non-finite coefficient"));
        }
        Ok(CoefficientVector::from_levels(wire.d, wire.blocks))
    }
}
