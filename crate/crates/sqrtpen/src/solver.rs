//! Minimization of the penalized empirical risk
//! `R_n(G_alpha) + lambda * sqrt(I(alpha))`.
//!
//! The objective is piecewise constant in every coordinate (the empirical
//! risk only changes when some sample flips side) while the penalty is
//! strictly increasing in each |alpha_{j,l}| with the other coordinates
//! fixed. A one-dimensional slice therefore attains its minimum at a sample
//! breakpoint, at zero, or arbitrarily close to a breakpoint on the side
//! facing zero. Two solvers exploit this:
//!
//! - `solve_lattice`: exact global search over a per-coefficient grid with
//!   levelwise step `delta * 2^(-dl/2)` inside `|alpha| <= M * 2^(-dl/2)`,
//!   the same discretization the covering-net construction uses. Certified
//!   `global-on-lattice`.
//! - `solve_coordinate_descent`: cyclic sweeps in level-major order; each
//!   coordinate is set to the exact minimizer over its breakpoint candidate
//!   set. Objectives never increase, and the best of several restarts
//!   (zero, a cellwise pilot, then seeded random draws) is returned with a
//!   `local` certificate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem, CoefficientVector};
use crate::dyadic::DyadicFunction;
use crate::penalty::{penalty, PenaltyConfig};
use crate::risk::{empirical_risk, Dataset, RiskError};
use crate::util::{stream_rng, KahanSum};
use rand::Rng;

#[derive(Error, Debug)]
pub enum SolverError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("lattice has {size} points, exceeding the budget {budget}")]
    LatticeBudget { size: u128, budget: u128 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    #[serde(rename = "coordinate-descent")]
    CoordinateDescent,
    #[serde(rename = "lattice")]
    Lattice,
}

/// Per-coefficient value grids for the exhaustive search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum LatticeSpec {
    /// Step `delta * 2^(-dl/2)` within `|alpha| <= m * 2^(-dl/2)`.
    Auto { m: f64, delta: f64 },
    /// Explicit candidate values per flat coordinate.
    Explicit(Vec<Vec<f64>>),
}

/// Deterministic rule among candidates of equal objective: smallest
/// absolute value first, then the smaller signed value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    #[serde(rename = "smallest-magnitude")]
    SmallestMagnitude,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolveMethod,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
    pub tie_break: TieBreak,
    pub lattice: LatticeSpec,
    pub lattice_budget: u128,
    /// Collect per-sweep coefficient snapshots of the winning restart.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolveMethod::CoordinateDescent,
            max_sweeps: 60,
            restarts: 2,
            seed: 0,
            tie_break: TieBreak::SmallestMagnitude,
            lattice: LatticeSpec::Auto { m: 1.0, delta: 0.5 },
            lattice_budget: 10_000_000,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certificate {
    #[serde(rename = "global-on-lattice")]
    GlobalOnLattice,
    #[serde(rename = "local")]
    Local,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: CoefficientVector,
    pub objective: f64,
    pub risk: f64,
    pub penalty: f64,
    pub sweeps: usize,
    pub certificate: Certificate,
    /// Max - min of the final objectives across restarts (0 for a single
    /// restart or the lattice).
    pub restart_spread: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<CoefficientVector>,
}

/// The penalized objective at `alpha`, recomputed from scratch.
pub fn objective(
    data: &Dataset,
    basis: &BasisSystem,
    cfg: &PenaltyConfig,
    alpha: &CoefficientVector,
) -> Result<f64, SolverError> {
    Ok(empirical_risk(data, basis, alpha)? + penalty(alpha, cfg))
}

pub fn solve(
    data: &Dataset,
    basis: &BasisSystem,
    cfg: &PenaltyConfig,
    solver_cfg: &SolverConfig,
) -> Result<FitResult, SolverError> {
    match solver_cfg.method {
        SolveMethod::CoordinateDescent => solve_coordinate_descent(data, basis, cfg, solver_cfg),
        SolveMethod::Lattice => solve_lattice(data, basis, cfg, solver_cfg),
    }
}

// ---------------------------------------------------------------------------
// shared machinery
// ---------------------------------------------------------------------------

/// Samples touched by one coordinate, with the basis value at each.
struct Support {
    entries: Vec<Vec<(u32, f64)>>,
}

struct Workspace<'a> {
    data: &'a Dataset,
    basis: &'a BasisSystem,
    support: Support,
    /// Flat coordinate -> (level, index-in-block).
    coords: Vec<(usize, usize)>,
    /// Level weights `2^(dl/4)` entering the penalty terms.
    weights: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(data: &'a Dataset, basis: &'a BasisSystem) -> Result<Self, SolverError> {
        if data.is_empty() {
            return Err(SolverError::EmptyData);
        }
        if data.d() != Some(basis.d()) {
            return Err(SolverError::InvalidConfig(format!(
                "dataset dimension {:?} vs basis {}",
                data.d(),
                basis.d()
            )));
        }
        let d = basis.d();
        let levels = basis.levels();
        let patterns = ((1u32 << d) - 1) as usize;
        let total = basis.total();
        let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); total];
        let offsets: Vec<usize> = (0..=levels).map(|m| basis.cumulative_size(m)).collect();
        for (si, sample) in data.samples().iter().enumerate() {
            entries[0].push((si as u32, 1.0)); // scaling
            for l in 1..=levels {
                let r = l - 1;
                let fine_side = 1usize << (r + 1);
                let mut rank = 0usize;
                let mut bits = 0u32;
                for (i, &x) in sample.s().iter().enumerate() {
                    let c = ((x * fine_side as f64).floor() as isize)
                        .clamp(0, fine_side as isize - 1) as usize;
                    rank = rank * (fine_side >> 1) + (c >> 1);
                    bits |= ((c & 1) as u32) << i;
                }
                let amp = 2f64.powf((r * d) as f64 * 0.5);
                let base = offsets[l - 1] + usize::from(l == 1) + rank * patterns;
                for pattern in 1..=patterns as u32 {
                    let sign = if (pattern & bits).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    entries[base + (pattern - 1) as usize].push((si as u32, amp * sign));
                }
            }
        }
        let mut coords = Vec::with_capacity(total);
        for l in 1..=levels {
            for j in 0..basis.block_size(l) {
                coords.push((l, j));
            }
        }
        let weights =
            (1..=levels).map(|l| 2f64.powf((d * l) as f64 * 0.25)).collect();
        Ok(Self { data, basis, support: Support { entries }, coords, weights })
    }

    fn finalize(
        &self,
        alpha: CoefficientVector,
        cfg: &PenaltyConfig,
        sweeps: usize,
        certificate: Certificate,
        restart_spread: f64,
        trace: Vec<CoefficientVector>,
    ) -> Result<FitResult, SolverError> {
        let risk = empirical_risk(self.data, self.basis, &alpha)?;
        let pen = penalty(&alpha, cfg);
        Ok(FitResult {
            alpha,
            objective: risk + pen,
            risk,
            penalty: pen,
            sweeps,
            certificate,
            restart_spread,
            trace,
        })
    }
}

/// Sorted distinct one-dimensional breakpoint candidates for a coordinate:
/// zero plus every value that puts some supported sample exactly on the
/// decision boundary.
pub fn breakpoints_1d(
    data: &Dataset,
    basis: &BasisSystem,
    alpha: &CoefficientVector,
    coordinate: (usize, usize),
) -> Result<Vec<f64>, SolverError> {
    let ws = Workspace::new(data, basis)?;
    let flat = ws
        .coords
        .iter()
        .position(|&c| c == coordinate)
        .ok_or_else(|| SolverError::InvalidConfig(format!("coordinate {coordinate:?} out of range")))?;
    let mut fvals: Vec<f64> =
        data.samples().iter().map(|s| basis.synthesize_at(alpha, s.s())).collect();
    let cur = alpha.get(coordinate.0, coordinate.1);
    let mut out = vec![0.0f64];
    for &(si, psi) in &ws.support.entries[flat] {
        let s = &data.samples()[si as usize];
        let f_minus = fvals[si as usize] - cur * psi;
        out.push((s.t() - f_minus) / psi);
    }
    fvals.clear();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Running best candidate under the smallest-magnitude tie rule.
struct BestCandidate {
    obj: f64,
    c: f64,
    s: f64,
    any: bool,
}

impl BestCandidate {
    fn new() -> Self {
        Self { obj: f64::INFINITY, c: 0.0, s: 0.0, any: false }
    }

    fn consider(&mut self, obj: f64, c: f64, s: f64) {
        let better = !self.any
            || obj < self.obj
            || (obj == self.obj && (c.abs(), c) < (self.c.abs(), self.c));
        if better {
            *self = Self { obj, c, s, any: true };
        }
    }
}

/// One breakpoint-exact coordinate update. Returns the accepted candidate
/// and the support error total at it, or `None` when no candidate strictly
/// beats the current value.
#[allow(clippy::too_many_arguments)]
fn descend_coordinate(
    samples: &[(f64, f64)],        // (t, y) of supported samples
    psis: &[f64],                  // basis values at those samples
    fvals: &[f64],                 // current synthesized values (full index space)
    idx: &[u32],                   // sample indices of the support
    cur: f64,                      // current coordinate value
    lambda_terms: (f64, f64, f64), // (lambda, other-level term sum, level weight)
    block_base: f64,               // block abs-sum excluding this coordinate
    out_err: f64,                  // squared error outside the support
    n: f64,
) -> Option<(f64, f64)> {
    let (lambda, other_terms, weight) = lambda_terms;
    let pen_at = |c: f64| lambda * (other_terms + weight * (block_base + c.abs()).sqrt());

    // Breakpoints and flip bookkeeping. delta = err(predict 1) - err(predict 0).
    let mut events: Vec<(f64, f64, bool)> = Vec::with_capacity(samples.len()); // (c, delta, psi>0)
    let mut base0 = 0.0; // all supported samples classified 0
    let mut s_init = 0.0;
    for (k, &(t, y)) in samples.iter().enumerate() {
        let psi = psis[k];
        let f_minus = fvals[idx[k] as usize] - cur * psi;
        let c = (t - f_minus) / psi;
        let delta = 1.0 - 2.0 * y;
        base0 += y * y;
        if psi < 0.0 {
            s_init += delta; // classified 1 left of its breakpoint
        }
        events.push((c, delta, psi > 0.0));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best = BestCandidate::new();
    let consider = |best: &mut BestCandidate, c: f64, s: f64| {
        best.consider((out_err + base0 + s) / n + pen_at(c), c, s);
    };

    if events.is_empty() {
        consider(&mut best, 0.0, 0.0);
    } else {
        // Interval left of the first breakpoint: in float arithmetic only
        // the zero-facing side matters; skip representatives that collapse
        // onto an endpoint (the interval then has no interior points).
        let first = events[0].0;
        if first > 0.0 {
            consider(&mut best, 0.0, s_init);
        } else {
            let rep = first - first.abs().max(1.0) * 2f64.powi(-40);
            if rep < first {
                consider(&mut best, rep, s_init);
            }
        }
        let mut s_run = s_init;
        let mut k = 0usize;
        while k < events.len() {
            let b = events[k].0;
            let mut pos = 0.0;
            let mut neg = 0.0;
            let mut kk = k;
            while kk < events.len() && events[kk].0 == b {
                if events[kk].2 {
                    pos += events[kk].1;
                } else {
                    neg += events[kk].1;
                }
                kk += 1;
            }
            let s_at = s_run + pos;
            consider(&mut best, b, s_at);
            s_run = s_at - neg;
            // Interval (b, next) or (b, +inf).
            match events.get(kk).map(|e| e.0) {
                Some(nb) => {
                    let rep = if b >= 0.0 {
                        b + (nb - b) * 2f64.powi(-40)
                    } else if nb <= 0.0 {
                        nb - (nb - b) * 2f64.powi(-40)
                    } else {
                        0.0
                    };
                    if rep > b && rep < nb {
                        consider(&mut best, rep, s_run);
                    }
                }
                None => {
                    let rep = if b >= 0.0 { b + b.abs().max(1.0) * 2f64.powi(-40) } else { 0.0 };
                    if rep > b {
                        consider(&mut best, rep, s_run);
                    }
                }
            }
            k = kk;
        }
        // Zero is always admissible.
        consider(&mut best, 0.0, support_state_at(0.0, &events, s_init));
    }

    let cur_s = support_state_at(cur, &events, s_init);
    let cur_obj = (out_err + base0 + cur_s) / n + pen_at(cur);
    if best.any && best.obj < cur_obj {
        Some((best.c, base0 + best.s))
    } else {
        None
    }
}

/// Classified-1 delta sum at coordinate value `c`: positive-psi samples are
/// predicted 1 from their breakpoint on (closed), negative-psi samples up
/// to theirs (closed).
fn support_state_at(c: f64, events: &[(f64, f64, bool)], s_init: f64) -> f64 {
    let mut s = s_init;
    for &(b, delta, positive) in events {
        if positive {
            if c >= b {
                s += delta;
            }
        } else if c > b {
            s -= delta;
        }
    }
    s
}

// ---------------------------------------------------------------------------
// coordinate descent
// ---------------------------------------------------------------------------

pub fn solve_coordinate_descent(
    data: &Dataset,
    basis: &BasisSystem,
    cfg: &PenaltyConfig,
    solver_cfg: &SolverConfig,
) -> Result<FitResult, SolverError> {
    if solver_cfg.max_sweeps == 0 || solver_cfg.restarts == 0 {
        return Err(SolverError::InvalidConfig("max_sweeps and restarts must be >= 1".into()));
    }
    let ws = Workspace::new(data, basis)?;
    let mut best: Option<(f64, CoefficientVector, usize, Vec<CoefficientVector>)> = None;
    let mut spread = (f64::INFINITY, f64::NEG_INFINITY);
    for restart in 0..solver_cfg.restarts {
        let init = match restart {
            0 => CoefficientVector::zeros(basis),
            1 => pilot_start(data, basis)?,
            _ => random_start(basis, solver_cfg.seed, restart as u64),
        };
        let (alpha, sweeps, trace) = run_descent(&ws, cfg, init, solver_cfg)?;
        let obj = objective(data, basis, cfg, &alpha)?;
        spread = (spread.0.min(obj), spread.1.max(obj));
        let better = match &best {
            None => true,
            Some((bo, ..)) => obj < *bo,
        };
        if better {
            best = Some((obj, alpha, sweeps, trace));
        }
    }
    let (_, alpha, sweeps, trace) = best.expect("at least one restart ran");
    ws.finalize(alpha, cfg, sweeps, Certificate::Local, spread.1 - spread.0, trace)
}

fn run_descent(
    ws: &Workspace<'_>,
    cfg: &PenaltyConfig,
    mut alpha: CoefficientVector,
    solver_cfg: &SolverConfig,
) -> Result<(CoefficientVector, usize, Vec<CoefficientVector>), SolverError> {
    let data = ws.data;
    let basis = ws.basis;
    let n = data.len() as f64;
    let levels = basis.levels();
    let mut trace = Vec::new();
    let mut sweeps_done = 0usize;
    let mut scratch: (Vec<(f64, f64)>, Vec<f64>, Vec<u32>) = Default::default();
    for _sweep in 0..solver_cfg.max_sweeps {
        sweeps_done += 1;
        // Fresh per-sweep state: synthesized values, block sums, total error.
        let mut fvals: Vec<f64> =
            data.samples().iter().map(|s| basis.synthesize_at(&alpha, s.s())).collect();
        let mut block_sums: Vec<f64> = (1..=levels)
            .map(|l| {
                let mut acc = KahanSum::default();
                for &v in alpha.level(l) {
                    acc.add(v.abs());
                }
                acc.value()
            })
            .collect();
        let mut total_err = {
            let mut acc = KahanSum::default();
            for (s, &f) in data.samples().iter().zip(&fvals) {
                let pred = if f >= s.t() { 1.0 } else { 0.0 };
                acc.add((s.y() - pred) * (s.y() - pred));
            }
            acc.value()
        };
        let mut improved = false;
        for (flat, &(l, j)) in ws.coords.iter().enumerate() {
            let support = &ws.support.entries[flat];
            let cur = alpha.get(l, j);
            if support.is_empty() {
                // No sample sees this coordinate: zero is optimal.
                if cur != 0.0 {
                    block_sums[l - 1] = (block_sums[l - 1] - cur.abs()).max(0.0);
                    alpha.set(l, j, 0.0);
                    improved = true;
                }
                continue;
            }
            let (ts, psis, idx) = &mut scratch;
            ts.clear();
            psis.clear();
            idx.clear();
            let mut supp_err = 0.0;
            for &(si, psi) in support {
                let s = &data.samples()[si as usize];
                ts.push((s.t(), s.y()));
                psis.push(psi);
                idx.push(si);
                let pred = if fvals[si as usize] >= s.t() { 1.0 } else { 0.0 };
                supp_err += (s.y() - pred) * (s.y() - pred);
            }
            let out_err = total_err - supp_err;
            let block_base = (block_sums[l - 1] - cur.abs()).max(0.0);
            let other_terms: f64 = block_sums
                .iter()
                .enumerate()
                .map(|(k, &b)| {
                    if k == l - 1 {
                        0.0
                    } else {
                        ws.weights[k] * b.sqrt()
                    }
                })
                .sum();
            if let Some((c_new, new_supp_err)) = descend_coordinate(
                ts,
                psis,
                &fvals,
                idx,
                cur,
                (cfg.lambda, other_terms, ws.weights[l - 1]),
                block_base,
                out_err,
                n,
            ) {
                let dc = c_new - cur;
                for (k, &si) in idx.iter().enumerate() {
                    fvals[si as usize] += dc * psis[k];
                }
                block_sums[l - 1] = block_base + c_new.abs();
                total_err = out_err + new_supp_err;
                alpha.set(l, j, c_new);
                improved = true;
            }
        }
        if solver_cfg.trace {
            trace.push(alpha.clone());
        }
        if !improved {
            break;
        }
    }
    Ok((alpha, sweeps_done, trace))
}

/// Cellwise pilot: on each finest dyadic s-cell, the threshold minimizing
/// the local misclassification count (candidates: 0 and the local T values,
/// smallest winner), analyzed into coefficients. Cells without samples fall
/// back to 1/2.
fn pilot_start(data: &Dataset, basis: &BasisSystem) -> Result<CoefficientVector, SolverError> {
    let depth = basis.grid_depth();
    let d = basis.d();
    let mut table = DyadicFunction::zeros(d, depth).map_err(BasisError::from)?;
    let cells = table.values().len();
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); cells];
    for (si, sample) in data.samples().iter().enumerate() {
        members[table.cell_of(sample.s())].push(si as u32);
    }
    for (cell, list) in members.iter().enumerate() {
        if list.is_empty() {
            table.values_mut()[cell] = 0.5;
            continue;
        }
        let mut candidates: Vec<f64> = vec![0.0];
        candidates.extend(list.iter().map(|&si| data.samples()[si as usize].t()));
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let mut best = (f64::INFINITY, 0.0);
        for &tau in &candidates {
            let mut cost = 0.0;
            for &si in list {
                let s = &data.samples()[si as usize];
                let pred = if tau >= s.t() { 1.0 } else { 0.0 };
                cost += (s.y() - pred) * (s.y() - pred);
            }
            if cost < best.0 {
                best = (cost, tau);
            }
        }
        table.values_mut()[cell] = best.1;
    }
    Ok(basis.analyze(&table)?)
}

/// Sparse random draw inside the unit lattice body, for restarts past the
/// zero and pilot starts.
fn random_start(basis: &BasisSystem, seed: u64, restart: u64) -> CoefficientVector {
    let mut rng = stream_rng(seed, 0x5eed_0000 + restart);
    let mut alpha = CoefficientVector::zeros(basis);
    let d = basis.d();
    for l in 1..=basis.levels() {
        let w = 2f64.powf(-((d * l) as f64) * 0.5);
        for j in 0..basis.block_size(l) {
            if rng.random::<f64>() < 0.5 {
                alpha.set(l, j, rng.random_range(-w..w));
            }
        }
    }
    alpha
}

// ---------------------------------------------------------------------------
// exhaustive lattice search
// ---------------------------------------------------------------------------

pub fn solve_lattice(
    data: &Dataset,
    basis: &BasisSystem,
    cfg: &PenaltyConfig,
    solver_cfg: &SolverConfig,
) -> Result<FitResult, SolverError> {
    let ws = Workspace::new(data, basis)?;
    let grids = lattice_grids(basis, &solver_cfg.lattice)?;
    let size: u128 = grids.iter().map(|g| g.len() as u128).product();
    if size > solver_cfg.lattice_budget {
        return Err(SolverError::LatticeBudget { size, budget: solver_cfg.lattice_budget });
    }
    let n = data.len() as f64;
    let total = basis.total();

    // Odometer over digit indices, last coordinate fastest, values ordered
    // by (|v|, v): the first objective minimum found is then the preferred
    // one coordinate by coordinate.
    let mut digits = vec![0usize; total];
    let mut alpha = CoefficientVector::zeros(basis);
    for (flat, grid) in grids.iter().enumerate() {
        let (l, j) = ws.coords[flat];
        alpha.set(l, j, grid[0]);
    }
    let mut fvals: Vec<f64> =
        data.samples().iter().map(|s| basis.synthesize_at(&alpha, s.s())).collect();
    let mut best: Option<(f64, CoefficientVector)> = None;
    let mut visited: u128 = 0;
    loop {
        visited += 1;
        // Exact objective at the current lattice point.
        let mut err = 0.0;
        for (s, &f) in data.samples().iter().zip(&fvals) {
            let pred = if f >= s.t() { 1.0 } else { 0.0 };
            err += (s.y() - pred) * (s.y() - pred);
        }
        let obj = err / n + penalty(&alpha, cfg);
        if best.as_ref().map_or(true, |(bo, _)| obj < *bo) {
            best = Some((obj, alpha.clone()));
        }
        // Advance.
        let mut pos = total;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            let (l, j) = ws.coords[pos];
            let old = alpha.get(l, j);
            digits[pos] += 1;
            if digits[pos] < grids[pos].len() {
                let new = grids[pos][digits[pos]];
                apply_delta(&mut fvals, &ws.support.entries[pos], new - old);
                alpha.set(l, j, new);
                break;
            }
            digits[pos] = 0;
            let new = grids[pos][0];
            apply_delta(&mut fvals, &ws.support.entries[pos], new - old);
            alpha.set(l, j, new);
            if pos == 0 {
                let (obj, alpha_best) = best.expect("lattice visited at least one point");
                debug_assert_eq!(visited, size);
                let _ = obj;
                return ws.finalize(
                    alpha_best,
                    cfg,
                    0,
                    Certificate::GlobalOnLattice,
                    0.0,
                    Vec::new(),
                );
            }
        }
        // Periodic refresh against drift on long enumerations.
        if visited % (1 << 16) == 0 {
            for (si, s) in data.samples().iter().enumerate() {
                fvals[si] = basis.synthesize_at(&alpha, s.s());
            }
        }
    }
}

fn apply_delta(fvals: &mut [f64], support: &[(u32, f64)], dc: f64) {
    if dc != 0.0 {
        for &(si, psi) in support {
            fvals[si as usize] += dc * psi;
        }
    }
}

fn lattice_grids(basis: &BasisSystem, spec: &LatticeSpec) -> Result<Vec<Vec<f64>>, SolverError> {
    let mut grids = Vec::with_capacity(basis.total());
    match spec {
        LatticeSpec::Auto { m, delta } => {
            if !(m > &0.0) || !(delta > &0.0) {
                return Err(SolverError::InvalidConfig(format!(
                    "lattice m = {m} and delta = {delta} must be positive"
                )));
            }
            let k = (m / delta + 1e-9).floor() as i64;
            for l in 1..=basis.levels() {
                let w = 2f64.powf(-((basis.d() * l) as f64) * 0.5);
                let mut vals = vec![0.0f64];
                for i in 1..=k {
                    vals.push(-(i as f64) * delta * w);
                    vals.push(i as f64 * delta * w);
                }
                for _ in 0..basis.block_size(l) {
                    grids.push(vals.clone());
                }
            }
        }
        LatticeSpec::Explicit(values) => {
            if values.len() != basis.total() {
                return Err(SolverError::InvalidConfig(format!(
                    "{} explicit grids for {} coefficients",
                    values.len(),
                    basis.total()
                )));
            }
            for vals in values {
                if vals.is_empty() {
                    return Err(SolverError::InvalidConfig("empty candidate grid".into()));
                }
                let mut v = vals.clone();
                v.sort_by(|a, b| (a.abs(), *a).partial_cmp(&(b.abs(), *b)).unwrap());
                v.dedup();
                grids.push(v);
            }
        }
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::Sample;

    fn toy(points: &[(f64, f64, f64)]) -> Dataset {
        Dataset::new(
            points.iter().map(|&(s, t, y)| Sample::new(vec![s], t, y)).collect(),
            "toy".into(),
            0,
        )
        .unwrap()
    }

    fn scaling_alpha(basis: &BasisSystem, c: f64) -> CoefficientVector {
        let mut a = CoefficientVector::zeros(basis);
        a.set(1, 0, c);
        a
    }

    #[test]
    fn objective_composes_risk_and_penalty() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let data = toy(&[(0.2, 0.3, 1.0), (0.6, 0.7, 0.0), (0.9, 0.1, 1.0)]);
        let alpha = scaling_alpha(&basis, 0.5);
        let cfg = PenaltyConfig::with_lambda(0.1);
        let obj = objective(&data, &basis, &cfg, &alpha).unwrap();
        let expect = 0.1 * (2f64.sqrt() * 0.5).sqrt();
        assert!((obj - expect).abs() < 1e-12);
        assert!((expect - 0.084090).abs() < 1e-6);

        let free = PenaltyConfig::with_lambda(0.0);
        let zero = CoefficientVector::zeros(&basis);
        assert_eq!(
            objective(&data, &basis, &free, &zero).unwrap(),
            empirical_risk(&data, &basis, &zero).unwrap()
        );
    }

    #[test]
    fn breakpoint_sets() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let zero = CoefficientVector::zeros(&basis);

        // A single sample: the scaling coordinate flips at T_1.
        let one = toy(&[(0.2, 0.3, 1.0)]);
        let bps = breakpoints_1d(&one, &basis, &zero, (1, 0)).unwrap();
        assert_eq!(bps, vec![0.0, 0.3]);

        // No sample lands in the support of the second level-2 wavelet
        // (cells [1/2, 3/4) and [3/4, 1)).
        let low = toy(&[(0.1, 0.5, 1.0), (0.3, 0.5, 0.0)]);
        let bps = breakpoints_1d(&low, &basis, &zero, (2, 1)).unwrap();
        assert_eq!(bps, vec![0.0]);

        // At most n + 1 candidates.
        let many = toy(&[
            (0.05, 0.1, 1.0),
            (0.15, 0.2, 0.0),
            (0.35, 0.3, 1.0),
            (0.65, 0.4, 0.0),
            (0.95, 0.5, 1.0),
        ]);
        let bps = breakpoints_1d(&many, &basis, &zero, (1, 0)).unwrap();
        assert!(bps.len() <= 6);
    }

    #[test]
    fn lattice_three_point_hand_enumeration() {
        // One sample at (s, 0.3) with label 1; scaling grid {0, 1/2, 1},
        // the mother coordinate pinned to zero.
        let basis = BasisSystem::haar(1, 1).unwrap();
        let data = toy(&[(0.2, 0.3, 1.0)]);
        let cfg = PenaltyConfig::with_lambda(0.01);
        let solver_cfg = SolverConfig {
            method: SolveMethod::Lattice,
            lattice: LatticeSpec::Explicit(vec![vec![0.0, 0.5, 1.0], vec![0.0]]),
            ..SolverConfig::default()
        };
        let fit = solve(&data, &basis, &cfg, &solver_cfg).unwrap();
        assert_eq!(fit.alpha.get(1, 0), 0.5);
        assert_eq!(fit.alpha.get(1, 1), 0.0);
        let expect = 0.01 * (2f64.sqrt() * 0.5).sqrt();
        assert!((fit.objective - expect).abs() < 1e-12);
        assert_eq!(fit.certificate, Certificate::GlobalOnLattice);
        assert!((fit.objective - (fit.risk + fit.penalty)).abs() < 1e-12);
    }

    #[test]
    fn lattice_large_lambda_returns_zero() {
        // Any nonzero lattice point has penalty >= 3 * sqrt(delta) > 1 >= risk gain.
        let basis = BasisSystem::haar(1, 2).unwrap();
        let data = toy(&[(0.1, 0.4, 1.0), (0.4, 0.2, 1.0), (0.8, 0.6, 0.0)]);
        let cfg = PenaltyConfig::with_lambda(3.0);
        let solver_cfg =
            SolverConfig { method: SolveMethod::Lattice, ..SolverConfig::default() };
        let fit = solve(&data, &basis, &cfg, &solver_cfg).unwrap();
        assert!(fit.alpha.is_zero());
    }

    #[test]
    fn lattice_budget_guard() {
        let basis = BasisSystem::haar(1, 3).unwrap();
        let data = toy(&[(0.2, 0.3, 1.0)]);
        let cfg = PenaltyConfig::with_lambda(0.1);
        let solver_cfg = SolverConfig {
            method: SolveMethod::Lattice,
            lattice_budget: 100,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&data, &basis, &cfg, &solver_cfg),
            Err(SolverError::LatticeBudget { .. })
        ));
    }

    #[test]
    fn descent_kills_everything_above_the_analytic_threshold() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let data = toy(&[(0.1, 0.4, 1.0), (0.3, 0.3, 1.0), (0.7, 0.8, 0.0), (0.9, 0.2, 1.0)]);
        // Smallest breakpoint magnitude over all coordinates is >= 0.2 / sqrt(2);
        // the coarsest level weight is 2^(1/4). Any first move from zero incurs
        // penalty at least lambda * 2^(1/4) * sqrt(0.1) > 1 >= achievable gain.
        let cfg = PenaltyConfig::with_lambda(4.0);
        let solver_cfg = SolverConfig { restarts: 3, ..SolverConfig::default() };
        let fit = solve(&data, &basis, &cfg, &solver_cfg).unwrap();
        assert!(fit.alpha.is_zero(), "expected exact zero, got {:?}", fit.alpha);
        assert_eq!(fit.risk, fit.objective);
    }

    #[test]
    fn descent_beats_zero_on_separable_data() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        // Separated by f = 0.5: labels 1 below, 0 above.
        let data = toy(&[
            (0.1, 0.2, 1.0),
            (0.3, 0.45, 1.0),
            (0.6, 0.3, 1.0),
            (0.2, 0.7, 0.0),
            (0.8, 0.55, 0.0),
            (0.9, 0.9, 0.0),
        ]);
        let cfg = PenaltyConfig::with_lambda(1e-4);
        let fit = solve(&data, &basis, &cfg, &SolverConfig::default()).unwrap();
        let at_zero =
            objective(&data, &basis, &cfg, &CoefficientVector::zeros(&basis)).unwrap();
        assert!(fit.objective < at_zero);
        assert_eq!(fit.risk, 0.0, "separable data should be fit exactly");
        assert_eq!(fit.certificate, Certificate::Local);
    }

    #[test]
    fn descent_single_sample_reaches_breakpoint_optimum() {
        let basis = BasisSystem::haar(1, 1).unwrap();
        let data = toy(&[(0.2, 0.3, 1.0)]);
        let cfg = PenaltyConfig::with_lambda(0.01);
        let fit = solve(&data, &basis, &cfg, &SolverConfig::default()).unwrap();
        // The exact optimum classifies the sample correctly at the cheapest
        // coefficient: |alpha| = 0.3 on a single coordinate.
        assert_eq!(fit.risk, 0.0);
        let i: f64 = crate::penalty::nonsparsity(&fit.alpha);
        assert!((i - 2f64.sqrt() * 0.3).abs() < 1e-9, "I = {i}");
    }

    #[test]
    fn descent_is_deterministic() {
        let basis = BasisSystem::haar(1, 3).unwrap();
        let model = crate::model::ModelSpec::binary_channel(
            crate::dyadic::EdgeFunction::constant(1, 0.45),
            0.8,
        )
        .unwrap();
        let data = model.sample_dataset(60, 17).unwrap();
        let cfg = PenaltyConfig::with_lambda(0.05);
        let solver_cfg = SolverConfig { restarts: 4, seed: 11, ..SolverConfig::default() };
        let a = solve(&data, &basis, &cfg, &solver_cfg).unwrap();
        let b = solve(&data, &basis, &cfg, &solver_cfg).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.sweeps, b.sweeps);
        assert!(a.restart_spread >= 0.0);
    }

    #[test]
    fn reported_components_recompose() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let model = crate::model::ModelSpec::binary_channel(
            crate::dyadic::EdgeFunction::constant(1, 0.5),
            0.75,
        )
        .unwrap();
        let data = model.sample_dataset(40, 5).unwrap();
        let cfg = PenaltyConfig::with_lambda(0.08);
        let fit = solve(&data, &basis, &cfg, &SolverConfig::default()).unwrap();
        let risk = empirical_risk(&data, &basis, &fit.alpha).unwrap();
        let pen = penalty(&fit.alpha, &cfg);
        assert!((fit.objective - (risk + pen)).abs() < 1e-12);
        assert_eq!(fit.risk, risk);
        assert_eq!(fit.penalty, pen);
    }
}
