//! Executable checks of the estimator's supporting inequalities.
//!
//! Deterministic certifications (exact dyadic arithmetic, zero tolerance for
//! violations beyond rounding):
//!
//! - `check_l1_bound`: `||f_alpha||_1 <= c_psi I(alpha)`.
//! - `check_nonsparsity_bound`: `I(alpha) <= c_d c_psi^2 N(alpha) ||f_alpha||_1`
//!   for level-truncated vectors.
//! - `check_power_tradeoff`: the scalar inequality
//!   `v t^(1/(2k)) <= (delta/2) t + c_k delta^(-1/(2k-1)) v^(2k/(2k-1))`.
//! - `build_bracket_net` / cover and cardinality checks: the constructive
//!   sup-norm net over the body `I(alpha) <= M` with its counting bound.
//! - `check_margin_condition`: the two-sided identifiability bounds.
//!
//! Monte Carlo probes (calibration parameters, regression-pinned output):
//!
//! - `probe_empirical_process`: normalized supremum-type ratios of
//!   `sqrt(n)(R_n - R)` increments over a finite probe family.
//! - `check_oracle_inequality`: frequency of the oracle-style risk-bound
//!   event, with the infimum replaced by level-truncated projections of the
//!   truth (an explicit, reported surrogate).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem, CoefficientVector};
use crate::model::{ModelError, ModelKind, ModelSpec};
use crate::penalty::{
    active_size, dimension_constant, lambda_n, nonsparsity, sqrt_nonsparsity, PenaltyConfig,
    PenaltyError, TheoryConstants,
};
use crate::risk::RiskError;
use crate::solver::{solve_coordinate_descent, SolverConfig, SolverError};
use crate::util::{derive_seed, stream_rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Error, Debug)]
pub enum TheoryError {
    #[error("net enumeration would produce {size} elements, budget is {budget}")]
    NetBudget { size: u128, budget: u128 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Dyadic(#[from] crate::dyadic::DyadicError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Outcome of a randomized inequality certification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed lhs/rhs (0/0 counted as 0).
    pub worst_ratio: f64,
    /// Most negative rhs - lhs slack observed.
    pub worst_slack: f64,
    pub seed: u64,
    pub pass: bool,
}

const INEQ_TOL: f64 = 1e-10;

/// Random level-blocked coefficients with mixed sparsity and tail weight.
fn random_coefficients(basis: &BasisSystem, rng: &mut ChaCha8Rng) -> CoefficientVector {
    let sparsity = rng.random_range(0.05..1.0);
    let scale = 10f64.powf(rng.random_range(-3.0..1.0));
    let kind: u8 = rng.random_range(0..3);
    let mut alpha = CoefficientVector::zeros(basis);
    for l in 1..=basis.levels() {
        for j in 0..basis.block_size(l) {
            if rng.random::<f64>() >= sparsity {
                continue;
            }
            let v = match kind {
                0 => rng.random_range(-1.0..1.0),
                1 => {
                    // light tails: sum of three uniforms
                    (rng.random_range(-0.5..0.5)
                        + rng.random_range(-0.5..0.5)
                        + rng.random_range(-0.5..0.5))
                        * 2.0
                }
                _ => {
                    // heavy tails via inverse transform, clamped
                    let u: f64 = rng.random_range(1e-3..1.0);
                    let m = (u.powf(-0.7) - 1.0).min(20.0);
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                }
            };
            alpha.set(l, j, scale * v);
        }
    }
    alpha
}

fn certify(
    name: &str,
    trials: usize,
    seed: u64,
    mut one: impl FnMut(&mut ChaCha8Rng, usize) -> (f64, f64), // (lhs, rhs)
) -> InequalityReport {
    let mut rng = stream_rng(seed, 0xcafe);
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut worst_slack = f64::INFINITY;
    for trial in 0..trials {
        let (lhs, rhs) = one(&mut rng, trial);
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
        worst_slack = worst_slack.min(rhs - lhs);
        if lhs > rhs + INEQ_TOL {
            violations += 1;
        }
    }
    InequalityReport {
        name: name.into(),
        trials,
        violations,
        worst_ratio,
        worst_slack,
        seed,
        pass: violations == 0,
    }
}

/// `||f_alpha||_1 <= c_psi I(alpha)` on random coefficient vectors; the L1
/// norm is the exact dyadic integral of the synthesized table.
pub fn check_l1_bound(basis: &BasisSystem, trials: usize, seed: u64) -> InequalityReport {
    certify("l1-vs-nonsparsity", trials, seed, |rng, trial| {
        let alpha =
            if trial == 0 { CoefficientVector::zeros(basis) } else { random_coefficients(basis, rng) };
        let table = basis.synthesize_table(&alpha).expect("shape is valid by construction");
        (table.l1_norm(), basis.c_psi() * nonsparsity(&alpha))
    })
}

/// `I(alpha) <= c_d c_psi^2 N(alpha) ||f_alpha||_1` on random vectors
/// truncated at a random level, exercising the cumulative block size.
pub fn check_nonsparsity_bound(basis: &BasisSystem, trials: usize, seed: u64) -> InequalityReport {
    let c_d = dimension_constant(basis.d());
    let c2 = basis.c_psi() * basis.c_psi();
    certify("nonsparsity-vs-l1", trials, seed, |rng, trial| {
        let alpha = if trial == 0 {
            CoefficientVector::zeros(basis)
        } else {
            let m = rng.random_range(0..=basis.levels());
            random_coefficients(basis, rng).truncated(m)
        };
        let table = basis.synthesize_table(&alpha).expect("shape is valid by construction");
        let n_active = active_size(basis, &alpha) as f64;
        (nonsparsity(&alpha), c_d * c2 * n_active * table.l1_norm())
    })
}

/// The scalar trade-off inequality behind the margin argument:
/// `v t^(1/(2k)) <= (delta/2) t + c_k delta^(-1/(2k-1)) v^(2k/(2k-1))`,
/// including the equality instance at k = delta = v = t = 1.
pub fn check_power_tradeoff(trials: usize, seed: u64) -> InequalityReport {
    certify("power-tradeoff", trials, seed, |rng, trial| {
        let (v, t, kappa, delta): (f64, f64, f64, f64) = if trial == 0 {
            (1.0, 1.0, 1.0, 1.0) // equality case: both sides are 1
        } else {
            (
                rng.random_range(1e-6..10.0),
                rng.random_range(1e-6..10.0),
                rng.random_range(1.0..5.0),
                rng.random_range(1e-3..1.0),
            )
        };
        let c_k = crate::penalty::margin_tradeoff_constant(kappa);
        let lhs = v * t.powf(1.0 / (2.0 * kappa));
        let rhs = 0.5 * delta * t
            + c_k * delta.powf(-1.0 / (2.0 * kappa - 1.0)) * v.powf(2.0 * kappa / (2.0 * kappa - 1.0));
        (lhs, rhs)
    })
}

// ---------------------------------------------------------------------------
// bracketing net
// ---------------------------------------------------------------------------

/// The constructive sup-norm net on `{alpha : I(alpha) <= M}`: coefficients
/// live on levelwise grids of step `delta * 2^(-dl/2)` inside
/// `[-M 2^(-dl/2), M 2^(-dl/2)]`, with at most `floor(M/delta)` nonzero
/// entries per element.
#[derive(Clone, Debug)]
pub struct BracketNet {
    pub d: usize,
    pub levels: usize,
    pub m: f64,
    pub delta: f64,
    pub n_nominal: usize,
    pub elements: Vec<CoefficientVector>,
    /// Claimed covering radius `(c_psi^2 / d) ln(n_nominal) * delta`.
    pub sup_radius: f64,
}

impl BracketNet {
    pub fn cardinality(&self) -> usize {
        self.elements.len()
    }

    /// The counting bound `(M/delta) (ln(2M/delta + 1) + ln(n_nominal + 1))`
    /// on the log-cardinality.
    pub fn log_cardinality_bound(&self) -> f64 {
        log_cardinality_bound(self.m, self.delta, self.n_nominal)
    }
}

pub fn log_cardinality_bound(m: f64, delta: f64, n_nominal: usize) -> f64 {
    (m / delta) * ((2.0 * m / delta + 1.0).ln() + (n_nominal as f64 + 1.0).ln())
}

pub fn build_bracket_net(
    basis: &BasisSystem,
    m: f64,
    delta: f64,
    n_nominal: usize,
    budget: u128,
) -> Result<BracketNet, TheoryError> {
    if !(m >= 0.0) || !(delta > 0.0) {
        return Err(TheoryError::Precondition(format!(
            "need M >= 0 and delta > 0, got M = {m}, delta = {delta}"
        )));
    }
    let total = basis.total();
    let sparse_budget = (m / delta).floor() as usize; // max nonzero coordinates
    let k_max = (m / delta + 1e-9).floor() as i64; // grid indices per coordinate
    // Counting check before enumerating.
    let mut size: u128 = 0;
    let mut choose: u128 = 1; // C(total, n)
    for n in 0..=sparse_budget.min(total) {
        if n > 0 {
            choose = choose * (total - n + 1) as u128 / n as u128;
        }
        let vals = (2 * k_max) as u128;
        size = size.saturating_add(choose.saturating_mul(vals.saturating_pow(n as u32)));
        if size > budget {
            return Err(TheoryError::NetBudget { size, budget });
        }
    }
    let weights: Vec<f64> =
        (0..total).map(|flat| level_weight(basis, flat)).collect();
    let mut elements = Vec::with_capacity(size as usize);
    let mut positions = Vec::new();
    enumerate_sparse(
        basis,
        &weights,
        delta,
        k_max,
        sparse_budget.min(total),
        0,
        &mut positions,
        &mut elements,
    );
    let radius =
        basis.c_psi() * basis.c_psi() / basis.d() as f64 * (n_nominal as f64).ln() * delta;
    Ok(BracketNet {
        d: basis.d(),
        levels: basis.levels(),
        m,
        delta,
        n_nominal,
        elements,
        sup_radius: radius,
    })
}

fn level_weight(basis: &BasisSystem, flat: usize) -> f64 {
    let mut rest = flat;
    for l in 1..=basis.levels() {
        let size = basis.block_size(l);
        if rest < size {
            return 2f64.powf(-((basis.d() * l) as f64) * 0.5);
        }
        rest -= size;
    }
    unreachable!("flat index {flat} out of range")
}

fn flat_to_coord(basis: &BasisSystem, flat: usize) -> (usize, usize) {
    let mut rest = flat;
    for l in 1..=basis.levels() {
        let size = basis.block_size(l);
        if rest < size {
            return (l, rest);
        }
        rest -= size;
    }
    unreachable!("flat index {flat} out of range")
}

#[allow(clippy::too_many_arguments)]
fn enumerate_sparse(
    basis: &BasisSystem,
    weights: &[f64],
    delta: f64,
    k_max: i64,
    budget: usize,
    start: usize,
    positions: &mut Vec<(usize, i64)>,
    out: &mut Vec<CoefficientVector>,
) {
    // Emit the current sparsity pattern with its chosen grid values.
    let mut alpha = CoefficientVector::zeros(basis);
    for &(flat, k) in positions.iter() {
        let (l, j) = flat_to_coord(basis, flat);
        alpha.set(l, j, k as f64 * delta * weights[flat]);
    }
    out.push(alpha);
    if positions.len() == budget {
        return;
    }
    for flat in start..weights.len() {
        for k in 1..=k_max {
            for sign in [1i64, -1] {
                positions.push((flat, sign * k));
                enumerate_sparse(basis, weights, delta, k_max, budget, flat + 1, positions, out);
                positions.pop();
            }
        }
    }
}

/// The levelwise rounding rule: coefficients within `delta * 2^(-dl/2)` of
/// zero are dropped, the rest snap to the nearest grid point inside the box.
pub fn round_to_net(basis: &BasisSystem, net: &BracketNet, alpha: &CoefficientVector) -> CoefficientVector {
    let k_max = (net.m / net.delta + 1e-9).floor() as i64;
    let mut out = CoefficientVector::zeros(basis);
    for ((l, j), v) in alpha.iter() {
        let w = 2f64.powf(-((basis.d() * l) as f64) * 0.5);
        let step = net.delta * w;
        if v.abs() <= step {
            continue;
        }
        let k = (v / step).round() as i64;
        let k = k.clamp(-k_max, k_max);
        out.set(l, j, k as f64 * step);
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetCoverReport {
    pub trials: usize,
    pub worst_sup_distance: f64,
    pub sup_radius: f64,
    pub max_nonzeros_seen: usize,
    pub nonzero_budget: usize,
    pub cardinality: usize,
    pub log_cardinality_bound: f64,
    pub pass: bool,
}

/// Draws random coefficients in the body `I(alpha) <= M`, applies the
/// rounding rule, and verifies membership plus the exact sup-norm radius.
pub fn check_net_cover(
    basis: &BasisSystem,
    net: &BracketNet,
    trials: usize,
    seed: u64,
) -> Result<NetCoverReport, TheoryError> {
    let mut rng = stream_rng(seed, 0xb1ac);
    let budget = (net.m / net.delta).floor() as usize;
    let mut worst = 0.0f64;
    let mut max_nonzeros = 0usize;
    let mut pass = true;
    for _ in 0..trials {
        let raw = random_coefficients(basis, &mut rng);
        let i_raw = nonsparsity(&raw);
        let alpha = if i_raw > 0.0 {
            let target = rng.random_range(0.0..=net.m);
            raw.scale(target / i_raw)
        } else {
            raw
        };
        debug_assert!(nonsparsity(&alpha) <= net.m + 1e-9);
        let rounded = round_to_net(basis, net, &alpha);
        let nz = rounded.iter().filter(|&(_, v)| v != 0.0).count();
        max_nonzeros = max_nonzeros.max(nz);
        if nz > budget {
            pass = false;
        }
        let diff = basis.synthesize_table(&alpha.sub(&rounded))?;
        let dist = diff.sup_norm();
        worst = worst.max(dist);
        if dist > net.sup_radius + 1e-12 {
            pass = false;
        }
    }
    Ok(NetCoverReport {
        trials,
        worst_sup_distance: worst,
        sup_radius: net.sup_radius,
        max_nonzeros_seen: max_nonzeros,
        nonzero_budget: budget,
        cardinality: net.cardinality(),
        log_cardinality_bound: net.log_cardinality_bound(),
        pass,
    })
}

/// `ln(cardinality)` against the counting bound.
pub fn check_net_cardinality(net: &BracketNet) -> (bool, f64, f64) {
    let ln_card = (net.cardinality() as f64).ln();
    let bound = net.log_cardinality_bound();
    (ln_card <= bound + 1e-9, ln_card, bound)
}

// ---------------------------------------------------------------------------
// Monte Carlo probes
// ---------------------------------------------------------------------------

/// Replicate statistics against a bound; `exceedance_frequency` is the
/// fraction of replicates whose statistic exceeds it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub statistics: Vec<f64>,
    pub bound: f64,
    pub exceedance_frequency: f64,
    /// Theoretical tail value attached to the bound, when one exists.
    pub tail_probability_bound: Option<f64>,
    /// Names the computable stand-in when an uncomputable quantity (an
    /// infimum or supremum over all coefficient vectors) was replaced.
    pub surrogate: Option<String>,
    pub parameters: Vec<(String, f64)>,
    pub seed: u64,
}

/// Max over a finite probe family of
/// `|nu_n(alpha) - nu_n(alpha*)| / (sqrt(I(alpha - alpha*)) + sqrt(ln^4 n / n))`
/// with `nu_n = sqrt(n) (R_n - R)` and R exact, per replicate. The family
/// holds random directions around `alpha*` plus coordinate-descent iterates
/// on the replicate's own data.
#[allow(clippy::too_many_arguments)]
pub fn probe_empirical_process(
    model: &ModelSpec,
    basis: &BasisSystem,
    alpha_star: &CoefficientVector,
    n: usize,
    replicates: usize,
    c_probe: f64,
    seed: u64,
) -> Result<ProbeReport, TheoryError> {
    let d = basis.d() as f64;
    let ln4 = (n as f64).ln().powi(4);
    let bound = c_probe * (model.q0() * basis.c_psi().powi(2) * ln4 / d).sqrt();
    let tail = c_probe * (-basis.c_psi() * ln4 / (c_probe * c_probe * d)).exp();
    let statistics: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<f64, TheoryError> {
            let data = model.sample_dataset(n, derive_seed(seed, rep as u64 + 1))?;
            let sqrt_n = (n as f64).sqrt();
            let nu = |alpha: &CoefficientVector| -> Result<f64, TheoryError> {
                let rn = crate::risk::empirical_risk(&data, basis, alpha)?;
                let r = crate::risk::population_risk(model, basis, alpha)?;
                Ok(sqrt_n * (rn - r))
            };
            let nu_star = nu(alpha_star)?;
            let mut family = Vec::new();
            let mut rng = stream_rng(seed, 0xfa31 + rep as u64);
            for scale in [0.02, 0.1, 0.5, 2.0] {
                for _ in 0..3 {
                    let dir = random_coefficients(basis, &mut rng);
                    let i = sqrt_nonsparsity(&dir);
                    if i > 0.0 {
                        family.push(alpha_star.add(&dir.scale(scale / i)));
                    }
                }
            }
            let pen = PenaltyConfig::from_sample_size(n, basis, model.q0(), 0.05)
                .map_err(TheoryError::from)?;
            let cd_cfg = SolverConfig {
                restarts: 1,
                max_sweeps: 6,
                trace: true,
                seed: derive_seed(seed, 0x77 + rep as u64),
                ..SolverConfig::default()
            };
            let fit = solve_coordinate_descent(&data, basis, &pen, &cd_cfg)?;
            family.extend(fit.trace);
            family.push(fit.alpha);
            let mut best = 0.0f64;
            for alpha in &family {
                let denom = sqrt_nonsparsity(&alpha.sub(alpha_star)) + (ln4 / n as f64).sqrt();
                let ratio = (nu(alpha)? - nu_star).abs() / denom;
                best = best.max(ratio);
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let exceed = statistics.iter().filter(|&&s| s > bound).count() as f64 / replicates.max(1) as f64;
    Ok(ProbeReport {
        name: "empirical-process-ratio".into(),
        statistics,
        bound,
        exceedance_frequency: exceed,
        tail_probability_bound: Some(tail),
        surrogate: Some("finite probe family: random directions + descent iterates".into()),
        parameters: vec![
            ("n".into(), n as f64),
            ("replicates".into(), replicates as f64),
            ("c_probe".into(), c_probe),
        ],
        seed,
    })
}

/// Frequency of the oracle-style event
/// `excess(fit) <= (1+delta)^2 min_m {excess(proj_m) + delta^(-1/(2k-1)) V(N_m)}
///  + 2 lambda sqrt(ln^4 n / n)`
/// over seeded replicates, with projections of the truth standing in for
/// the uncomputable infimum. Statistics are `excess(fit) - rhs`; the event
/// holds when the statistic is <= 0.
#[allow(clippy::too_many_arguments)]
pub fn check_oracle_inequality(
    model: &ModelSpec,
    basis: &BasisSystem,
    n: usize,
    replicates: usize,
    delta_slack: f64,
    c_lambda: f64,
    constants: &TheoryConstants,
    solver_cfg: &SolverConfig,
    seed: u64,
) -> Result<ProbeReport, TheoryError> {
    if !(delta_slack > 0.0 && delta_slack <= 1.0) {
        return Err(TheoryError::Precondition(format!(
            "delta_slack = {delta_slack} outside (0, 1]"
        )));
    }
    let c2 = basis.c_psi() * basis.c_psi();
    let floor_n = 8.0 * constants.q0 * c2;
    if (n as f64) < floor_n {
        return Err(TheoryError::Precondition(format!(
            "n = {n} below the required 8 q0 c_psi^2 = {floor_n}"
        )));
    }
    let lambda = lambda_n(n, basis, constants.q0, c_lambda)?;
    let pen = PenaltyConfig { lambda, c_lambda };
    // Level-truncated projections of the truth and their exact excess risks.
    let truth = model.truth().refine(model.truth().depth().max(basis.grid_depth()))?;
    let proj = basis.analyze(&truth)?;
    let kappa = constants.kappa;
    let mut oracle_term = f64::INFINITY;
    for m in 0..=basis.levels() {
        let alpha_m = proj.truncated(m);
        let excess = crate::risk::excess_risk(model, basis, &alpha_m)?;
        let v = constants.variance_term(active_size(basis, &alpha_m), lambda, basis.c_psi());
        let term = excess + delta_slack.powf(-1.0 / (2.0 * kappa - 1.0)) * v;
        oracle_term = oracle_term.min(term);
    }
    let ln4 = (n as f64).ln().powi(4);
    let rhs = (1.0 + delta_slack).powi(2) * oracle_term + 2.0 * lambda * (ln4 / n as f64).sqrt();
    let statistics: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<f64, TheoryError> {
            let data = model.sample_dataset(n, derive_seed(seed, 0x0ace + rep as u64))?;
            let mut cfg = solver_cfg.clone();
            cfg.seed = derive_seed(seed, 0x501e + rep as u64);
            let fit = solve_coordinate_descent(&data, basis, &pen, &cfg)?;
            let excess = crate::risk::excess_risk(model, basis, &fit.alpha)?;
            Ok(excess - rhs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let exceed = statistics.iter().filter(|&&s| s > 0.0).count() as f64 / replicates.max(1) as f64;
    Ok(ProbeReport {
        name: "oracle-inequality-event".into(),
        statistics,
        bound: rhs,
        exceedance_frequency: exceed,
        tail_probability_bound: None,
        surrogate: Some("infimum over level-truncated projections of the truth".into()),
        parameters: vec![
            ("n".into(), n as f64),
            ("replicates".into(), replicates as f64),
            ("delta_slack".into(), delta_slack),
            ("c_lambda".into(), c_lambda),
            ("lambda".into(), lambda),
            ("kappa".into(), kappa),
        ],
        seed,
    })
}

/// Two-sided margin certification on random coefficient vectors:
/// `(1/sigma0) Q(sym diff)^kappa <= excess <= sigma0 q0^kappa ||f - f*||_inf^kappa`.
/// Margin-profile models are probed with sup-deviations inside their band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginReport {
    pub trials: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub worst_lower_slack: f64,
    pub worst_upper_slack: f64,
    pub seed: u64,
    pub pass: bool,
}

pub fn check_margin_condition(
    model: &ModelSpec,
    basis: &BasisSystem,
    trials: usize,
    seed: u64,
) -> Result<MarginReport, TheoryError> {
    let mut rng = stream_rng(seed, 0x3a96);
    let truth = model.truth().refine(model.truth().depth().max(basis.grid_depth()))?;
    let proj = basis.analyze(&truth)?;
    let kappa = model.kappa();
    let sigma0 = model.sigma0();
    let q0 = model.q0();
    let band = match model.kind() {
        ModelKind::Margin { h, .. } => Some(*h),
        _ => None,
    };
    let mut lower_violations = 0usize;
    let mut upper_violations = 0usize;
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::INFINITY;
    for trial in 0..trials {
        let alpha = match band {
            // Stay within the margin band: perturb the truth table by a
            // bounded cellwise field, which the basis represents exactly.
            Some(h) => {
                let mut pert = truth.clone();
                let amp = rng.random_range(0.0..=h);
                for v in pert.values_mut() {
                    *v += rng.random_range(-amp..=amp);
                }
                basis.analyze(&pert)?
            }
            None => {
                if trial == 0 {
                    proj.clone()
                } else {
                    let dir = random_coefficients(basis, &mut rng);
                    let scale = 10f64.powf(rng.random_range(-3.0..0.0));
                    proj.add(&dir.scale(scale))
                }
            }
        };
        let table = basis.synthesize_table(&alpha)?;
        let excess = model.excess_risk_table(&table)?;
        let qd = model.q_symmetric_difference(&table, &truth)?;
        let sup = table.sup_distance(&truth)?;
        let lower = qd.powf(kappa) / sigma0;
        let upper = sigma0 * q0.powf(kappa) * sup.powf(kappa);
        worst_lower = worst_lower.min(excess - lower);
        worst_upper = worst_upper.min(upper - excess);
        if lower > excess + INEQ_TOL {
            lower_violations += 1;
        }
        if excess > upper + INEQ_TOL {
            upper_violations += 1;
        }
    }
    Ok(MarginReport {
        trials,
        lower_violations,
        upper_violations,
        worst_lower_slack: worst_lower,
        worst_upper_slack: worst_upper,
        seed,
        pass: lower_violations == 0 && upper_violations == 0,
    })
}
