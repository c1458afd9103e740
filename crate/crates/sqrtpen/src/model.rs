//! Synthetic joint laws of (X, Y) over the unit cube, X = (S, T).
//!
//! Three families are provided: the binary-channel image model (labels of a
//! clean binary image flipped with probability 1-p), the bounded-noise
//! regression model Y = 1_G0(X) + xi, and a margin-profile family whose
//! regression ramps from 1/2 to {0,1} over a band of width `h` around the
//! edge with exponent `kappa - 1`. Each family exposes closed-form
//! cumulative integrals in the t-direction, so risks of dyadic classifiers
//! are computed exactly, column by column.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{clip01, DyadicError, DyadicFunction, EdgeFunction};
use crate::risk::{Dataset, Sample};
use crate::util::{stream_rng, KahanSum};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("channel flip parameter must satisfy 1/2 < p < 1, got {0}")]
    ChannelParameter(f64),
    #[error("margin exponent must be >= 1, got {0}")]
    MarginExponent(f64),
    #[error("edge range [{lo}, {hi}] leaves no room for a margin band of width {h}")]
    MarginBand { lo: f64, hi: f64, h: f64 },
    #[error("edge must map into [0,1], found range [{lo}, {hi}]")]
    EdgeRange { lo: f64, hi: f64 },
    #[error("noise specification invalid: {0}")]
    Noise(String),
    #[error("design density invalid: {0}")]
    Design(String),
    #[error("sample size must be >= 1")]
    EmptySample,
    #[error("edge sampler parameter invalid: {0}")]
    EdgeSampler(String),
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
}

/// Bounded zero-mean noise for the regression model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum NoiseSpec {
    None,
    /// +-magnitude with equal probability.
    TwoPoint { magnitude: f64 },
    /// Uniform on [-half_width, half_width].
    Uniform { half_width: f64 },
}

impl NoiseSpec {
    fn validate(&self) -> Result<(), ModelError> {
        let b = self.bound();
        if !b.is_finite() || b < 0.0 {
            return Err(ModelError::Noise(format!("bound {b} must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::TwoPoint { magnitude } => magnitude.abs(),
            NoiseSpec::Uniform { half_width } => half_width.abs(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::TwoPoint { magnitude } => magnitude * magnitude,
            NoiseSpec::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::TwoPoint { magnitude } => {
                if rng.random::<bool>() {
                    *magnitude
                } else {
                    -magnitude
                }
            }
            NoiseSpec::Uniform { half_width } => rng.random_range(-half_width..=*half_width),
        }
    }
}

/// Design distribution of X on `[0,1]^(d+1)`.
#[derive(Clone, Debug)]
pub enum DesignDensity {
    Uniform,
    /// Piecewise-constant density over the (d+1)-cube, t as the last axis.
    Dyadic { table: DyadicFunction, q0: f64 },
}

impl DesignDensity {
    pub fn dyadic(table: DyadicFunction, q0: f64) -> Result<Self, ModelError> {
        if q0 < 1.0 {
            return Err(ModelError::Design(format!("q0 = {q0} must be >= 1")));
        }
        for &v in table.values() {
            if v < 1.0 / q0 - 1e-12 || v > q0 + 1e-12 {
                return Err(ModelError::Design(format!(
                    "density value {v} outside [1/{q0}, {q0}]"
                )));
            }
        }
        let mass = table.integral();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(ModelError::Design(format!("density integrates to {mass}, not 1")));
        }
        Ok(DesignDensity::Dyadic { table, q0 })
    }

    pub fn q0(&self) -> f64 {
        match self {
            DesignDensity::Uniform => 1.0,
            DesignDensity::Dyadic { q0, .. } => *q0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DesignDensity::Uniform => 1.0,
            DesignDensity::Dyadic { table, .. } => table.eval(x),
        }
    }

    /// The density restricted to the t-column through `s_mid`, as cell
    /// values on its own t-grid.
    fn column(&self, s_mid: &[f64]) -> QColumn<'_> {
        match self {
            DesignDensity::Uniform => QColumn::Uniform,
            DesignDensity::Dyadic { table, .. } => {
                let side = 1usize << table.depth();
                let mut rank = 0usize;
                for &x in s_mid {
                    let c = ((x * side as f64).floor() as isize).clamp(0, side as isize - 1)
                        as usize;
                    rank = rank * side + c;
                }
                QColumn::Cells(&table.values()[rank * side..(rank + 1) * side])
            }
        }
    }
}

enum QColumn<'a> {
    Uniform,
    Cells(&'a [f64]),
}

impl QColumn<'_> {
    /// Integral of the column density against a cumulative primitive:
    /// `sum_k q_k (prim(u_{k+1}) - prim(u_k))` over the column's t-cells.
    fn integrate(&self, prim: impl Fn(f64) -> f64) -> f64 {
        match self {
            QColumn::Uniform => prim(1.0) - prim(0.0),
            QColumn::Cells(vals) => {
                let m = vals.len() as f64;
                let mut acc = 0.0;
                for (k, &q) in vals.iter().enumerate() {
                    let lo = k as f64 / m;
                    let hi = (k + 1) as f64 / m;
                    acc += q * (prim(hi) - prim(lo));
                }
                acc
            }
        }
    }

    /// Mass of the interval (lo, hi].
    fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        self.integrate(|t| t.clamp(lo, hi))
    }
}

/// The conditional-law family.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum ModelKind {
    /// Labels flipped with probability 1-p through a binary channel.
    Channel { p: f64 },
    /// Y = 1_G0(X) + xi with bounded zero-mean noise.
    Regression { noise: NoiseSpec },
    /// eta ramps across the edge over a band of width h with exponent
    /// kappa - 1 (kappa = 1 is a clean jump).
    Margin { kappa: f64, h: f64 },
}

impl ModelKind {
    pub fn label(&self) -> String {
        match self {
            ModelKind::Channel { p } => format!("channel(p={p})"),
            ModelKind::Regression { noise } => format!("regression(bound={})", noise.bound()),
            ModelKind::Margin { kappa, h } => format!("margin(kappa={kappa},h={h})"),
        }
    }
}

/// `U(w) = int_0^w min(1, (v/h)^(kappa-1)) dv` for w >= 0.
fn ramp_primitive(w: f64, kappa: f64, h: f64) -> f64 {
    debug_assert!(w >= 0.0);
    if w <= h {
        w.powf(kappa) / (kappa * h.powf(kappa - 1.0))
    } else {
        h / kappa + (w - h)
    }
}

/// A fully specified joint law: truth edge, conditional law, design.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    d: usize,
    kind: ModelKind,
    edge: EdgeFunction,
    truth: DyadicFunction,
    design: DesignDensity,
    kappa: f64,
    sigma0: f64,
}

impl ModelSpec {
    /// Binary-channel model: eta = p inside the fragment, 1-p outside.
    /// Declared margin: kappa = 1, sigma0 = 1/(2p-1).
    pub fn binary_channel(edge: EdgeFunction, p: f64) -> Result<Self, ModelError> {
        if !(p > 0.5 && p < 1.0) {
            return Err(ModelError::ChannelParameter(p));
        }
        let (lo, hi) = edge.range();
        if lo < 0.0 || hi > 1.0 {
            return Err(ModelError::EdgeRange { lo, hi });
        }
        let truth = edge.table().clone();
        Ok(Self {
            d: edge.d(),
            kind: ModelKind::Channel { p },
            edge,
            truth,
            design: DesignDensity::Uniform,
            kappa: 1.0,
            sigma0: 1.0 / (2.0 * p - 1.0),
        })
    }

    /// Regression model with bounded zero-mean noise; kappa = 1, sigma0 = 1.
    pub fn regression(edge: EdgeFunction, noise: NoiseSpec) -> Result<Self, ModelError> {
        noise.validate()?;
        let (lo, hi) = edge.range();
        if lo < 0.0 || hi > 1.0 {
            return Err(ModelError::EdgeRange { lo, hi });
        }
        let truth = edge.table().clone();
        Ok(Self {
            d: edge.d(),
            kind: ModelKind::Regression { noise },
            edge,
            truth,
            design: DesignDensity::Uniform,
            kappa: 1.0,
            sigma0: 1.0,
        })
    }

    /// Margin-profile model. The declared sigma0 makes both sides of the
    /// two-sided margin condition hold for deviations up to h: the lower
    /// bound needs kappa h^(kappa-1) (Jensen over the band), the upper bound
    /// needs its reciprocal, so the declared constant is the larger of the
    /// two.
    pub fn margin(edge: EdgeFunction, kappa: f64, h: f64) -> Result<Self, ModelError> {
        if !(kappa >= 1.0) {
            return Err(ModelError::MarginExponent(kappa));
        }
        let (lo, hi) = edge.range();
        if !(h > 0.0) || lo < h || hi > 1.0 - h {
            return Err(ModelError::MarginBand { lo, hi, h });
        }
        let base = kappa * h.powf(kappa - 1.0);
        let truth = edge.table().clone();
        Ok(Self {
            d: edge.d(),
            kind: ModelKind::Margin { kappa, h },
            edge,
            truth,
            design: DesignDensity::Uniform,
            kappa,
            sigma0: base.max(base.recip()),
        })
    }

    /// Replaces the uniform design. Margin models keep the uniform design
    /// (their declared constants are derived under it).
    pub fn with_design(mut self, design: DesignDensity) -> Result<Self, ModelError> {
        if let ModelKind::Margin { .. } = self.kind {
            if !matches!(design, DesignDensity::Uniform) {
                return Err(ModelError::Design(
                    "margin models support only the uniform design".into(),
                ));
            }
        }
        if let DesignDensity::Dyadic { table, .. } = &design {
            if table.d() != self.d + 1 {
                return Err(ModelError::Design(format!(
                    "density must live on [0,1]^{}, got dimension {}",
                    self.d + 1,
                    table.d()
                )));
            }
        }
        self.design = design;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn edge(&self) -> &EdgeFunction {
        &self.edge
    }

    /// The working truth edge (exact dyadic table).
    pub fn truth(&self) -> &DyadicFunction {
        &self.truth
    }

    pub fn design(&self) -> &DesignDensity {
        &self.design
    }

    pub fn q0(&self) -> f64 {
        self.design.q0()
    }

    /// Declared margin exponent.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Declared margin constant.
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Conditional mean of Y given X = (s, t).
    pub fn eta(&self, s: &[f64], t: f64) -> f64 {
        let b = self.truth.eval(s);
        match self.kind {
            ModelKind::Channel { p } => {
                if t <= b {
                    p
                } else {
                    1.0 - p
                }
            }
            ModelKind::Regression { .. } => {
                if t <= b {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Margin { kappa, h } => {
                let u = b - t;
                0.5 + 0.5 * u.signum() * (u.abs() / h).powf(kappa - 1.0).min(1.0)
            }
        }
    }

    /// Membership in the predicted-1 region of the conditional-mean rule
    /// (ties kept inside, matching the closed fragment).
    pub fn bayes_contains(&self, s: &[f64], t: f64) -> bool {
        self.eta(s, t) >= 0.5
    }

    // -- exact cumulative primitives in t, for a column with truth value b --

    fn cum_eta(&self, t: f64, b: f64) -> f64 {
        let bc = clip01(b);
        match self.kind {
            ModelKind::Channel { p } => (1.0 - p) * t + (2.0 * p - 1.0) * t.min(bc),
            ModelKind::Regression { .. } => t.min(bc),
            ModelKind::Margin { kappa, h } => {
                0.5 * t
                    + 0.5
                        * (ramp_primitive(bc, kappa, h)
                            - ramp_primitive((bc - t).abs(), kappa, h))
            }
        }
    }

    /// `int_0^t (2 eta - 1)`.
    fn cum_signed(&self, t: f64, b: f64) -> f64 {
        let bc = clip01(b);
        match self.kind {
            ModelKind::Channel { p } => (2.0 * p - 1.0) * (2.0 * t.min(bc) - t),
            ModelKind::Regression { .. } => 2.0 * t.min(bc) - t,
            ModelKind::Margin { kappa, h } => {
                ramp_primitive(bc, kappa, h) - ramp_primitive((bc - t).abs(), kappa, h)
            }
        }
    }

    /// `int_0^t |2 eta - 1|`.
    fn cum_abs(&self, t: f64, b: f64) -> f64 {
        let bc = clip01(b);
        match self.kind {
            ModelKind::Channel { p } => (2.0 * p - 1.0) * t,
            ModelKind::Regression { .. } => t,
            ModelKind::Margin { kappa, h } => {
                let u = bc - t;
                ramp_primitive(bc, kappa, h)
                    - u.signum() * ramp_primitive(u.abs(), kappa, h)
            }
        }
    }

    /// `int_0^t min(eta, 1 - eta)`.
    fn cum_min(&self, t: f64, b: f64) -> f64 {
        match self.kind {
            ModelKind::Channel { p } => (1.0 - p) * t,
            ModelKind::Regression { .. } => 0.0,
            ModelKind::Margin { .. } => 0.5 * t - 0.5 * self.cum_abs(t, b),
        }
    }

    fn noise_variance(&self) -> f64 {
        match self.kind {
            ModelKind::Regression { noise } => noise.variance(),
            _ => 0.0,
        }
    }

    /// Common s-grid depth with the design density folded in.
    fn aligned_depth(&self, depth: usize) -> usize {
        match &self.design {
            DesignDensity::Dyadic { table: q, .. } => depth.max(q.depth()),
            DesignDensity::Uniform => depth,
        }
    }

    /// Iterates the exact s-columns common to the classifier table and the
    /// truth, accumulating `f(acc, a, b, column)`; returns the Kahan total
    /// scaled by the s-cell volume.
    fn fold_columns(
        &self,
        table: &DyadicFunction,
        mut f: impl FnMut(&mut KahanSum, f64, f64, &QColumn<'_>),
    ) -> Result<f64, ModelError> {
        let depth = self.aligned_depth(table.depth().max(self.truth.depth()));
        let fhat = table.refine(depth)?;
        let truth = self.truth.refine(depth)?;
        let mut acc = KahanSum::default();
        for i in 0..fhat.values().len() {
            let a = clip01(fhat.values()[i]);
            let b = truth.values()[i];
            let mid = fhat.cell_midpoint(i);
            let col = self.design.column(&mid);
            f(&mut acc, a, b, &col);
        }
        Ok(acc.value() * 2f64.powi(-((depth * self.d) as i32)))
    }

    /// Exact prediction risk `E (Y - 1_G(X))^2` of the boundary fragment
    /// drawn below the (clipped) classifier table.
    pub fn population_risk_table(&self, table: &DyadicFunction) -> Result<f64, ModelError> {
        let var = self.noise_variance();
        match self.kind {
            ModelKind::Regression { .. } => self.fold_columns(table, |acc, a, b, col| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                acc.add(col.interval_mass(lo, hi) + var * col.interval_mass(0.0, 1.0));
            }),
            _ => self.fold_columns(table, |acc, a, b, col| {
                // cost(t) = eta(t) - (2 eta(t) - 1) 1{t <= a}
                acc.add(col.integrate(|t| self.cum_eta(t, b) - self.cum_signed(t.min(a), b)));
            }),
        }
    }

    /// Exact Bayes risk of the model.
    pub fn bayes_risk(&self) -> Result<f64, ModelError> {
        if let ModelKind::Regression { noise } = self.kind {
            return Ok(noise.variance());
        }
        let truth = self.truth.clone();
        self.fold_columns(&truth, |acc, _a, b, col| {
            acc.add(col.integrate(|t| self.cum_min(t, b)));
        })
    }

    /// Exact excess risk via the band integral of |2 eta - 1| between the
    /// classifier and the truth; an independent route from
    /// `population_risk_table - bayes_risk`.
    pub fn excess_risk_table(&self, table: &DyadicFunction) -> Result<f64, ModelError> {
        self.fold_columns(table, |acc, a, b, col| {
            let bc = clip01(b);
            let (lo, hi) = if a <= bc { (a, bc) } else { (bc, a) };
            match self.kind {
                ModelKind::Regression { .. } => acc.add(col.interval_mass(lo, hi)),
                _ => acc.add(col.integrate(|t| self.cum_abs(t.clamp(lo, hi), b))),
            }
        })
    }

    /// Design-measure mass of the symmetric difference of two fragments.
    pub fn q_symmetric_difference(
        &self,
        f: &DyadicFunction,
        g: &DyadicFunction,
    ) -> Result<f64, ModelError> {
        let depth = self.aligned_depth(f.depth().max(g.depth()));
        let fa = f.refine(depth)?;
        let ga = g.refine(depth)?;
        let mut acc = KahanSum::default();
        for i in 0..fa.values().len() {
            let a = clip01(fa.values()[i]);
            let b = clip01(ga.values()[i]);
            let mid = fa.cell_midpoint(i);
            let col = self.design.column(&mid);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            acc.add(col.interval_mass(lo, hi));
        }
        Ok(acc.value() * 2f64.powi(-((depth * self.d) as i32)))
    }

    /// Draws an i.i.d. dataset; fully determined by the seed.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptySample);
        }
        let mut rng = stream_rng(seed, 0);
        let q0 = self.design.q0();
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![0.0f64; self.d + 1];
            loop {
                for xi in x.iter_mut() {
                    *xi = rng.random::<f64>();
                }
                match &self.design {
                    DesignDensity::Uniform => break,
                    DesignDensity::Dyadic { table, .. } => {
                        let accept: f64 = rng.random();
                        if accept * q0 <= table.eval(&x) {
                            break;
                        }
                    }
                }
            }
            let (s, t) = (&x[..self.d], x[self.d]);
            let inside = t <= self.truth.eval(s);
            let y = match self.kind {
                ModelKind::Channel { p } => {
                    let flip = rng.random::<f64>() >= p;
                    if inside != flip {
                        1.0
                    } else {
                        0.0
                    }
                }
                ModelKind::Margin { .. } => {
                    let eta = self.eta(s, t);
                    if rng.random::<f64>() < eta {
                        1.0
                    } else {
                        0.0
                    }
                }
                ModelKind::Regression { noise } => {
                    let clean = if inside { 1.0 } else { 0.0 };
                    clean + noise.sample(&mut rng)
                }
            };
            samples.push(Sample::new(s.to_vec(), t, y));
        }
        Dataset::new(samples, self.kind.label(), seed).map_err(|e| ModelError::Design(e.to_string()))
    }
}

/// Complexity class declaration for rate studies: `rho = 0` tags exactly
/// representable (Vapnik-Chervonenkis) edges, otherwise `1/rho = gamma/d`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FunctionClassSpec {
    pub rho: f64,
    pub c0: f64,
    pub gamma: f64,
}

impl FunctionClassSpec {
    pub fn vc() -> Self {
        Self { rho: 0.0, c0: 0.0, gamma: f64::INFINITY }
    }

    pub fn smooth(d: usize, gamma: f64, c0: f64) -> Result<Self, ModelError> {
        if !(gamma > 0.0) || !(c0 > 0.0) {
            return Err(ModelError::EdgeSampler(format!(
                "gamma = {gamma} and c0 = {c0} must be positive"
            )));
        }
        Ok(Self { rho: d as f64 / gamma, c0, gamma })
    }
}

/// Random piecewise-constant edge on the level-`level` dyadic grid with
/// values in [0.2, 0.8]; exactly representable by any basis of at least
/// that many levels.
pub fn sample_dyadic_edge(d: usize, level: usize, seed: u64) -> Result<EdgeFunction, ModelError> {
    let mut table = DyadicFunction::zeros(d, level)?;
    let mut rng = stream_rng(seed, 1);
    for v in table.values_mut() {
        *v = rng.random_range(0.2..0.8);
    }
    Ok(EdgeFunction::from_table(table))
}

/// Random smooth edge: a few low-frequency cosine modes with amplitudes
/// decaying like freq^(-gamma), rescaled so values stay in [0.2, 0.8] and
/// every partial derivative is bounded by `c_hold`. The dyadic snapshot at
/// `snapshot_depth` is the working representation.
pub fn sample_holder_edge(
    d: usize,
    gamma: f64,
    c_hold: f64,
    snapshot_depth: usize,
    seed: u64,
) -> Result<EdgeFunction, ModelError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ModelError::EdgeSampler(format!(
            "gamma = {gamma} outside (0, 1]: piecewise-constant approximation cannot exploit higher regularity"
        )));
    }
    if !(c_hold > 0.0) {
        return Err(ModelError::EdgeSampler(format!("c_hold = {c_hold} must be positive")));
    }
    let mut rng = stream_rng(seed, 2);
    let mode_count = 4;
    let mut modes = Vec::with_capacity(mode_count);
    for _ in 0..mode_count {
        let mut freqs = vec![0u32; d];
        loop {
            for f in freqs.iter_mut() {
                *f = rng.random_range(0..4);
            }
            if freqs.iter().any(|&f| f > 0) {
                break;
            }
        }
        let max_freq = *freqs.iter().max().unwrap() as f64;
        let amplitude = rng.random_range(-1.0..1.0) * max_freq.max(1.0).powf(-gamma);
        let phases = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        modes.push(crate::dyadic::CosineMode { amplitude, frequencies: freqs, phases });
    }
    let sup: f64 = modes.iter().map(|m| m.amplitude.abs()).sum();
    let deriv = (0..d)
        .map(|i| {
            modes
                .iter()
                .map(|m| m.amplitude.abs() * std::f64::consts::PI * m.frequencies[i] as f64)
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    let mut scale = 0.3 / sup.max(1e-12);
    if deriv > 0.0 {
        scale = scale.min(c_hold / deriv);
    }
    for m in modes.iter_mut() {
        m.amplitude *= scale;
    }
    Ok(EdgeFunction::smooth(d, 0.5, modes, snapshot_depth)?)
}
