//! The block-wise square-root nonsparsity measure and derived quantities.
//!
//! For level-blocked coefficients the nonsparsity measure is
//!
//! ```text
//! I(alpha) = ( sum_l 2^(dl/4) * sqrt( sum_{j in block l} |alpha_{j,l}| ) )^2
//! ```
//!
//! and the penalty is `lambda * sqrt(I(alpha))`. Block absolute sums are
//! accumulated in compensated arithmetic before the square root; the outer
//! square would otherwise amplify rounding across levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisSystem, CoefficientVector};
use crate::util::KahanSum;

#[derive(Error, Debug)]
pub enum PenaltyError {
    #[error("sample size must be >= 2, got {0}")]
    SampleSizeTooSmall(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Regularization configuration: the effective weight `lambda` plus the
/// multiplier `c_lambda` it was derived with (reported for replay).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub c_lambda: f64,
}

impl PenaltyConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        assert!(lambda >= 0.0 && lambda.is_finite(), "lambda must be finite and >= 0");
        Self { lambda, c_lambda: f64::NAN }
    }

    /// The sample-size rule `c_lambda * sqrt(q0 * c_psi^2 * ln^4(n) / (n d))`.
    pub fn from_sample_size(
        n: usize,
        basis: &BasisSystem,
        q0: f64,
        c_lambda: f64,
    ) -> Result<Self, PenaltyError> {
        Ok(Self { lambda: lambda_n(n, basis, q0, c_lambda)?, c_lambda })
    }
}

/// `sqrt(I(alpha))`: the sum of weighted square roots of block sums.
pub fn sqrt_nonsparsity(alpha: &CoefficientVector) -> f64 {
    let d = alpha.d() as f64;
    let mut total = KahanSum::default();
    for l in 1..=alpha.level_count() {
        let mut block = KahanSum::default();
        for &v in alpha.level(l) {
            block.add(v.abs());
        }
        let b = block.value();
        if b > 0.0 {
            total.add(2f64.powf(d * l as f64 * 0.25) * b.sqrt());
        }
    }
    total.value()
}

/// The nonsparsity measure `I(alpha)`.
pub fn nonsparsity(alpha: &CoefficientVector) -> f64 {
    let s = sqrt_nonsparsity(alpha);
    s * s
}

/// `lambda * sqrt(I(alpha))`.
pub fn penalty(alpha: &CoefficientVector, cfg: &PenaltyConfig) -> f64 {
    cfg.lambda * sqrt_nonsparsity(alpha)
}

/// Highest level carrying a nonzero coefficient; 0 for the zero vector.
pub fn max_active_level(alpha: &CoefficientVector) -> usize {
    (1..=alpha.level_count())
        .rev()
        .find(|&l| alpha.level(l).iter().any(|&v| v != 0.0))
        .unwrap_or(0)
}

/// Cumulative block size up to the highest active level (the effective
/// dimension of the truncated expansion); 0 for the zero vector.
pub fn active_size(basis: &BasisSystem, alpha: &CoefficientVector) -> usize {
    basis.cumulative_size(max_active_level(alpha))
}

/// Regularization weight as a function of the sample size.
pub fn lambda_n(
    n: usize,
    basis: &BasisSystem,
    q0: f64,
    c_lambda: f64,
) -> Result<f64, PenaltyError> {
    if n < 2 {
        return Err(PenaltyError::SampleSizeTooSmall(n));
    }
    if !(q0 >= 1.0) || !(c_lambda >= 0.0) {
        return Err(PenaltyError::InvalidParameter(format!(
            "q0 = {q0} (need >= 1), c_lambda = {c_lambda} (need >= 0)"
        )));
    }
    let ln = (n as f64).ln();
    let c = basis.c_psi();
    Ok(c_lambda * (q0 * c * c * ln.powi(4) / (n as f64 * basis.d() as f64)).sqrt())
}

/// Splits `sqrt(I)` at a level: returns `(I1, I2)` with the level sums taken
/// over blocks `1..=m_star` and `m_star+1..=L` respectively, so that
/// `sqrt(I(alpha)) = sqrt(I1) + sqrt(I2)` exactly.
pub fn split_nonsparsity(alpha: &CoefficientVector, m_star: usize) -> (f64, f64) {
    assert!(m_star <= alpha.level_count(), "split level out of range");
    let d = alpha.d() as f64;
    let mut low = KahanSum::default();
    let mut high = KahanSum::default();
    for l in 1..=alpha.level_count() {
        let mut block = KahanSum::default();
        for &v in alpha.level(l) {
            block.add(v.abs());
        }
        let b = block.value();
        if b > 0.0 {
            let term = 2f64.powf(d * l as f64 * 0.25) * b.sqrt();
            if l <= m_star {
                low.add(term);
            } else {
                high.add(term);
            }
        }
    }
    (low.value().powi(2), high.value().powi(2))
}

/// Margin and design constants entering the variance term.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub kappa: f64,
    pub sigma0: f64,
    pub q0: f64,
    pub c_kappa: f64,
    pub c_d: f64,
}

impl TheoryConstants {
    pub fn new(d: usize, kappa: f64, sigma0: f64, q0: f64) -> Result<Self, PenaltyError> {
        if !(kappa >= 1.0) {
            return Err(PenaltyError::InvalidParameter(format!("kappa = {kappa} (need >= 1)")));
        }
        if !(sigma0 > 0.0) {
            return Err(PenaltyError::InvalidParameter(format!("sigma0 = {sigma0} (need > 0)")));
        }
        if !(q0 >= 1.0) {
            return Err(PenaltyError::InvalidParameter(format!("q0 = {q0} (need >= 1)")));
        }
        Ok(Self {
            kappa,
            sigma0,
            q0,
            c_kappa: margin_tradeoff_constant(kappa),
            c_d: dimension_constant(d),
        })
    }

    /// The variance proxy `4 c_kappa (4 c_d q0 c_psi^2 sigma0^(1/kappa)
    /// lambda^2 N)^(kappa/(2 kappa - 1))`; zero when `N = 0`.
    pub fn variance_term(&self, n_active: usize, lambda: f64, c_psi: f64) -> f64 {
        if n_active == 0 {
            return 0.0;
        }
        let inner = 4.0
            * self.c_d
            * self.q0
            * c_psi
            * c_psi
            * self.sigma0.powf(1.0 / self.kappa)
            * lambda
            * lambda
            * n_active as f64;
        4.0 * self.c_kappa * inner.powf(self.kappa / (2.0 * self.kappa - 1.0))
    }
}

/// `(2 kappa - 1)/(2 kappa) * kappa^(-1/(2 kappa - 1))`, always in (0, 1].
pub fn margin_tradeoff_constant(kappa: f64) -> f64 {
    (2.0 * kappa - 1.0) / (2.0 * kappa) * kappa.powf(-1.0 / (2.0 * kappa - 1.0))
}

/// `2 (2^d - 1) / (2^(d/2) - 1)^2`.
pub fn dimension_constant(d: usize) -> f64 {
    let root = 2f64.powf(d as f64 * 0.5) - 1.0;
    2.0 * (2f64.powi(d as i32) - 1.0) / (root * root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(basis: &BasisSystem) -> CoefficientVector {
        CoefficientVector::zeros(basis)
    }

    #[test]
    fn nonsparsity_examples() {
        let b = BasisSystem::haar(1, 2).unwrap();
        let zero = coeffs(&b);
        assert_eq!(nonsparsity(&zero), 0.0);

        // Single block at level 2 with absolute sum 0.25: I = 2^1 * 0.25.
        let mut a = coeffs(&b);
        a.set(2, 0, 0.15);
        a.set(2, 1, -0.10);
        assert!((nonsparsity(&a) - 0.5).abs() < 1e-15);

        // Level sums 1 and 1: I = (2^(1/4) + 2^(1/2))^2.
        let mut a = coeffs(&b);
        a.set(1, 0, 0.4);
        a.set(1, 1, -0.6);
        a.set(2, 0, 1.0);
        let expect = (2f64.powf(0.25) + 2f64.powf(0.5)).powi(2);
        assert!((nonsparsity(&a) - expect).abs() < 1e-12);
        assert!((expect - 6.77780).abs() < 1e-4);
    }

    #[test]
    fn penalty_examples() {
        let b = BasisSystem::haar(1, 2).unwrap();
        let cfg = PenaltyConfig::with_lambda(0.1);
        assert_eq!(penalty(&coeffs(&b), &cfg), 0.0);

        let mut a = coeffs(&b);
        a.set(2, 0, 0.25);
        assert!((penalty(&a, &cfg) - 0.1 * 0.5f64.sqrt()).abs() < 1e-15);

        // Scaling the vector by 4 doubles the penalty.
        let p1 = penalty(&a, &cfg);
        let p4 = penalty(&a.scale(4.0), &cfg);
        assert!((p4 - 2.0 * p1).abs() < 1e-15);
    }

    #[test]
    fn truncation_levels_and_sizes() {
        let b = BasisSystem::haar(1, 3).unwrap();
        let zero = coeffs(&b);
        assert_eq!(max_active_level(&zero), 0);
        assert_eq!(active_size(&b, &zero), 0);

        let mut a = coeffs(&b);
        a.set(2, 1, 0.3);
        assert_eq!(max_active_level(&a), 2);
        assert_eq!(active_size(&b, &a), 4); // |I_1| + |I_2| = 2 + 2

        a.set(3, 3, -0.1);
        assert_eq!(max_active_level(&a), 3);
        assert_eq!(active_size(&b, &a), b.total());
    }

    #[test]
    fn lambda_rule() {
        let b = BasisSystem::haar(1, 3).unwrap();
        assert!((b.c_psi() - 2.0).abs() < 1e-15);
        let l = lambda_n(1024, &b, 1.0, 1.0).unwrap();
        assert!((l - 3.0029).abs() < 1e-3);
        assert_eq!(lambda_n(1024, &b, 1.0, 0.0).unwrap(), 0.0);
        assert!(lambda_n(1, &b, 1.0, 1.0).is_err());

        // Quadrupling n roughly halves lambda, up to the slow log factor.
        let l10 = lambda_n(1 << 10, &b, 1.0, 1.0).unwrap();
        let l12 = lambda_n(1 << 12, &b, 1.0, 1.0).unwrap();
        let ratio = l12 / l10;
        assert!(ratio > 0.5 && ratio < 0.75, "ratio {ratio}");
    }

    #[test]
    fn variance_term_examples() {
        let k = TheoryConstants::new(1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(k.variance_term(0, 0.3, 2.0), 0.0);
        assert!((k.c_kappa - 0.5).abs() < 1e-15);
        assert!((k.c_d - 11.6569).abs() < 1e-4);
        // kappa = 1 collapses to 8 c_d q0 c_psi^2 sigma0 lambda^2 N.
        let v = k.variance_term(3, 0.2, 2.0);
        let expect = 8.0 * k.c_d * 1.0 * 4.0 * 1.0 * 0.04 * 3.0;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn split_matches_total() {
        let b = BasisSystem::haar(1, 2).unwrap();
        let mut a = coeffs(&b);
        a.set(1, 0, 0.4);
        a.set(1, 1, -0.6);
        a.set(2, 0, 1.0);
        let (i1, i2) = split_nonsparsity(&a, 1);
        assert!((i1.sqrt() - 2f64.powf(0.25)).abs() < 1e-12);
        assert!((i2.sqrt() - 2f64.powf(0.5)).abs() < 1e-12);
        assert!((i1.sqrt() + i2.sqrt() - sqrt_nonsparsity(&a)).abs() < 1e-12);

        let (full, none) = split_nonsparsity(&a, 2);
        assert_eq!(none, 0.0);
        assert!((full - nonsparsity(&a)).abs() < 1e-12);
        let (none, full) = split_nonsparsity(&a, 0);
        assert_eq!(none, 0.0);
        assert!((full - nonsparsity(&a)).abs() < 1e-12);
    }

    #[test]
    fn theory_constants_validate() {
        assert!(TheoryConstants::new(1, 0.5, 1.0, 1.0).is_err());
        assert!(TheoryConstants::new(1, 1.0, 0.0, 1.0).is_err());
        assert!(TheoryConstants::new(1, 1.0, 1.0, 0.5).is_err());
        for kappa in [1.0, 1.5, 2.0, 5.0, 20.0] {
            let c = margin_tradeoff_constant(kappa);
            assert!(c > 0.0 && c <= 1.0);
        }
    }
}
