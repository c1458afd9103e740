//! Empirical and population risks of boundary-fragment classifiers.
//!
//! The classifier attached to coefficients `alpha` predicts 1 on
//! `{(s,t) : f_alpha(s) >= t}`. Empirical risk is the mean squared label
//! error, which for binary labels is the misclassified fraction. Population
//! quantities are computed exactly through the model's column integrals
//! whenever the classifier is dyadic (always true for synthesized tables),
//! with a seeded Monte Carlo fallback that reports its standard error.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem, CoefficientVector};
use crate::dyadic::{clip01, format_float, DyadicError, DyadicFunction};
use crate::model::{ModelError, ModelSpec};
use crate::util::KahanSum;

#[derive(Error, Debug)]
pub enum RiskError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample has dimension {got}, expected {expected}")]
    SampleDimension { expected: usize, got: usize },
    #[error("sample coordinate {0} outside the unit cube")]
    CoordinateRange(f64),
    #[error("label {0} is not finite")]
    LabelNotFinite(f64),
    #[error("malformed dataset CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observation (S, T, Y).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sample {
    s: Vec<f64>,
    t: f64,
    y: f64,
}

impl Sample {
    pub fn new(s: Vec<f64>, t: f64, y: f64) -> Self {
        debug_assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)));
        debug_assert!((0.0..=1.0).contains(&t));
        debug_assert!(y.is_finite());
        Self { s, t, y }
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    fn validate(&self, d: usize) -> Result<(), RiskError> {
        if self.s.len() != d {
            return Err(RiskError::SampleDimension { expected: d, got: self.s.len() });
        }
        for &x in self.s.iter().chain(std::iter::once(&self.t)) {
            if !(0.0..=1.0).contains(&x) {
                return Err(RiskError::CoordinateRange(x));
            }
        }
        if !self.y.is_finite() {
            return Err(RiskError::LabelNotFinite(self.y));
        }
        Ok(())
    }
}

/// An ordered list of samples with its generation metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    model_id: String,
    seed: u64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, model_id: String, seed: u64) -> Result<Self, RiskError> {
        if let Some(first) = samples.first() {
            let d = first.s.len();
            for s in &samples {
                s.validate(d)?;
            }
        }
        Ok(Self { samples, model_id, seed })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d(&self) -> Option<usize> {
        self.samples.first().map(|s| s.s.len())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// CSV with header `s_1,...,s_d,t,y`, one row per sample, 17 significant
    /// digits. Optional comment lines are prefixed with `# `.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<(), RiskError> {
        let d = self.d().ok_or(RiskError::EmptyDataset)?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let header: Vec<String> =
            (1..=d).map(|i| format!("s_{i}")).chain(["t".into(), "y".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.s.iter().map(|&v| format_float(v)).collect();
            row.push(format_float(s.t));
            row.push(format_float(s.y));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, model_id: String, seed: u64) -> Result<Self, RiskError> {
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
                None => return Err(RiskError::Parse("missing header".into())),
            }
        };
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[cols.len() - 2] != "t" || cols[cols.len() - 1] != "y" {
            return Err(RiskError::Parse(format!("unexpected header: {header}")));
        }
        let d = cols.len() - 2;
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> = t.split(',').map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| RiskError::Parse(format!("{e}: {t}")))?;
            if vals.len() != d + 2 {
                return Err(RiskError::Parse(format!("row has {} fields, want {}", vals.len(), d + 2)));
            }
            samples.push(Sample::new(vals[..d].to_vec(), vals[d], vals[d + 1]));
        }
        Self::new(samples, model_id, seed)
    }
}

/// Mean squared label error of the classifier `f_alpha(S) >= T`; the
/// misclassified fraction for binary labels.
pub fn empirical_risk(
    data: &Dataset,
    basis: &BasisSystem,
    alpha: &CoefficientVector,
) -> Result<f64, RiskError> {
    if data.is_empty() {
        return Err(RiskError::EmptyDataset);
    }
    let mut acc = KahanSum::default();
    for sample in data.samples() {
        let predict = if basis.synthesize_at(alpha, sample.s()) >= sample.t() { 1.0 } else { 0.0 };
        let e = sample.y() - predict;
        acc.add(e * e);
    }
    Ok(acc.value() / data.len() as f64)
}

/// Exact prediction risk of `f_alpha` under the model.
pub fn population_risk(
    model: &ModelSpec,
    basis: &BasisSystem,
    alpha: &CoefficientVector,
) -> Result<f64, RiskError> {
    let table = basis.synthesize_table(alpha)?;
    Ok(model.population_risk_table(&table)?)
}

/// Exact excess risk `R(G_alpha) - R(G*)`, computed by the band integral.
pub fn excess_risk(
    model: &ModelSpec,
    basis: &BasisSystem,
    alpha: &CoefficientVector,
) -> Result<f64, RiskError> {
    let table = basis.synthesize_table(alpha)?;
    Ok(model.excess_risk_table(&table)?)
}

/// Monte Carlo estimate of the prediction risk with its standard error;
/// the fallback when no exact path applies.
pub fn population_risk_mc(
    model: &ModelSpec,
    basis: &BasisSystem,
    alpha: &CoefficientVector,
    budget: usize,
    seed: u64,
) -> Result<(f64, f64), RiskError> {
    let data = model.sample_dataset(budget.max(2), seed)?;
    let mut sum = KahanSum::default();
    let mut sumsq = KahanSum::default();
    for sample in data.samples() {
        let predict = if basis.synthesize_at(alpha, sample.s()) >= sample.t() { 1.0 } else { 0.0 };
        let c = (sample.y() - predict).powi(2);
        sum.add(c);
        sumsq.add(c * c);
    }
    let n = data.len() as f64;
    let mean = sum.value() / n;
    let var = (sumsq.value() / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Lebesgue measure of the symmetric difference of the fragments below two
/// edges: the L1 distance of their [0,1]-clipped tables.
pub fn sym_diff_measure(f: &DyadicFunction, g: &DyadicFunction) -> Result<f64, RiskError> {
    let (a, b) = f.align(g)?;
    let mut acc = KahanSum::default();
    for (&x, &y) in a.values().iter().zip(b.values()) {
        acc.add((clip01(x) - clip01(y)).abs());
    }
    Ok(acc.value() * a.cell_volume())
}

/// Unclipped L1 norm of an edge table.
pub fn l1_norm(f: &DyadicFunction) -> f64 {
    f.l1_norm()
}

/// Design-measure mass of the symmetric difference; equals
/// `sym_diff_measure` under the uniform design.
pub fn q_measure_sym_diff(
    model: &ModelSpec,
    f: &DyadicFunction,
    g: &DyadicFunction,
) -> Result<f64, RiskError> {
    Ok(model.q_symmetric_difference(f, g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::EdgeFunction;

    fn three_point_data() -> Dataset {
        Dataset::new(
            vec![
                Sample::new(vec![0.2], 0.3, 1.0),
                Sample::new(vec![0.6], 0.7, 0.0),
                Sample::new(vec![0.9], 0.1, 1.0),
            ],
            "toy".into(),
            0,
        )
        .unwrap()
    }

    fn constant_alpha(basis: &BasisSystem, c: f64) -> CoefficientVector {
        let mut a = CoefficientVector::zeros(basis);
        a.set(1, 0, c);
        a
    }

    #[test]
    fn empirical_risk_three_point_examples() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let half = constant_alpha(&basis, 0.5);
        let data = three_point_data();
        assert_eq!(empirical_risk(&data, &basis, &half).unwrap(), 0.0);

        let flipped = Dataset::new(
            vec![
                Sample::new(vec![0.2], 0.3, 1.0),
                Sample::new(vec![0.6], 0.7, 0.0),
                Sample::new(vec![0.9], 0.1, 0.0),
            ],
            "toy".into(),
            0,
        )
        .unwrap();
        assert!((empirical_risk(&flipped, &basis, &half).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        // f = -1 predicts 0 everywhere; all labels 1.
        let neg = constant_alpha(&basis, -1.0);
        let ones = Dataset::new(
            (0..5).map(|i| Sample::new(vec![i as f64 / 5.0], 0.5, 1.0)).collect(),
            "toy".into(),
            0,
        )
        .unwrap();
        assert_eq!(empirical_risk(&ones, &basis, &neg).unwrap(), 1.0);

        let empty = Dataset::new(vec![], "toy".into(), 0).unwrap();
        assert!(matches!(empirical_risk(&empty, &basis, &half), Err(RiskError::EmptyDataset)));
    }

    #[test]
    fn population_and_excess_through_the_basis() {
        let basis = BasisSystem::haar(1, 2).unwrap();
        let model = ModelSpec::binary_channel(EdgeFunction::constant(1, 0.5), 0.75).unwrap();
        let bayes = constant_alpha(&basis, 0.5);
        assert!((population_risk(&model, &basis, &bayes).unwrap() - 0.25).abs() < 1e-14);
        assert!(excess_risk(&model, &basis, &bayes).unwrap().abs() < 1e-14);
        let off = constant_alpha(&basis, 0.6);
        assert!((excess_risk(&model, &basis, &off).unwrap() - 0.05).abs() < 1e-14);
    }

    #[test]
    fn sym_diff_measure_examples() {
        let f = DyadicFunction::constant(1, 0.5);
        let g = DyadicFunction::constant(1, 0.6);
        assert!((sym_diff_measure(&f, &g).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(sym_diff_measure(&f, &f).unwrap(), 0.0);
        // Values above 1 clip: fragments above t = 1 are empty.
        let tall = DyadicFunction::constant(1, 1.2);
        assert!((sym_diff_measure(&tall, &f).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l1_norm_examples() {
        assert_eq!(l1_norm(&DyadicFunction::constant(1, 0.0)), 0.0);
        assert!((l1_norm(&DyadicFunction::constant(1, -0.3)) - 0.3).abs() < 1e-15);
        // The mother Haar wavelet has |psi| = 1 on the unit interval.
        let basis = BasisSystem::haar(1, 1).unwrap();
        let mut a = CoefficientVector::zeros(&basis);
        a.set(1, 1, 1.0);
        let table = basis.synthesize_table(&a).unwrap();
        assert!((l1_norm(&table) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn q_measure_reduces_to_lebesgue_under_uniform() {
        let model = ModelSpec::binary_channel(EdgeFunction::constant(1, 0.5), 0.75).unwrap();
        let f = DyadicFunction::new(1, 1, vec![0.4, 0.7]).unwrap();
        let g = DyadicFunction::constant(1, 0.5);
        let qm = q_measure_sym_diff(&model, &f, &g).unwrap();
        let lm = sym_diff_measure(&f, &g).unwrap();
        assert!((qm - lm).abs() < 1e-15);
        assert_eq!(q_measure_sym_diff(&model, &f, &f).unwrap(), 0.0);
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let data = three_point_data();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, &["seed=0".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().any(|l| l == "s_1,t,y"));
        let back = Dataset::read_csv(std::io::BufReader::new(buf.as_slice()), "toy".into(), 0)
            .unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.samples().iter().zip(back.samples()) {
            assert_eq!(a.s(), b.s());
            assert_eq!(a.t(), b.t());
            assert_eq!(a.y(), b.y());
        }
    }
}
