//! Deterministic and property-based invariants: exact identities of the
//! basis, the nonsparsity measure, the risk functionals, the covering net
//! and the margin conditions.

use proptest::prelude::*;

use sqrtpen::basis::{BasisSystem, CoefficientVector};
use sqrtpen::dyadic::{DyadicFunction, EdgeFunction};
use sqrtpen::model::{sample_dyadic_edge, DesignDensity, ModelSpec, NoiseSpec};
use sqrtpen::penalty::{nonsparsity, sqrt_nonsparsity};
use sqrtpen::risk::{q_measure_sym_diff, sym_diff_measure};
use sqrtpen::theory::{
    build_bracket_net, check_l1_bound, check_margin_condition, check_net_cardinality,
    check_net_cover, check_nonsparsity_bound, check_power_tradeoff, log_cardinality_bound,
    probe_empirical_process, round_to_net,
};
use sqrtpen::util::stream_rng;

use rand::Rng;

fn coeff_vector(basis: &BasisSystem, values: &[f64]) -> CoefficientVector {
    let mut alpha = CoefficientVector::zeros(basis);
    let mut it = values.iter();
    for l in 1..=basis.levels() {
        for j in 0..basis.block_size(l) {
            alpha.set(l, j, *it.next().expect("enough values"));
        }
    }
    alpha
}

fn random_alpha(basis: &BasisSystem, rng: &mut rand_chacha::ChaCha8Rng, scale: f64) -> CoefficientVector {
    let mut alpha = CoefficientVector::zeros(basis);
    for l in 1..=basis.levels() {
        for j in 0..basis.block_size(l) {
            if rng.random::<f64>() < 0.7 {
                alpha.set(l, j, scale * rng.random_range(-1.0..1.0));
            }
        }
    }
    alpha
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonsparsity_is_absolutely_homogeneous(
        values in prop::collection::vec(-5.0f64..5.0, 8),
        c in -4.0f64..4.0,
    ) {
        let basis = BasisSystem::haar(1, 3).unwrap();
        let alpha = coeff_vector(&basis, &values);
        let lhs = nonsparsity(&alpha.scale(c));
        let rhs = c.abs() * nonsparsity(&alpha);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn sqrt_nonsparsity_is_subadditive(
        a in prop::collection::vec(-5.0f64..5.0, 8),
        b in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let basis = BasisSystem::haar(1, 3).unwrap();
        let x = coeff_vector(&basis, &a);
        let y = coeff_vector(&basis, &b);
        let lhs = sqrt_nonsparsity(&x.add(&y));
        let rhs = sqrt_nonsparsity(&x) + sqrt_nonsparsity(&y);
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn zeroing_a_coefficient_never_increases_nonsparsity(
        values in prop::collection::vec(-5.0f64..5.0, 8),
        pick in 0usize..8,
    ) {
        let basis = BasisSystem::haar(1, 3).unwrap();
        let alpha = coeff_vector(&basis, &values);
        let mut zeroed = alpha.clone();
        let (l, j) = if pick < 2 { (1, pick) } else if pick < 4 { (2, pick - 2) } else { (3, pick - 4) };
        zeroed.set(l, j, 0.0);
        prop_assert!(nonsparsity(&zeroed) <= nonsparsity(&alpha) + 1e-12);
    }

    #[test]
    fn parseval_on_the_synthesis_grid(values in prop::collection::vec(-3.0f64..3.0, 16)) {
        let basis = BasisSystem::haar(2, 2).unwrap();
        let alpha = coeff_vector(&basis, &values);
        let table = basis.synthesize_table(&alpha).unwrap();
        let sum_sq: f64 = values.iter().map(|v| v * v).sum();
        prop_assert!((table.l2_norm_sq() - sum_sq).abs() <= 1e-10 * sum_sq.max(1.0));
    }

    #[test]
    fn analyze_synthesize_is_identity_on_coefficients(
        values in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let basis = BasisSystem::haar(1, 4).unwrap();
        let alpha = coeff_vector(&basis, &values);
        let table = basis.synthesize_table(&alpha).unwrap();
        let back = basis.analyze(&table).unwrap();
        for ((l, j), v) in back.iter() {
            prop_assert!((v - alpha.get(l, j)).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_difference_triangle_inequality(
        a in prop::collection::vec(0.0f64..1.0, 4),
        b in prop::collection::vec(0.0f64..1.0, 4),
        c in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let fa = DyadicFunction::new(1, 2, a).unwrap();
        let fb = DyadicFunction::new(1, 2, b).unwrap();
        let fc = DyadicFunction::new(1, 2, c).unwrap();
        let ab = sym_diff_measure(&fa, &fb).unwrap();
        let bc = sym_diff_measure(&fb, &fc).unwrap();
        let ac = sym_diff_measure(&fa, &fc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}

#[test]
fn q_measure_is_sandwiched_by_lebesgue() {
    // Density 1.6 / 0.4 split along the first s-axis, q0 = 2.5.
    let q0 = 2.5;
    let table = DyadicFunction::new(2, 1, vec![1.6, 1.6, 0.4, 0.4]).unwrap();
    let design = DesignDensity::dyadic(table, q0).unwrap();
    let model = ModelSpec::binary_channel(EdgeFunction::constant(1, 0.5), 0.75)
        .unwrap()
        .with_design(design)
        .unwrap();
    let mut rng = stream_rng(41, 0);
    for _ in 0..100 {
        let mut f = DyadicFunction::zeros(1, 3).unwrap();
        let mut g = DyadicFunction::zeros(1, 3).unwrap();
        for v in f.values_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        for v in g.values_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let mu = sym_diff_measure(&f, &g).unwrap();
        let qm = q_measure_sym_diff(&model, &f, &g).unwrap();
        assert!(qm >= mu / q0 - 1e-12, "lower sandwich failed: {qm} vs {mu}");
        assert!(qm <= q0 * mu + 1e-12, "upper sandwich failed: {qm} vs {mu}");
    }
}

#[test]
fn inequality_suites_pass_exactly() {
    for (d, levels) in [(1usize, 4usize), (2, 3)] {
        let basis = BasisSystem::haar(d, levels).unwrap();
        let r1 = check_l1_bound(&basis, 1000, 101);
        assert!(r1.pass, "{r1:?}");
        assert!(r1.worst_ratio < 1.0, "the L1 bound should be strict, got {}", r1.worst_ratio);
        let r2 = check_nonsparsity_bound(&basis, 1000, 202);
        assert!(r2.pass, "{r2:?}");
    }
    let r5 = check_power_tradeoff(1000, 303);
    assert!(r5.pass, "{r5:?}");
    // The first trial is the equality instance; the worst ratio must touch 1.
    assert!((r5.worst_ratio - 1.0).abs() < 1e-12);
}

#[test]
fn bracket_net_construction_and_counting() {
    let basis = BasisSystem::haar(1, 2).unwrap();
    let net = build_bracket_net(&basis, 1.0, 0.5, 4, 1_000_000).unwrap();
    // 4 coefficients, at most 2 nonzero, 4 nonzero grid values each:
    // 1 + C(4,1)*4 + C(4,2)*16 = 113 distinct elements.
    assert_eq!(net.cardinality(), 113);
    let (ok, ln_card, bound) = check_net_cardinality(&net);
    assert!(ok, "ln {ln_card} vs bound {bound}");
    assert!((bound - 2.0 * (5f64.ln() + 5f64.ln())).abs() < 1e-12);

    let cover = check_net_cover(&basis, &net, 200, 7).unwrap();
    assert!(cover.pass, "{cover:?}");
    assert!(cover.max_nonzeros_seen <= cover.nonzero_budget);

    // Degenerate body: the net collapses to the zero vector.
    let tiny = build_bracket_net(&basis, 0.0, 0.5, 4, 1_000).unwrap();
    assert_eq!(tiny.cardinality(), 1);
    assert!(tiny.elements[0].is_zero());

    // Negative control: halving the grid step without adjusting the bound's
    // delta must overflow the counting bound.
    let dense = build_bracket_net(&basis, 1.0, 0.25, 4, 10_000_000).unwrap();
    let ln_dense = (dense.cardinality() as f64).ln();
    let stale_bound = log_cardinality_bound(1.0, 0.5, 4);
    assert!(
        ln_dense > stale_bound,
        "densified net should violate the stale bound: {ln_dense} vs {stale_bound}"
    );

    // Budget guard trips on unreasonable enumerations.
    assert!(build_bracket_net(&basis, 1.0, 0.01, 4, 1_000).is_err());
}

#[test]
fn net_rounding_stays_in_net_shape() {
    let basis = BasisSystem::haar(1, 2).unwrap();
    let net = build_bracket_net(&basis, 1.0, 0.5, 4, 1_000_000).unwrap();
    let mut rng = stream_rng(99, 0);
    for _ in 0..100 {
        let raw = random_alpha(&basis, &mut rng, 1.0);
        let i = nonsparsity(&raw);
        let alpha = if i > 0.0 { raw.scale(rng.random_range(0.0..1.0) / i) } else { raw };
        let rounded = round_to_net(&basis, &net, &alpha);
        assert!(
            net.elements.iter().any(|e| *e == rounded),
            "rounded point must be a net element: {rounded:?}"
        );
    }
}

#[test]
fn channel_margin_identity_is_exact_both_ways() {
    // excess = (2p - 1) * mu(sym diff) under the uniform design, both sides
    // computed by independent exact routes.
    let p = 0.75;
    let edge = sample_dyadic_edge(1, 2, 5).unwrap();
    let model = ModelSpec::binary_channel(edge, p).unwrap();
    let basis = BasisSystem::haar(1, 3).unwrap();
    let mut rng = stream_rng(1234, 0);
    let proj = basis.analyze(&model.truth().refine(3).unwrap()).unwrap();
    for trial in 0..200 {
        let alpha = if trial % 3 == 0 {
            proj.add(&random_alpha(&basis, &mut rng, 0.2))
        } else {
            random_alpha(&basis, &mut rng, 1.5)
        };
        let table = basis.synthesize_table(&alpha).unwrap();
        let excess = model.excess_risk_table(&table).unwrap();
        let via_risk = model.population_risk_table(&table).unwrap() - model.bayes_risk().unwrap();
        let sym = sym_diff_measure(&table, model.truth()).unwrap();
        assert!(
            (excess - (2.0 * p - 1.0) * sym).abs() < 1e-10,
            "band route vs symmetric difference: {excess} vs {}",
            (2.0 * p - 1.0) * sym
        );
        assert!(
            (via_risk - excess).abs() < 1e-10,
            "risk-minus-bayes route disagrees: {via_risk} vs {excess}"
        );
    }
}

#[test]
fn margin_condition_reports_pass_for_all_model_kinds() {
    let basis = BasisSystem::haar(1, 3).unwrap();
    let edge = sample_dyadic_edge(1, 2, 8).unwrap();

    let channel = ModelSpec::binary_channel(edge.clone(), 0.75).unwrap();
    assert_eq!(channel.sigma0(), 2.0);
    let r = check_margin_condition(&channel, &basis, 200, 11).unwrap();
    assert!(r.pass, "{r:?}");

    let margin = ModelSpec::margin(edge.clone(), 2.0, 0.2).unwrap();
    let r = check_margin_condition(&margin, &basis, 200, 12).unwrap();
    assert!(r.pass, "{r:?}");

    let regression = ModelSpec::regression(edge, NoiseSpec::TwoPoint { magnitude: 0.25 }).unwrap();
    let r = check_margin_condition(&regression, &basis, 200, 13).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn margin_model_excess_matches_cellwise_formula_inside_band() {
    let kappa = 2.0;
    let h = 0.2;
    let edge = sample_dyadic_edge(1, 2, 21).unwrap();
    let model = ModelSpec::margin(edge, kappa, h).unwrap();
    let basis = BasisSystem::haar(1, 3).unwrap();
    let truth = model.truth().refine(3).unwrap();
    let mut rng = stream_rng(77, 0);
    for _ in 0..200 {
        // Perturb the truth cellwise within the band, exactly representable.
        let mut pert = truth.clone();
        for v in pert.values_mut() {
            *v += rng.random_range(-h..=h);
        }
        let alpha = basis.analyze(&pert).unwrap();
        let table = basis.synthesize_table(&alpha).unwrap();
        let excess = model.excess_risk_table(&table).unwrap();
        // Cellwise closed form: each cell contributes u^kappa / (kappa h^(kappa-1)).
        let mut expect = 0.0;
        for (a, b) in table.values().iter().zip(truth.values()) {
            let u = (a - b).abs();
            expect += u.powf(kappa) / (kappa * h.powf(kappa - 1.0)) / table.values().len() as f64;
        }
        assert!((excess - expect).abs() < 1e-8, "excess {excess} vs cellwise {expect}");
        // Lower margin bound with the declared constant.
        let qd = q_measure_sym_diff(&model, &table, &truth).unwrap();
        assert!(qd.powf(kappa) / model.sigma0() <= excess + 1e-10);
    }
}

#[test]
fn eta_in_unit_interval_and_bayes_rule_matches_truth_fragment() {
    let edge = sample_dyadic_edge(1, 2, 31).unwrap();
    let models = [
        ModelSpec::binary_channel(edge.clone(), 0.8).unwrap(),
        ModelSpec::margin(edge.clone(), 3.0, 0.15).unwrap(),
        ModelSpec::regression(edge, NoiseSpec::Uniform { half_width: 0.2 }).unwrap(),
    ];
    for model in &models {
        for i in 0..64 {
            for j in 0..64 {
                let s = [(i as f64 + 0.5) / 64.0];
                let t = (j as f64 + 0.5) / 64.0;
                let eta = model.eta(&s, t);
                assert!((0.0..=1.0).contains(&eta), "eta {eta} out of range");
                let in_bayes = model.bayes_contains(&s, t);
                let in_truth = t <= model.truth().eval(&s);
                assert_eq!(in_bayes, in_truth, "bayes rule mismatch at ({s:?}, {t})");
            }
        }
    }
}

#[test]
fn probe_is_deterministic_and_family_order_free() {
    let edge = sample_dyadic_edge(1, 2, 3).unwrap();
    let model = ModelSpec::binary_channel(edge, 0.75).unwrap();
    let basis = BasisSystem::haar(1, 3).unwrap();
    let star = basis.analyze(&model.truth().refine(3).unwrap()).unwrap();
    let a = probe_empirical_process(&model, &basis, &star, 128, 6, 1.0, 99).unwrap();
    let b = probe_empirical_process(&model, &basis, &star, 128, 6, 1.0, 99).unwrap();
    assert_eq!(a.statistics, b.statistics);
    assert_eq!(a.exceedance_frequency, b.exceedance_frequency);
    // A generous constant covers every observed ratio.
    let c_big = 1e6;
    let big = probe_empirical_process(&model, &basis, &star, 128, 6, c_big, 99).unwrap();
    assert_eq!(big.exceedance_frequency, 0.0);
}

#[test]
fn fit_result_serializes_with_coefficient_schema() {
    let basis = BasisSystem::haar(1, 2).unwrap();
    let model = ModelSpec::binary_channel(EdgeFunction::constant(1, 0.5), 0.75).unwrap();
    let data = model.sample_dataset(30, 2).unwrap();
    let cfg = sqrtpen::penalty::PenaltyConfig::with_lambda(0.05);
    let fit = sqrtpen::solver::solve(&data, &basis, &cfg, &Default::default()).unwrap();
    let json = serde_json::to_string(&fit).unwrap();
    assert!(json.contains("\"certificate\":\"local\""));
    assert!(json.contains("\"blocks\""));
    let back: sqrtpen::solver::FitResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back.alpha, fit.alpha);
    assert_eq!(back.objective, fit.objective);
}
