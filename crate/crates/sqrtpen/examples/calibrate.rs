//! Sweep the weight multiplier across both rate studies and print the
//! fitted slopes, to pick the pinned values for the acceptance suite.

use sqrtpen::basis::BasisSystem;
use sqrtpen::experiments::{rate_study, RateStudyConfig};
use sqrtpen::model::{sample_dyadic_edge, sample_holder_edge, ModelSpec};
use sqrtpen::penalty::TheoryConstants;
use sqrtpen::solver::SolverConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("vc");
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let grid: Vec<usize> = vec![256, 512, 1024, 2048, 4096, 8192];
    let basis = BasisSystem::haar(1, 5).unwrap();
    let c_grid: Vec<f64> = args
        .get(3)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0.005, 0.01, 0.02, 0.04, 0.08, 0.15, 0.3]);

    for &c_lambda in &c_grid {
        let cfg = RateStudyConfig {
            n_grid: grid.clone(),
            replicates: reps,
            c_lambda,
            constants: TheoryConstants::new(1, 1.0, 2.0, 1.0).unwrap(),
            rho: if which == "vc" { 0.0 } else { 1.0 },
            solver: SolverConfig { restarts: 2, max_sweeps: 40, ..SolverConfig::default() },
            seed: 20_240_817,
        };
        let table = if which == "vc" {
            let edge = sample_dyadic_edge(1, 2, 42).unwrap();
            let factory = move |_s: u64| ModelSpec::binary_channel(edge.clone(), 0.75);
            rate_study(&factory, &basis, &cfg).unwrap()
        } else {
            let edge = sample_holder_edge(1, 1.0, 4.0, 12, 42).unwrap();
            let factory = move |_s: u64| ModelSpec::binary_channel(edge.clone(), 0.75);
            rate_study(&factory, &basis, &cfg).unwrap()
        };
        let sl = table.slope_l1.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
        let se = table.slope_excess.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
        let plain = table.slope_l1_plain.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
        print!("c_lambda {c_lambda:>6}: L1 slope {sl:>7.3} (plain {plain:>7.3}), excess {se:>7.3}, ");
        print!("disagree {:.2}, ", table.rows.iter().map(|r| r.restart_disagreement).sum::<f64>() / table.rows.len() as f64);
        println!(
            "means {:?}",
            table.rows.iter().map(|r| (r.n, (r.mean_l1 * 1e4).round() / 1e4)).collect::<Vec<_>>()
        );
    }
}
