mod common;

use common::*;
use gridgauss::fitting::{fit, nll, nll_gradients, FitConfig};
use gridgauss::grid::{SampleBundle, SparsityPattern};
use gridgauss::synth::{generate, SynthKind, SynthSpec};

fn bundle_for(g: &gridgauss::StructuredGaussian, count: usize, seed: u64) -> SampleBundle {
    g.sample_exact(count, seed).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let scaled = seed % 2 == 1;
        let g = model(4, 4, 1 + (seed % 3 == 0) as usize, scaled, seed);
        let b = bundle_for(&g, 6, seed + 100);
        // evaluate away from the maximum so the gradient is not tiny
        let g = gridgauss::StructuredGaussian::new(g.mean().iter().map(|m| m + 0.3).collect(), g.chol().clone()).unwrap();
        let e = gradient_check(&g, &b, 1e-5);
        assert!(e < 1e-4, "seed {seed} (scaled {scaled}): {e}");
    }
}

#[test]
fn iid_standard_normal_recovers_unit_scale() {
    let shape = shape(4, 4);
    let spec = SynthSpec {
        kind: SynthKind::DiagonalNoise { mean: vec![0.0; 16], std: vec![1.0; 16] },
        shape,
        count: 10_000,
        seed: 5,
    };
    let (b, _) = generate(&spec).unwrap();
    let cfg = FitConfig { diagonal_only: true, ..FitConfig::default() };
    let (g, report) = fit(&b, &SparsityPattern::canonical(1).unwrap(), &cfg, 1).unwrap();
    assert_eq!(report.final_nll, *report.nll_trace.last().unwrap());
    for p in 0..16 {
        assert!(g.mean()[p].abs() < 0.05);
        let sd = 1.0 / g.chol().effective_diagonal()[p];
        assert!((sd - 1.0).abs() < 0.03, "pixel {p}: std {sd}");
    }
}

#[test]
fn fit_recovers_a_known_model() {
    let truth = correlated_model(8, 8, 3);
    let train = bundle_for(&truth, 256, 10);
    let held = bundle_for(&truth, 1024, 11);
    let (g, report) = fit(&train, &SparsityPattern::canonical(1).unwrap(), &FitConfig::default(), 2).unwrap();
    let (fit_nll, true_nll) = (nll(&g, &held).unwrap(), nll(&truth, &held).unwrap());
    assert!((fit_nll - true_nll) / true_nll.abs() < 0.02, "held-out {fit_nll} vs {true_nll}");
    assert!(report.final_nll < report.nll_trace[0]);

    let centre = 3 * 8 + 3;
    let a = g.covariance_row(centre, gridgauss::RowSolver::Exact).unwrap();
    let b = truth.covariance_row(centre, gridgauss::RowSolver::Exact).unwrap();
    assert!(pearson(a.values(), b.values()) > 0.9);
}

#[test]
fn full_pattern_beats_diagonal_in_training_nll() {
    let spec = SynthSpec {
        kind: SynthKind::SmoothField { length_scale: 2.0, amplitude: 1.0 },
        shape: shape(6, 6),
        count: 128,
        seed: 8,
    };
    let (b, _) = generate(&spec).unwrap();
    let pattern = SparsityPattern::canonical(1).unwrap();
    let (full, _) = fit(&b, &pattern, &FitConfig::default(), 1).unwrap();
    let (diag, _) = fit(&b, &pattern, &FitConfig { diagonal_only: true, ..FitConfig::default() }, 1).unwrap();
    let (nf, nd) = (nll(&full, &b).unwrap(), nll(&diag, &b).unwrap());
    assert!(nf <= nd + 1e-6 * nd.abs(), "full {nf} vs diagonal {nd}");
}

#[test]
fn sample_order_does_not_matter() {
    let g = model(4, 5, 1, true, 12);
    let b = bundle_for(&g, 32, 4);
    let mut reversed = Vec::with_capacity(b.values().len());
    for s in (0..b.count()).rev() {
        reversed.extend_from_slice(b.sample(s));
    }
    let r = SampleBundle::new(b.shape(), b.count(), reversed).unwrap();
    let (n1, n2) = (nll(&g, &b).unwrap(), nll(&g, &r).unwrap());
    assert!(((n1 - n2) / n1).abs() < 1e-12);
    let (g1, g2) = (nll_gradients(&g, &b).unwrap(), nll_gradients(&g, &r).unwrap());
    assert!(rel_err(&g1.log_diag, &g2.log_diag) < 1e-12);
    assert!(rel_err(&g1.off_diag, &g2.off_diag) < 1e-12);
    assert!(rel_err(&g1.mean, &g2.mean) < 1e-12);

    let cfg = FitConfig { max_iterations: 300, ..FitConfig::default() };
    let pattern = SparsityPattern::canonical(1).unwrap();
    let (_, r1) = fit(&b, &pattern, &cfg, 3).unwrap();
    let (_, r2) = fit(&r, &pattern, &cfg, 3).unwrap();
    assert!(((r1.final_nll - r2.final_nll) / r1.final_nll).abs() < 1e-9);
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
