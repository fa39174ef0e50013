mod common;

use common::{five_dim_vine, tau_grid, tau_oracle};
use loadmargin::sampling::{correlate, mc_uniform, to_physical};
use loadmargin::uncertainty::{kendall_tau, norm_inv, Marginal, PairCopula, VineEdge, VineKind, VineSpec};

fn pair_vine(c: PairCopula) -> VineSpec {
    VineSpec::new(VineKind::DVine, vec![1, 2], vec![VineEdge { tree: 1, index: 1, copula: c }]).unwrap()
}

#[test]
fn empirical_kendall_tau_matches_every_family() {
    for (i, c) in tau_grid().into_iter().enumerate() {
        let d = correlate(&mc_uniform(50_000, 2, 100 + i as u64), &pair_vine(c)).unwrap();
        let tau = kendall_tau(&d.column(0), &d.column(1));
        let want = tau_oracle(c);
        assert!((tau - want).abs() <= 0.02, "{c:?}: empirical {tau} vs {want}");
        assert!((c.kendall_tau() - want).abs() < 1e-6, "{c:?}: closed form {}", c.kendall_tau());
    }
}

#[test]
fn five_dim_round_trip() {
    for kind in [VineKind::CVine, VineKind::DVine] {
        let vine = five_dim_vine(kind);
        let w = mc_uniform(1000, 5, 9);
        let mut worst: f64 = 0.0;
        for row in w.rows() {
            let u = vine.sample_inverse(row).unwrap();
            let back = vine.rosenblatt_forward(&u).unwrap();
            worst = row.iter().zip(&back).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        }
        assert!(worst < 1e-6, "{kind:?}: {worst:e}");
    }
}

#[test]
fn independence_vine_is_the_identity() {
    let w = mc_uniform(500, 4, 3);
    let vine = VineSpec::independence(VineKind::CVine, 4).unwrap();
    assert_eq!(correlate(&w, &vine).unwrap().rows().collect::<Vec<_>>(), w.rows().collect::<Vec<_>>());
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn gaussian_d_vine_reproduces_partial_correlation_structure() {
    // With Gaussian pair copulas the vine is a Gaussian copula whose
    // correlation follows from the partial-correlation recursion.
    let (r12, r23, r13_2) = (0.6, -0.4, 0.5);
    let edges = vec![
        VineEdge { tree: 1, index: 1, copula: PairCopula::Gaussian(r12) },
        VineEdge { tree: 1, index: 2, copula: PairCopula::Gaussian(r23) },
        VineEdge { tree: 2, index: 1, copula: PairCopula::Gaussian(r13_2) },
    ];
    let vine = VineSpec::new(VineKind::DVine, vec![1, 2, 3], edges).unwrap();
    let d = correlate(&mc_uniform(50_000, 3, 17), &vine).unwrap();
    let z: Vec<Vec<f64>> = (0..3).map(|j| d.column(j).into_iter().map(norm_inv).collect()).collect();
    let r13 = r13_2 * ((1.0 - r12 * r12) * (1.0 - r23 * r23)).sqrt() + r12 * r23;
    for (i, j, want) in [(0, 1, r12), (1, 2, r23), (0, 2, r13)] {
        let got = correlation(&z[i], &z[j]);
        assert!((got - want).abs() < 0.02, "({i},{j}): {got} vs {want}");
    }
}

#[test]
fn physical_means_within_three_standard_errors() {
    let marginals = [
        Marginal::Weibull { shape: 2.06, scale: 7.41 },
        Marginal::Gaussian { mean: 1.0, std: 0.05 },
        Marginal::Weibull { shape: 2.3, scale: 7.2 },
    ];
    let n = 50_000;
    let d = to_physical(&mc_uniform(n, 3, 5), &marginals).unwrap();
    for (j, m) in marginals.iter().enumerate() {
        let col = d.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((mean - m.mean()).abs() < 3.0 * se, "column {j}: {mean} vs {}", m.mean());
    }
}
