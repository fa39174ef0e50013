use loadmargin::pipeline::ks_one_sample;
use loadmargin::sampling::{correlate, lhs, mc_uniform};
use loadmargin::uncertainty::{PairCopula, VineEdge, VineKind, VineSpec};

fn scenario_vine() -> VineSpec {
    let mut edges = Vec::new();
    for (tree, count, c) in [
        (1, 4, PairCopula::Frank(5.736)),
        (2, 3, PairCopula::Frank(5.736)),
        (3, 2, PairCopula::Gaussian(0.5)),
        (4, 1, PairCopula::Gumbel(1.5)),
    ] {
        for index in 1..=count {
            edges.push(VineEdge { tree, index, copula: c });
        }
    }
    VineSpec::new(VineKind::DVine, vec![1, 2, 3, 4, 5], edges).unwrap()
}

#[test]
fn correlated_columns_stay_uniform() {
    let n = 50_000;
    let critical = 1.628 / (n as f64).sqrt();
    for design in [mc_uniform(n, 5, 11), lhs(n, 5, 11)] {
        let d = correlate(&design, &scenario_vine()).unwrap();
        for j in 0..5 {
            let ks = ks_one_sample(&d.column(j), |u| u.clamp(0.0, 1.0)).unwrap();
            assert!(ks < critical, "column {j}: {ks} vs {critical}");
        }
    }
}

#[test]
fn lhs_is_stratified_over_a_grid() {
    for n in [1, 2, 7, 15, 100, 1000] {
        for p in [1, 3, 5, 8] {
            let d = lhs(n, p, (n * p) as u64);
            for j in 0..p {
                let mut cells: Vec<usize> = d.column(j).iter().map(|u| (u * n as f64).floor() as usize).collect();
                cells.sort_unstable();
                assert_eq!(cells, (0..n).collect::<Vec<_>>(), "n={n} p={p} column {j}");
            }
        }
    }
}
