//! Oracles shared by the integration tests and the acceptance suite. Each is
//! computed by a route independent of the library code it checks.
#![allow(dead_code)]

use std::path::PathBuf;

use loadmargin::case_model::{parse_case, NetworkCase};
use loadmargin::cpf::{solve_at_lambda, GrowthDirection};
use loadmargin::gpe::{BasisSpec, KernelFamily};
use loadmargin::powerflow::{solve_nr, BusInjections, PowerFlowModel, PowerFlowOptions, VoltageState};
use loadmargin::uncertainty::{PairCopula, VineEdge, VineKind, VineSpec};
use nalgebra::{DMatrix, DVector};

pub fn crate_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

pub fn load_case(name: &str) -> NetworkCase {
    let text = std::fs::read_to_string(crate_path(&format!("data/{name}.m"))).unwrap();
    parse_case(&text).unwrap()
}

pub fn base_solution(case: &NetworkCase) -> loadmargin::powerflow::PowerFlowSolution {
    solve_nr(case, &BusInjections::from_case(case), &VoltageState::from_case(case), &PowerFlowOptions::default())
        .unwrap()
}

/// Largest relative deviation between the analytic Jacobian and central
/// differences of the residual, over the converged state and a perturbed one.
/// The solver steps by `J⁻¹·f` with `f` = scheduled − calculated, so the
/// analytic Jacobian is the derivative of minus the residual.
pub fn jacobian_fd_error(case: &NetworkCase) -> f64 {
    let model = PowerFlowModel::new(case);
    let sol = base_solution(case);
    let inj = BusInjections::from_case(case);
    let p: Vec<f64> = inj.p_gen.iter().zip(&inj.p_load).map(|(g, l)| g - l).collect();
    let q: Vec<f64> = inj.q_load.iter().map(|l| -l).collect();
    let mut worst: f64 = 0.0;
    for shift in [0.0, 0.03] {
        let v: Vec<f64> = sol.v_mag.iter().enumerate().map(|(i, v)| v * (1.0 - shift * ((i % 5) as f64 / 5.0))).collect();
        let th: Vec<f64> = sol.v_ang.iter().enumerate().map(|(i, a)| a + shift * ((i % 3) as f64 - 1.0)).collect();
        let jac = model.jacobian(&v, &th);
        let x0 = model.pack(&v, &th);
        let m = x0.len();
        let scale = jac.amax();
        for k in 0..m {
            let h = 1e-6;
            let (mut vp, mut tp, mut vm, mut tm) = (v.clone(), th.clone(), v.clone(), th.clone());
            let mut xp = x0.clone();
            xp[k] += h;
            model.unpack(&xp, &mut vp, &mut tp);
            let mut xm = x0.clone();
            xm[k] -= h;
            model.unpack(&xm, &mut vm, &mut tm);
            let fp = model.residual(&vp, &tp, &p, &q);
            let fm = model.residual(&vm, &tm, &p, &q);
            for r in 0..m {
                let fd = -(fp[r] - fm[r]) / (2.0 * h);
                let err = (jac[(r, k)] - fd).abs() / scale;
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// Loadability by bisection on plain Newton power-flow feasibility, walking
/// up the upper branch with warm starts. No continuation machinery involved.
pub fn bisection_lambda_max(case: &NetworkCase, base: &BusInjections, dir: &GrowthDirection) -> f64 {
    let opts = PowerFlowOptions { tol: 1e-10, max_iter: 40, enforce_q_limits: false };
    let feasible = |lambda: f64, start: &VoltageState| -> Option<VoltageState> {
        let sol = solve_at_lambda(case, base, dir, lambda, start, &opts).ok()?;
        (sol.converged && sol.v_mag.iter().all(|v| *v > 0.3)).then(|| sol.state())
    };
    let mut state = feasible(0.0, &VoltageState::from_case(case)).expect("base case solvable");
    let (mut lo, mut step) = (0.0, 0.05);
    let mut hi = loop {
        match feasible(lo + step, &state) {
            Some(s) => {
                lo += step;
                state = s;
            }
            None if step > 1e-3 => step /= 4.0,
            None => break lo + step,
        }
    };
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        match feasible(mid, &state) {
            Some(s) => {
                lo = mid;
                state = s;
            }
            None => hi = mid,
        }
    }
    lo
}

/// Kernel value from the closed-form table, written out independently.
pub fn kernel_oracle(family: KernelFamily, tau: f64, ls: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let t2 = tau * tau;
    match family {
        KernelFamily::SquaredExponential => t2 * (-0.5 * r.iter().zip(ls).map(|(r, l)| (r / l).powi(2)).sum::<f64>()).exp(),
        KernelFamily::Exponential => t2 * (-r.iter().zip(ls).map(|(r, l)| r / l).sum::<f64>()).exp(),
        KernelFamily::RationalQuadratic { alpha } => {
            let s: f64 = r.iter().zip(ls).map(|(r, l)| (r / l).powi(2)).sum();
            t2 * (1.0 + s / (2.0 * alpha)).powf(-alpha)
        }
        KernelFamily::Matern32 => {
            let s: f64 = r.iter().zip(ls).map(|(r, l)| 3f64.sqrt() * r / l).sum();
            t2 * (1.0 + s) * (-s).exp()
        }
    }
}

pub fn basis_oracle(basis: BasisSpec, x: &[f64]) -> Vec<f64> {
    let mut h = vec![1.0];
    if basis != BasisSpec::Constant {
        h.extend_from_slice(x);
    }
    if basis == BasisSpec::PureQuadratic {
        h.extend(x.iter().map(|v| v * v));
    }
    h
}

/// Dense GP quantities using explicit matrix inverses.
pub struct DenseGp {
    pub beta: DVector<f64>,
    pub log_likelihood: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn dense_gp(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
    basis: BasisSpec,
    family: KernelFamily,
    tau: f64,
    ls: &[f64],
    sigma2: f64,
) -> DenseGp {
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    let gram = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| kernel_oracle(family, tau, ls, &row(a, i), &row(b, j)))
    };
    let hmat = |a: &DMatrix<f64>| {
        let rows: Vec<Vec<f64>> = (0..a.nrows()).map(|i| basis_oracle(basis, &row(a, i))).collect();
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    };
    let n = x.nrows();
    let k11 = gram(x, x) + DMatrix::identity(n, n) * sigma2;
    let ki = k11.clone().try_inverse().unwrap();
    let h = hmat(x);
    let beta = (h.transpose() * &ki * &h).try_inverse().unwrap() * h.transpose() * &ki * y;
    let resid = y - &h * &beta;
    let ll = -0.5 * (resid.transpose() * &ki * &resid)[0]
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * k11.determinant().ln();
    let k21 = gram(xs, x);
    let mean = hmat(xs) * &beta + &k21 * &ki * &resid;
    let cov = gram(xs, xs) + DMatrix::identity(xs.nrows(), xs.nrows()) * sigma2 - &k21 * &ki * k21.transpose();
    DenseGp { beta, log_likelihood: ll, mean, cov }
}

/// Five-dimensional D-vine with every family represented.
pub fn five_dim_vine(kind: VineKind) -> VineSpec {
    let mut edges = Vec::new();
    for (tree, count, c) in [
        (1, 4, PairCopula::Frank(5.736)),
        (2, 3, PairCopula::Gumbel(1.8)),
        (3, 2, PairCopula::Gaussian(0.5)),
        (4, 1, PairCopula::Frank(-3.0)),
    ] {
        for index in 1..=count {
            edges.push(VineEdge { tree, index, copula: c });
        }
    }
    VineSpec::new(kind, vec![3, 1, 5, 2, 4], edges).unwrap()
}

/// The pair-copula parameter grid used for the Kendall tau checks.
pub fn tau_grid() -> Vec<PairCopula> {
    let mut g = vec![PairCopula::Independence];
    g.extend([-0.8, -0.3, 0.3, 0.8].map(PairCopula::Gaussian));
    g.extend([-8.0, -2.0, 2.0, 5.736, 12.0].map(PairCopula::Frank));
    g.extend([1.2, 1.5, 2.0, 4.0].map(PairCopula::Gumbel));
    g
}

/// Kendall tau from the family's defining relation, independent of the
/// library's closed forms: Gaussian and Gumbel have elementary expressions;
/// Frank goes through its Debye-function integral by Simpson's rule.
pub fn tau_oracle(c: PairCopula) -> f64 {
    match c {
        PairCopula::Independence => 0.0,
        PairCopula::Gaussian(r) => 2.0 / std::f64::consts::PI * r.asin(),
        PairCopula::Gumbel(t) => 1.0 - 1.0 / t,
        PairCopula::Frank(t) => {
            let n = 20_000;
            let h = t.abs() / n as f64;
            let f = |s: f64| if s == 0.0 { 1.0 } else { s / s.exp_m1() };
            let mut acc = f(0.0) + f(t.abs());
            for i in 1..n {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let d1 = acc * h / 3.0 / t.abs();
            let d1 = if t < 0.0 { d1 + t.abs() / 2.0 } else { d1 };
            1.0 - 4.0 / t * (1.0 - d1)
        }
    }
}
