//! Newton–Raphson AC power flow in polar coordinates.
//!
//! State ordering used everywhere in this module and in [`crate::cpf`]:
//! `x = [θ(pv ∪ pq), |V|(pq)]`, residuals `[ΔP(pv ∪ pq), ΔQ(pq)]`, both with
//! buses in case order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_model::{admittance_matrix, BusKind, NetworkCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("invalid options: {0}")]
    Options(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerFlowOptions {
    /// Maximum absolute mismatch, pu.
    pub tol: f64,
    pub max_iter: usize,
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30, enforce_q_limits: false }
    }
}

impl PowerFlowOptions {
    pub fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tol > 0.0) {
            return Err(PowerFlowError::Options("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(PowerFlowError::Options("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Scheduled per-bus quantities in per-unit. Generator reactive output is
/// free at PV and slack buses and therefore not scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusInjections {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_gen: Vec<f64>,
}

impl BusInjections {
    /// Base-case injections taken straight from the case data.
    pub fn from_case(case: &NetworkCase) -> Self {
        let base = case.base_mva();
        let n = case.n_buses();
        let mut p_gen = vec![0.0; n];
        for g in case.generators().iter().filter(|g| g.in_service) {
            p_gen[case.bus_index(g.bus).expect("validated")] += g.p_gen / base;
        }
        BusInjections {
            p_load: case.buses().iter().map(|b| b.p_load / base).collect(),
            q_load: case.buses().iter().map(|b| b.q_load / base).collect(),
            p_gen,
        }
    }

    pub fn zeros(n: usize) -> Self {
        BusInjections { p_load: vec![0.0; n], q_load: vec![0.0; n], p_gen: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.p_load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_load.is_empty()
    }

    fn check(&self, n: usize) -> Result<(), PowerFlowError> {
        for len in [self.p_load.len(), self.q_load.len(), self.p_gen.len()] {
            if len != n {
                return Err(PowerFlowError::Dimension { expected: n, got: len });
            }
        }
        Ok(())
    }
}

/// Bus voltage magnitudes (pu) and angles (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageState {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

impl VoltageState {
    /// 1.0 pu / 0 rad everywhere, with generator setpoints at PV and slack buses.
    pub fn flat(case: &NetworkCase) -> Self {
        let n = case.n_buses();
        let mut s = VoltageState { v_mag: vec![1.0; n], v_ang: vec![0.0; n] };
        apply_setpoints(case, &case.effective_kinds(), &mut s.v_mag);
        s
    }

    /// The voltages stored in the case file.
    pub fn from_case(case: &NetworkCase) -> Self {
        let mut s = VoltageState {
            v_mag: case.buses().iter().map(|b| b.v_mag).collect(),
            v_ang: case.buses().iter().map(|b| b.v_ang).collect(),
        };
        apply_setpoints(case, &case.effective_kinds(), &mut s.v_mag);
        s
    }
}

fn apply_setpoints(case: &NetworkCase, kinds: &[BusKind], v_mag: &mut [f64]) {
    for g in case.generators().iter().filter(|g| g.in_service) {
        let i = case.bus_index(g.bus).expect("validated");
        if kinds[i] != BusKind::PQ {
            v_mag[i] = g.v_set;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// MW
    pub p_slack: f64,
    /// MVAr
    pub q_slack: f64,
    pub history: Vec<IterationRecord>,
}

impl PowerFlowSolution {
    pub fn state(&self) -> VoltageState {
        VoltageState { v_mag: self.v_mag.clone(), v_ang: self.v_ang.clone() }
    }

    /// Iteration history as a JSON document.
    pub fn history_json(&self) -> String {
        serde_json::to_string_pretty(&self.history).expect("plain data")
    }
}

/// Dense conductance/susceptance matrices plus the variable layout for a
/// given assignment of bus types. Shared by power flow and continuation.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    n: usize,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    /// nonzero pattern per row, including the diagonal
    pattern: Vec<Vec<usize>>,
    kinds: Vec<BusKind>,
    slack: usize,
    /// buses carrying an angle unknown (PV and PQ), in case order
    pvpq: Vec<usize>,
    /// buses carrying a magnitude unknown (PQ), in case order
    pq: Vec<usize>,
}

impl PowerFlowModel {
    pub fn new(case: &NetworkCase) -> Self {
        Self::with_kinds(case, case.effective_kinds())
    }

    pub fn with_kinds(case: &NetworkCase, kinds: Vec<BusKind>) -> Self {
        let y = admittance_matrix(case);
        let n = y.dim();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        let mut pattern = Vec::with_capacity(n);
        for i in 0..n {
            let mut cols: Vec<usize> = y.row(i).iter().map(|&(j, _)| j).collect();
            if !cols.contains(&i) {
                cols.push(i);
                cols.sort_unstable();
            }
            for &(j, yij) in y.row(i) {
                g[(i, j)] = yij.re;
                b[(i, j)] = yij.im;
            }
            pattern.push(cols);
        }
        let pvpq = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
        let pq = (0..n).filter(|&i| kinds[i] == BusKind::PQ).collect();
        PowerFlowModel { n, g, b, pattern, slack: case.slack_index(), kinds, pvpq, pq }
    }

    pub fn n_buses(&self) -> usize {
        self.n
    }

    pub fn n_state(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    pub fn pvpq(&self) -> &[usize] {
        &self.pvpq
    }

    pub fn pq(&self) -> &[usize] {
        &self.pq
    }

    pub fn kinds(&self) -> &[BusKind] {
        &self.kinds
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Calculated active and reactive injections at every bus.
    pub fn injections(&self, v: &[f64], th: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; self.n];
        let mut q = vec![0.0; self.n];
        for i in 0..self.n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for &k in &self.pattern[i] {
                let (s, c) = (th[i] - th[k]).sin_cos();
                let (gik, bik) = (self.g[(i, k)], self.b[(i, k)]);
                pi += v[k] * (gik * c + bik * s);
                qi += v[k] * (gik * s - bik * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
        (p, q)
    }

    /// Residuals (scheduled − calculated) for the given net scheduled
    /// injections `p_net`, `q_net` (generation minus load, pu).
    pub fn residual(&self, v: &[f64], th: &[f64], p_net: &[f64], q_net: &[f64]) -> DVector<f64> {
        let (p, q) = self.injections(v, th);
        let np = self.pvpq.len();
        let mut f = DVector::zeros(self.n_state());
        for (r, &i) in self.pvpq.iter().enumerate() {
            f[r] = p_net[i] - p[i];
        }
        for (r, &i) in self.pq.iter().enumerate() {
            f[np + r] = q_net[i] - q[i];
        }
        f
    }

    /// Jacobian of the calculated injections with respect to the state
    /// (the residual Jacobian is its negative).
    pub fn jacobian(&self, v: &[f64], th: &[f64]) -> DMatrix<f64> {
        let (p, q) = self.injections(v, th);
        let np = self.pvpq.len();
        let nq = self.pq.len();
        // column position of each bus in the θ block and |V| block
        let mut th_col = vec![usize::MAX; self.n];
        let mut v_col = vec![usize::MAX; self.n];
        for (c, &j) in self.pvpq.iter().enumerate() {
            th_col[j] = c;
        }
        for (c, &j) in self.pq.iter().enumerate() {
            v_col[j] = np + c;
        }
        let mut row_p = vec![usize::MAX; self.n];
        let mut row_q = vec![usize::MAX; self.n];
        for (r, &i) in self.pvpq.iter().enumerate() {
            row_p[i] = r;
        }
        for (r, &i) in self.pq.iter().enumerate() {
            row_q[i] = np + r;
        }

        let mut jac = DMatrix::zeros(np + nq, np + nq);
        for i in 0..self.n {
            let (rp, rq) = (row_p[i], row_q[i]);
            if rp == usize::MAX && rq == usize::MAX {
                continue;
            }
            for &j in &self.pattern[i] {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                let (s, c) = (th[i] - th[j]).sin_cos();
                let (dp_dth, dp_dv, dq_dth, dq_dv) = if i == j {
                    (
                        -q[i] - bij * v[i] * v[i],
                        p[i] / v[i] + gij * v[i],
                        p[i] - gij * v[i] * v[i],
                        q[i] / v[i] - bij * v[i],
                    )
                } else {
                    (
                        v[i] * v[j] * (gij * s - bij * c),
                        v[i] * (gij * c + bij * s),
                        -v[i] * v[j] * (gij * c + bij * s),
                        v[i] * (gij * s - bij * c),
                    )
                };
                let (ct, cv) = (th_col[j], v_col[j]);
                if rp != usize::MAX {
                    if ct != usize::MAX {
                        jac[(rp, ct)] = dp_dth;
                    }
                    if cv != usize::MAX {
                        jac[(rp, cv)] = dp_dv;
                    }
                }
                if rq != usize::MAX {
                    if ct != usize::MAX {
                        jac[(rq, ct)] = dq_dth;
                    }
                    if cv != usize::MAX {
                        jac[(rq, cv)] = dq_dv;
                    }
                }
            }
        }
        jac
    }

    /// Pack `(|V|, θ)` into the state vector.
    pub fn pack(&self, v: &[f64], th: &[f64]) -> DVector<f64> {
        let np = self.pvpq.len();
        let mut x = DVector::zeros(self.n_state());
        for (r, &i) in self.pvpq.iter().enumerate() {
            x[r] = th[i];
        }
        for (r, &i) in self.pq.iter().enumerate() {
            x[np + r] = v[i];
        }
        x
    }

    /// Write the state vector back into `(|V|, θ)`; slack and PV magnitudes
    /// are left untouched.
    pub fn unpack(&self, x: &DVector<f64>, v: &mut [f64], th: &mut [f64]) {
        let np = self.pvpq.len();
        for (r, &i) in self.pvpq.iter().enumerate() {
            th[i] = x[r];
        }
        for (r, &i) in self.pq.iter().enumerate() {
            v[i] = x[np + r];
        }
    }
}

fn net_injections(inj: &BusInjections) -> (Vec<f64>, Vec<f64>) {
    let p = inj.p_gen.iter().zip(&inj.p_load).map(|(g, l)| g - l).collect();
    let q = inj.q_load.iter().map(|l| -l).collect();
    (p, q)
}

/// Stacked ΔP (non-slack) and ΔQ (PQ) residuals, scheduled minus calculated.
pub fn mismatch(
    case: &NetworkCase,
    v_mag: &[f64],
    v_ang: &[f64],
    injections: &BusInjections,
) -> Result<Vec<f64>, PowerFlowError> {
    let n = case.n_buses();
    for len in [v_mag.len(), v_ang.len()] {
        if len != n {
            return Err(PowerFlowError::Dimension { expected: n, got: len });
        }
    }
    injections.check(n)?;
    let model = PowerFlowModel::new(case);
    let (p, q) = net_injections(injections);
    Ok(model.residual(v_mag, v_ang, &p, &q).iter().copied().collect())
}

fn max_abs(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Plain Newton iterations on a prepared model. Returns
/// `(converged, iterations, max_mismatch, history)`; `v`/`th` are updated in place.
pub(crate) fn newton_iterate(
    model: &PowerFlowModel,
    v: &mut [f64],
    th: &mut [f64],
    p_net: &[f64],
    q_net: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(bool, usize, f64, Vec<IterationRecord>), PowerFlowError> {
    let mut history = Vec::new();
    let mut f = model.residual(v, th, p_net, q_net);
    let mut norm = max_abs(&f);
    history.push(IterationRecord { iteration: 0, max_mismatch: norm });
    let mut it = 0;
    while norm > tol && it < max_iter {
        it += 1;
        let jac = model.jacobian(v, th);
        let dx = jac.lu().solve(&f).ok_or(PowerFlowError::SingularJacobian(it))?;
        if dx.iter().any(|d| !d.is_finite()) {
            return Err(PowerFlowError::SingularJacobian(it));
        }
        let mut x = model.pack(v, th);
        x += dx;
        model.unpack(&x, v, th);
        f = model.residual(v, th, p_net, q_net);
        norm = max_abs(&f);
        history.push(IterationRecord { iteration: it, max_mismatch: norm });
        if !norm.is_finite() {
            break;
        }
    }
    Ok((norm <= tol, it, norm, history))
}

/// Solve the AC power flow from the supplied starting voltages.
///
/// Non-convergence is reported through [`PowerFlowSolution::converged`];
/// only a singular Jacobian is an error.
pub fn solve_nr(
    case: &NetworkCase,
    injections: &BusInjections,
    start: &VoltageState,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    options.validate()?;
    let n = case.n_buses();
    injections.check(n)?;
    for len in [start.v_mag.len(), start.v_ang.len()] {
        if len != n {
            return Err(PowerFlowError::Dimension { expected: n, got: len });
        }
    }

    let mut kinds = case.effective_kinds();
    let (p_net, mut q_net) = net_injections(injections);
    let mut v = start.v_mag.clone();
    let mut th = start.v_ang.clone();
    apply_setpoints(case, &kinds, &mut v);
    th[case.slack_index()] = start.v_ang[case.slack_index()];

    let mut total_iters = 0;
    let mut history = Vec::new();
    loop {
        let model = PowerFlowModel::with_kinds(case, kinds.clone());
        let (converged, iters, max_mismatch, hist) = newton_iterate(
            &model,
            &mut v,
            &mut th,
            &p_net,
            &q_net,
            options.tol,
            options.max_iter,
        )?;
        total_iters += iters;
        history.extend(hist.into_iter().map(|mut r| {
            r.iteration += total_iters - iters;
            r
        }));

        if converged && options.enforce_q_limits {
            if let Some(switched) = q_limit_switch(case, &model, &v, &th, injections, &mut kinds, &mut q_net) {
                log::debug!("{switched} PV bus(es) switched to PQ at reactive limits");
                continue;
            }
        }

        let (p, q) = model.injections(&v, &th);
        let s = case.slack_index();
        let base = case.base_mva();
        return Ok(PowerFlowSolution {
            p_slack: (p[s] + injections.p_load[s]) * base,
            q_slack: (q[s] + injections.q_load[s]) * base,
            v_mag: v,
            v_ang: th,
            converged,
            iterations: total_iters,
            max_mismatch,
            history,
        });
    }
}

/// Convert PV buses whose generator reactive output violates its limits to
/// PQ buses pinned at the violated limit. Returns the number switched, or
/// `None` if all limits hold.
fn q_limit_switch(
    case: &NetworkCase,
    model: &PowerFlowModel,
    v: &[f64],
    th: &[f64],
    inj: &BusInjections,
    kinds: &mut [BusKind],
    q_net: &mut [f64],
) -> Option<usize> {
    let base = case.base_mva();
    let (_, q) = model.injections(v, th);
    let n = case.n_buses();
    let mut qmax = vec![0.0; n];
    let mut qmin = vec![0.0; n];
    for g in case.generators().iter().filter(|g| g.in_service) {
        let i = case.bus_index(g.bus).expect("validated");
        qmax[i] += g.q_max / base;
        qmin[i] += g.q_min / base;
    }
    let mut switched = 0;
    for i in 0..n {
        if kinds[i] != BusKind::PV {
            continue;
        }
        let qg = q[i] + inj.q_load[i];
        let limit = if qg > qmax[i] + 1e-9 {
            qmax[i]
        } else if qg < qmin[i] - 1e-9 {
            qmin[i]
        } else {
            continue;
        };
        kinds[i] = BusKind::PQ;
        q_net[i] = limit - inj.q_load[i];
        switched += 1;
    }
    (switched > 0).then_some(switched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::{parse_case, tests::TWO_BUS};

    fn two_bus() -> NetworkCase {
        parse_case(TWO_BUS).unwrap()
    }

    #[test]
    fn zero_loads_zero_mismatch() {
        let c = two_bus();
        let inj = BusInjections::zeros(2);
        let s = VoltageState::flat(&c);
        let m = mismatch(&c, &s.v_mag, &s.v_ang, &inj).unwrap();
        assert!(m.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn doubling_loads_doubles_dp_at_flat_start() {
        let c = two_bus();
        let s = VoltageState::flat(&c);
        let inj = BusInjections::from_case(&c);
        let mut inj2 = inj.clone();
        inj2.p_load.iter_mut().for_each(|p| *p *= 2.0);
        let m1 = mismatch(&c, &s.v_mag, &s.v_ang, &inj).unwrap();
        let m2 = mismatch(&c, &s.v_mag, &s.v_ang, &inj2).unwrap();
        assert!((m2[0] - 2.0 * m1[0]).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let c = two_bus();
        let inj = BusInjections::from_case(&c);
        assert_eq!(
            mismatch(&c, &[1.0], &[0.0, 0.0], &inj).unwrap_err(),
            PowerFlowError::Dimension { expected: 2, got: 1 }
        );
    }

    #[test]
    fn two_bus_analytic_solution() {
        // lossless line, unity power factor load: V2 = cos δ, P = sin 2δ / (2X)
        let c = two_bus();
        let delta = 0.5 * (0.2f64).asin();
        let inj = BusInjections::from_case(&c);
        let m = mismatch(&c, &[1.0, delta.cos()], &[0.0, -delta], &inj).unwrap();
        assert!(m.iter().all(|x| x.abs() < 1e-12), "{m:?}");

        let sol = solve_nr(&c, &inj, &VoltageState::flat(&c), &PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.max_mismatch <= 1e-8);
        // V2² = (1 + √(1 − 4P²X²)) / 2 = 0.98990, so V2 = 0.99494
        assert!((sol.v_mag[1] - 0.994_94).abs() < 1e-5);
        assert!((sol.v_mag[1] - delta.cos()).abs() < 1e-9);
        assert!((sol.p_slack - 100.0).abs() < 1e-6);
    }

    #[test]
    fn zero_load_trivial_fixed_point() {
        let c = two_bus();
        let inj = BusInjections::zeros(2);
        let start = VoltageState { v_mag: vec![1.0, 0.7], v_ang: vec![0.0, 0.3] };
        let sol = solve_nr(&c, &inj, &start, &PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.v_mag[1] - 1.0).abs() < 1e-9);
        let flat = solve_nr(&c, &inj, &VoltageState::flat(&c), &PowerFlowOptions::default()).unwrap();
        assert!(flat.iterations <= 2);
    }

    #[test]
    fn beyond_loadability_does_not_converge() {
        let c = two_bus();
        let mut inj = BusInjections::from_case(&c);
        inj.p_load[1] = 5.2;
        let sol = solve_nr(&c, &inj, &VoltageState::flat(&c), &PowerFlowOptions::default());
        match sol {
            Ok(s) => assert!(!s.converged),
            Err(PowerFlowError::SingularJacobian(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn rejects_bad_options() {
        let c = two_bus();
        let inj = BusInjections::from_case(&c);
        let opts = PowerFlowOptions { tol: 0.0, ..Default::default() };
        assert!(solve_nr(&c, &inj, &VoltageState::flat(&c), &opts).is_err());
    }
}
