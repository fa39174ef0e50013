//! Continuation power flow.
//!
//! The power-flow equations are parameterized by a load/generation scaling
//! parameter λ along a [`GrowthDirection`]. The solution curve is traced with
//! a tangent predictor and a locally parameterized Newton corrector: at each
//! step the continued quantity is whichever of λ or a PQ voltage magnitude
//! changes fastest along the unit tangent, so the corrector stays regular at
//! the nose. Once λ starts to decrease the maximum is localized by a Brent
//! search over the fastest-moving voltage magnitude.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_model::{BusKind, NetworkCase};
use crate::powerflow::{
    solve_nr, BusInjections, PowerFlowError, PowerFlowModel, PowerFlowOptions,
    VoltageState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpfError {
    #[error("growth direction is zero: no load increases with λ")]
    ZeroDirection,
    #[error("generator participation sums to {0}, expected 1")]
    Participation(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("base case does not solve at λ = 0 (max mismatch {0:e})")]
    BaseCaseInfeasible(f64),
    #[error("corrector failed at λ = 0")]
    InitialCorrector,
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error("invalid continuation options: {0}")]
    Options(&'static str),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// Direction of load and generation growth per unit of λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDirection {
    /// MW per unit λ, per bus (case order)
    pub delta_p: Vec<f64>,
    /// MVAr per unit λ, per bus
    pub delta_q: Vec<f64>,
    /// share of the total ΔP picked up by each generator (case order)
    pub gen_participation: Vec<f64>,
    gen_bus: Vec<usize>,
}

impl GrowthDirection {
    pub fn new(
        case: &NetworkCase,
        delta_p: Vec<f64>,
        delta_q: Vec<f64>,
        gen_participation: Vec<f64>,
    ) -> Result<Self, CpfError> {
        let n = case.n_buses();
        for len in [delta_p.len(), delta_q.len()] {
            if len != n {
                return Err(CpfError::Dimension { expected: n, got: len });
            }
        }
        if gen_participation.len() != case.generators().len() {
            return Err(CpfError::Dimension {
                expected: case.generators().len(),
                got: gen_participation.len(),
            });
        }
        let sum: f64 = gen_participation.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CpfError::Participation(sum));
        }
        if delta_p.iter().all(|&d| d == 0.0) {
            return Err(CpfError::ZeroDirection);
        }
        let gen_bus = case
            .generators()
            .iter()
            .map(|g| case.bus_index(g.bus).expect("validated"))
            .collect();
        Ok(GrowthDirection { delta_p, delta_q, gen_participation, gen_bus })
    }

    /// Uniform growth of every base load at constant power factor, picked up
    /// by the in-service non-slack generators in proportion to their base
    /// output. With no such generator the slack takes everything.
    pub fn system_wide(case: &NetworkCase) -> Result<Self, CpfError> {
        let delta_p = case.buses().iter().map(|b| b.p_load).collect();
        let delta_q = case.buses().iter().map(|b| b.q_load).collect();
        Self::new(case, delta_p, delta_q, default_participation(case))
    }

    /// Growth of a single bus load at its base power factor. A bus with zero
    /// base load grows at 1 MW per unit λ, unity power factor.
    pub fn single_bus(case: &NetworkCase, bus: u32) -> Result<Self, CpfError> {
        let i = case.bus_index(bus).ok_or(CpfError::UnknownBus(bus))?;
        let n = case.n_buses();
        let mut delta_p = vec![0.0; n];
        let mut delta_q = vec![0.0; n];
        let b = &case.buses()[i];
        if b.p_load > 0.0 {
            delta_p[i] = b.p_load;
            delta_q[i] = b.q_load;
        } else {
            delta_p[i] = 1.0;
        }
        Self::new(case, delta_p, delta_q, default_participation(case))
    }

    /// Same direction with every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        GrowthDirection {
            delta_p: self.delta_p.iter().map(|d| d * c).collect(),
            delta_q: self.delta_q.iter().map(|d| d * c).collect(),
            gen_participation: self.gen_participation.clone(),
            gen_bus: self.gen_bus.clone(),
        }
    }

    /// Total MW of additional load per unit λ.
    pub fn total_mw(&self) -> f64 {
        self.delta_p.iter().sum()
    }

    /// Per-bus generation increase, MW per unit λ.
    fn gen_delta(&self, n: usize) -> Vec<f64> {
        let total = self.total_mw();
        let mut out = vec![0.0; n];
        for (&share, &bus) in self.gen_participation.iter().zip(&self.gen_bus) {
            out[bus] += share * total;
        }
        out
    }

    /// Scheduled injections at load level λ on top of `base`.
    pub fn injections_at(&self, base: &BusInjections, lambda: f64, base_mva: f64) -> BusInjections {
        let n = base.len();
        let gd = self.gen_delta(n);
        BusInjections {
            p_load: (0..n).map(|i| base.p_load[i] + lambda * self.delta_p[i] / base_mva).collect(),
            q_load: (0..n).map(|i| base.q_load[i] + lambda * self.delta_q[i] / base_mva).collect(),
            p_gen: (0..n).map(|i| base.p_gen[i] + lambda * gd[i] / base_mva).collect(),
        }
    }
}

fn default_participation(case: &NetworkCase) -> Vec<f64> {
    let kinds = case.effective_kinds();
    let eligible: Vec<bool> = case
        .generators()
        .iter()
        .map(|g| {
            let i = case.bus_index(g.bus).expect("validated");
            g.in_service && kinds[i] == BusKind::PV && g.p_gen > 0.0
        })
        .collect();
    let total: f64 = case
        .generators()
        .iter()
        .zip(&eligible)
        .filter(|(_, &e)| e)
        .map(|(g, _)| g.p_gen)
        .sum();
    if total > 0.0 {
        let mut part: Vec<f64> = case
            .generators()
            .iter()
            .zip(&eligible)
            .map(|(g, &e)| if e { g.p_gen / total } else { 0.0 })
            .collect();
        // absorb rounding so the shares sum to exactly one
        let s: f64 = part.iter().sum();
        if let Some(k) = eligible.iter().position(|&e| e) {
            part[k] += 1.0 - s;
        }
        part
    } else {
        let slack = case.buses()[case.slack_index()].id;
        let on_slack: Vec<bool> = case
            .generators()
            .iter()
            .map(|g| g.in_service && g.bus == slack)
            .collect();
        let k = on_slack.iter().filter(|&&s| s).count().max(1) as f64;
        let mut part: Vec<f64> = on_slack.iter().map(|&s| if s { 1.0 / k } else { 0.0 }).collect();
        if part.iter().all(|&p| p == 0.0) && !part.is_empty() {
            part[0] = 1.0;
        }
        part
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpfOptions {
    pub initial_step: f64,
    pub max_step: f64,
    pub step_floor: f64,
    pub shrink: f64,
    pub grow: f64,
    /// consecutive successes before the step grows
    pub grow_after: usize,
    pub max_steps: usize,
    /// absolute λ resolution of the nose localization
    pub lambda_tol: f64,
    /// corrector tolerance and iteration cap
    pub corrector: PowerFlowOptions,
}

impl Default for CpfOptions {
    fn default() -> Self {
        CpfOptions {
            initial_step: 0.1,
            max_step: 0.5,
            step_floor: 1e-4,
            shrink: 0.5,
            grow: 1.5,
            grow_after: 2,
            max_steps: 500,
            lambda_tol: 1e-4,
            corrector: PowerFlowOptions { tol: 1e-8, max_iter: 12, enforce_q_limits: false },
        }
    }
}

impl CpfOptions {
    /// A more cautious variant used when retrying failed traces.
    pub fn tightened(&self) -> Self {
        CpfOptions {
            initial_step: self.initial_step * 0.25,
            max_step: self.max_step * 0.25,
            corrector: PowerFlowOptions { max_iter: self.corrector.max_iter * 2, ..self.corrector },
            ..*self
        }
    }

    fn validate(&self) -> Result<(), CpfError> {
        if !(self.initial_step > 0.0 && self.max_step >= self.initial_step) {
            return Err(CpfError::Options("need 0 < initial_step <= max_step"));
        }
        if !(self.step_floor > 0.0 && self.step_floor < self.initial_step) {
            return Err(CpfError::Options("need 0 < step_floor < initial_step"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow >= 1.0) {
            return Err(CpfError::Options("need 0 < shrink < 1 <= grow"));
        }
        if !(self.lambda_tol > 0.0) {
            return Err(CpfError::Options("lambda_tol must be positive"));
        }
        self.corrector.validate().map_err(|_| CpfError::Options("bad corrector options"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    NosePassed,
    StepFloor,
    MaxSteps,
    CorrectorFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: f64,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// unit tangent `[θ(pv∪pq), |V|(pq), λ]` at this point, oriented along
    /// the direction of travel; empty for points produced by nose localization
    pub tangent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationTrace {
    pub bus_ids: Vec<u32>,
    pub points: Vec<TracePoint>,
    pub nose_index: usize,
    pub terminated_reason: TerminationReason,
}

impl ContinuationTrace {
    pub fn lambda_max(&self) -> f64 {
        self.points[self.nose_index].lambda.max(0.0)
    }

    /// PV-curve data: one row per point, `lambda` then every bus magnitude.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda");
        for id in &self.bus_ids {
            let _ = write!(s, ",v_{id}");
        }
        s.push('\n');
        for p in &self.points {
            let _ = write!(s, "{:.16e}", p.lambda);
            for v in &p.v_mag {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadMargin {
    pub lambda_max: f64,
    /// MW of additional system load at the nose
    pub margin_mw: f64,
    /// MW of additional load at the target bus
    pub margin_at_bus_mw: f64,
    /// false when the trace ended without bracketing the nose
    pub reliable: bool,
}

/// λ-parameterized equations: `F(x, λ) = s0 + λ·ds − S(x)`.
struct Continuation<'a> {
    model: &'a PowerFlowModel,
    p0: Vec<f64>,
    q0: Vec<f64>,
    dp: Vec<f64>,
    dq: Vec<f64>,
    /// dF/dλ restricted to the residual rows
    f_lambda: DVector<f64>,
    v_fixed: Vec<f64>,
    th_fixed: Vec<f64>,
}

impl<'a> Continuation<'a> {
    fn new(
        model: &'a PowerFlowModel,
        case: &NetworkCase,
        base: &BusInjections,
        dir: &GrowthDirection,
        start: &VoltageState,
    ) -> Self {
        let n = model.n_buses();
        let mva = case.base_mva();
        let gd = dir.gen_delta(n);
        let p0: Vec<f64> = (0..n).map(|i| base.p_gen[i] - base.p_load[i]).collect();
        let q0: Vec<f64> = (0..n).map(|i| -base.q_load[i]).collect();
        let dp: Vec<f64> = (0..n).map(|i| (gd[i] - dir.delta_p[i]) / mva).collect();
        let dq: Vec<f64> = (0..n).map(|i| -dir.delta_q[i] / mva).collect();
        let np = model.pvpq().len();
        let mut f_lambda = DVector::zeros(model.n_state());
        for (r, &i) in model.pvpq().iter().enumerate() {
            f_lambda[r] = dp[i];
        }
        for (r, &i) in model.pq().iter().enumerate() {
            f_lambda[np + r] = dq[i];
        }
        Continuation {
            model,
            p0,
            q0,
            dp,
            dq,
            f_lambda,
            v_fixed: start.v_mag.clone(),
            th_fixed: start.v_ang.clone(),
        }
    }

    fn dim(&self) -> usize {
        self.model.n_state() + 1
    }

    fn voltages(&self, z: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut v = self.v_fixed.clone();
        let mut th = self.th_fixed.clone();
        let x = z.rows(0, self.model.n_state()).into_owned();
        self.model.unpack(&x, &mut v, &mut th);
        (v, th)
    }

    fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let lam = z[self.dim() - 1];
        let (v, th) = self.voltages(z);
        let p: Vec<f64> = self.p0.iter().zip(&self.dp).map(|(a, b)| a + lam * b).collect();
        let q: Vec<f64> = self.q0.iter().zip(&self.dq).map(|(a, b)| a + lam * b).collect();
        self.model.residual(&v, &th, &p, &q)
    }

    /// Jacobian of `[F; z_k]` with respect to `z`.
    fn augmented_jacobian(&self, z: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let m = self.model.n_state();
        let (v, th) = self.voltages(z);
        let jac = self.model.jacobian(&v, &th);
        let mut a = DMatrix::zeros(m + 1, m + 1);
        a.view_mut((0, 0), (m, m)).copy_from(&(-jac));
        a.view_mut((0, m), (m, 1)).copy_from(&self.f_lambda);
        a[(m, k)] = 1.0;
        a
    }

    /// Unit tangent with sign chosen so that component `k` has sign `sign`.
    fn tangent(&self, z: &DVector<f64>, k: usize, sign: f64) -> Option<DVector<f64>> {
        let a = self.augmented_jacobian(z, k);
        let mut rhs = DVector::zeros(self.dim());
        rhs[self.dim() - 1] = sign;
        let t = a.lu().solve(&rhs)?;
        let norm = t.norm();
        (norm.is_finite() && norm > 0.0).then(|| t / norm)
    }

    /// Newton corrector holding `z_k` at `target`.
    fn correct(&self, guess: &DVector<f64>, k: usize, target: f64, opts: &PowerFlowOptions) -> Option<DVector<f64>> {
        let m = self.model.n_state();
        let mut z = guess.clone();
        z[k] = target;
        for _ in 0..=opts.max_iter {
            let f = self.residual(&z);
            let norm = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if !norm.is_finite() {
                return None;
            }
            if norm <= opts.tol {
                return Some(z);
            }
            let a = self.augmented_jacobian(&z, k);
            let mut g = DVector::zeros(m + 1);
            g.rows_mut(0, m).copy_from(&f);
            g[m] = z[k] - target;
            let dz = a.lu().solve(&g)?;
            z -= dz;
        }
        None
    }

    fn point(&self, z: &DVector<f64>, tangent: Option<&DVector<f64>>) -> TracePoint {
        let (v, th) = self.voltages(z);
        TracePoint {
            lambda: z[self.dim() - 1],
            v_mag: v,
            v_ang: th,
            tangent: tangent.map(|t| t.iter().copied().collect()).unwrap_or_default(),
        }
    }

    /// Continuation parameter: λ or the PQ magnitude with the largest
    /// tangent component.
    fn choose_parameter(&self, t: &DVector<f64>) -> usize {
        let np = self.model.pvpq().len();
        let lam = self.dim() - 1;
        let mut best = lam;
        let mut best_val = t[lam].abs();
        for k in np..lam {
            if t[k].abs() > best_val {
                best = k;
                best_val = t[k].abs();
            }
        }
        best
    }
}

/// Trace the PV curve from the base point along `direction` until the nose
/// has been passed and localized.
pub fn trace_continuation(
    case: &NetworkCase,
    injections: &BusInjections,
    direction: &GrowthDirection,
    options: &CpfOptions,
) -> Result<ContinuationTrace, CpfError> {
    options.validate()?;
    let n = case.n_buses();
    if injections.len() != n {
        return Err(CpfError::Dimension { expected: n, got: injections.len() });
    }
    if direction.delta_p.len() != n {
        return Err(CpfError::Dimension { expected: n, got: direction.delta_p.len() });
    }
    if direction.delta_p.iter().all(|&d| d == 0.0) {
        return Err(CpfError::ZeroDirection);
    }

    let base = solve_nr(case, injections, &VoltageState::from_case(case), &options.corrector)?;
    let base = if base.converged {
        base
    } else {
        let flat = solve_nr(case, injections, &VoltageState::flat(case), &options.corrector)?;
        if !flat.converged {
            return Err(CpfError::BaseCaseInfeasible(base.max_mismatch.min(flat.max_mismatch)));
        }
        flat
    };
    let start = base.state();
    let model = PowerFlowModel::new(case);
    let cont = Continuation::new(&model, case, injections, direction, &start);
    let lam_idx = cont.dim() - 1;

    let mut z = DVector::zeros(cont.dim());
    z.rows_mut(0, model.n_state()).copy_from(&model.pack(&start.v_mag, &start.v_ang));
    z[lam_idx] = 0.0;

    let trace = |points: Vec<TracePoint>, nose_index, reason| ContinuationTrace {
        bus_ids: case.buses().iter().map(|b| b.id).collect(),
        points,
        nose_index,
        terminated_reason: reason,
    };

    let Some(mut t) = cont.tangent(&z, lam_idx, 1.0) else {
        return Err(CpfError::InitialCorrector);
    };
    let mut states = vec![z.clone()];
    let mut points = vec![cont.point(&z, Some(&t))];
    let mut step = options.initial_step;
    let mut successes = 0;
    let mut steps = 0;

    loop {
        if steps >= options.max_steps {
            let nose = argmax_lambda(&points);
            return Ok(trace(points, nose, TerminationReason::MaxSteps));
        }
        steps += 1;

        let k = cont.choose_parameter(&t);
        let pred = &z + &t * step;
        let Some(z_new) = cont.correct(&pred, k, pred[k], &options.corrector) else {
            step *= options.shrink;
            successes = 0;
            if step < options.step_floor {
                if points.len() == 1 {
                    return Err(CpfError::InitialCorrector);
                }
                let nose = argmax_lambda(&points);
                return Ok(trace(points, nose, TerminationReason::StepFloor));
            }
            continue;
        };

        // keep the orientation of travel: new tangent must agree with the old one
        let sign = if t[k] >= 0.0 { 1.0 } else { -1.0 };
        let Some(mut t_new) = cont.tangent(&z_new, k, sign) else {
            let nose = argmax_lambda(&points);
            return Ok(trace(points, nose, TerminationReason::CorrectorFailure));
        };
        if t_new.dot(&t) < 0.0 {
            t_new = -t_new;
        }

        let lam_prev = z[lam_idx];
        let lam_new = z_new[lam_idx];
        states.push(z_new.clone());
        points.push(cont.point(&z_new, Some(&t_new)));

        if lam_new < lam_prev {
            let (points, nose) = localize_nose(&cont, states, points, &options.corrector);
            return Ok(trace(points, nose, TerminationReason::NosePassed));
        }

        z = z_new;
        t = t_new;
        successes += 1;
        if successes >= options.grow_after {
            step = (step * options.grow).min(options.max_step);
            successes = 0;
        }
    }
}

fn argmax_lambda(points: &[TracePoint]) -> usize {
    points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Refine the maximum of λ between the last three accepted states (the
/// highest one and its two neighbours) and splice the refined point into the
/// trace. Returns the trace points and the nose index.
fn localize_nose(
    cont: &Continuation<'_>,
    states: Vec<DVector<f64>>,
    mut points: Vec<TracePoint>,
    opts: &PowerFlowOptions,
) -> (Vec<TracePoint>, usize) {
    let last = states.len() - 1;
    let top = last - 1;
    if top == 0 {
        // λ decreased on the very first step: the base point is the nose
        return (points, 0);
    }
    let (za, zb, zc) = (&states[top - 1], &states[top], &states[last]);
    let lam_idx = cont.dim() - 1;

    // the bracketing coordinate: PQ magnitude that moves most across the bracket
    let np = cont.model.pvpq().len();
    let k = (np..lam_idx)
        .max_by(|&i, &j| (zc[i] - za[i]).abs().total_cmp(&(zc[j] - za[j]).abs()))
        .unwrap_or(lam_idx);
    if k == lam_idx || (zc[k] - za[k]).abs() < 1e-12 {
        return (points, top);
    }

    let guess_at = |s: f64| -> DVector<f64> {
        // piecewise-linear interpolation through the three states in coordinate k
        let (lo, hi) = if (s - za[k]) * (zb[k] - za[k]) >= 0.0 && (s - za[k]).abs() <= (zb[k] - za[k]).abs() {
            (za, zb)
        } else {
            (zb, zc)
        };
        let w = if (hi[k] - lo[k]).abs() > 0.0 { (s - lo[k]) / (hi[k] - lo[k]) } else { 0.0 };
        lo + (hi - lo) * w
    };
    let eval = |s: f64| -> Option<DVector<f64>> { cont.correct(&guess_at(s), k, s, opts) };

    let lam_b = zb[lam_idx];
    let best = brent_max(za[k], zb[k], zc[k], lam_b, |s| eval(s).map(|z| z[lam_idx]));
    let Some((s_star, lam_star)) = best else {
        return (points, top);
    };
    if lam_star <= lam_b {
        return (points, top);
    }
    let Some(z_star) = eval(s_star) else {
        return (points, top);
    };
    let refined = cont.point(&z_star, None);
    // splice in by position along coordinate k
    let before_top = (s_star - za[k]) * (zb[k] - s_star) > 0.0;
    let at = if before_top { top } else { top + 1 };
    points.insert(at, refined);
    (points, at)
}

/// Maximize `f` on the interval spanned by `a` and `c`, given an interior
/// point `b` with `f(b) = fb` exceeding both ends. Brent's parabolic
/// interpolation with golden-section fallback; failed evaluations count as
/// −∞.
fn brent_max(
    a: f64,
    b: f64,
    c: f64,
    fb: f64,
    mut f: impl FnMut(f64) -> Option<f64>,
) -> Option<(f64, f64)> {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    const MAX_ITER: usize = 60;
    let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
    let mut eval = |x: f64| -f(x).unwrap_or(f64::NEG_INFINITY);
    let (mut x, mut w, mut v) = (b, b, b);
    let (mut fx, mut fw, mut fv) = (-fb, -fb, -fb);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let tol_rel = 1e-9;
    for _ in 0..MAX_ITER {
        let xm = 0.5 * (lo + hi);
        let tol1 = tol_rel * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { lo - x } else { hi - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u);
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    fx.is_finite().then_some((x, -fx))
}

/// Extract the load margin from a finished trace.
pub fn load_margin(
    trace: &ContinuationTrace,
    direction: &GrowthDirection,
    target_bus: u32,
) -> Result<LoadMargin, CpfError> {
    let i = trace
        .bus_ids
        .iter()
        .position(|&b| b == target_bus)
        .ok_or(CpfError::UnknownBus(target_bus))?;
    let lambda_max = trace.lambda_max();
    Ok(LoadMargin {
        lambda_max,
        margin_mw: lambda_max * direction.total_mw(),
        margin_at_bus_mw: lambda_max * direction.delta_p[i],
        reliable: matches!(
            trace.terminated_reason,
            TerminationReason::NosePassed | TerminationReason::StepFloor
        ),
    })
}

/// Plain power flow at a fixed λ, warm-started. Exposed for feasibility
/// checks that must not go through the continuation machinery.
pub fn solve_at_lambda(
    case: &NetworkCase,
    base: &BusInjections,
    direction: &GrowthDirection,
    lambda: f64,
    start: &VoltageState,
    options: &PowerFlowOptions,
) -> Result<crate::powerflow::PowerFlowSolution, PowerFlowError> {
    let inj = direction.injections_at(base, lambda, case.base_mva());
    solve_nr(case, &inj, start, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::{parse_case, tests::TWO_BUS};

    fn two_bus() -> NetworkCase {
        parse_case(TWO_BUS).unwrap()
    }

    #[test]
    fn two_bus_nose_matches_analytic_limit() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let inj = BusInjections::from_case(&c);
        let tr = trace_continuation(&c, &inj, &dir, &CpfOptions::default()).unwrap();
        assert_eq!(tr.terminated_reason, TerminationReason::NosePassed);
        // total load at the nose: (1 + λ) pu = V1² / (2X) = 5 pu
        let p_nose = 1.0 + tr.lambda_max();
        assert!((p_nose - 5.0).abs() / 5.0 < 1e-3, "nose at {p_nose}");
        let m = load_margin(&tr, &dir, 2).unwrap();
        assert!((m.margin_mw - 400.0).abs() / 400.0 < 1e-3);
        assert!(m.reliable);
    }

    #[test]
    fn lambda_increases_up_to_nose() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let tr = trace_continuation(&c, &BusInjections::from_case(&c), &dir, &CpfOptions::default()).unwrap();
        for w in tr.points[..=tr.nose_index].windows(2) {
            assert!(w[1].lambda > w[0].lambda);
        }
    }

    #[test]
    fn zero_direction_rejected() {
        let c = two_bus();
        let err = GrowthDirection::new(&c, vec![0.0; 2], vec![0.0; 2], vec![1.0]).unwrap_err();
        assert_eq!(err, CpfError::ZeroDirection);
    }

    #[test]
    fn participation_must_sum_to_one() {
        let c = two_bus();
        let err = GrowthDirection::new(&c, vec![0.0, 1.0], vec![0.0; 2], vec![0.5]).unwrap_err();
        assert!(matches!(err, CpfError::Participation(_)));
    }

    #[test]
    fn nose_at_base_gives_zero_margin() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let tr = ContinuationTrace {
            bus_ids: vec![1, 2],
            points: vec![
                TracePoint { lambda: 0.0, v_mag: vec![1.0, 0.7], v_ang: vec![0.0, -0.8], tangent: vec![] },
                TracePoint { lambda: -0.01, v_mag: vec![1.0, 0.6], v_ang: vec![0.0, -0.9], tangent: vec![] },
            ],
            nose_index: 0,
            terminated_reason: TerminationReason::NosePassed,
        };
        let m = load_margin(&tr, &dir, 2).unwrap();
        assert_eq!(m.lambda_max, 0.0);
        assert_eq!(m.margin_mw, 0.0);
    }

    #[test]
    fn unreliable_when_max_steps() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let opts = CpfOptions { max_steps: 3, ..Default::default() };
        let tr = trace_continuation(&c, &BusInjections::from_case(&c), &dir, &opts).unwrap();
        assert_eq!(tr.terminated_reason, TerminationReason::MaxSteps);
        assert!(!load_margin(&tr, &dir, 2).unwrap().reliable);
    }

    #[test]
    fn scaling_direction_preserves_margin() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let inj = BusInjections::from_case(&c);
        let m1 = load_margin(&trace_continuation(&c, &inj, &dir, &CpfOptions::default()).unwrap(), &dir, 2).unwrap();
        let d3 = dir.scaled(3.0);
        let m3 = load_margin(&trace_continuation(&c, &inj, &d3, &CpfOptions::default()).unwrap(), &d3, 2).unwrap();
        assert!((m1.margin_mw - m3.margin_mw).abs() / m1.margin_mw < 1e-3);
        assert!((m1.lambda_max / 3.0 - m3.lambda_max).abs() / m3.lambda_max < 1e-3);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = two_bus();
        let dir = GrowthDirection::system_wide(&c).unwrap();
        let tr = trace_continuation(&c, &BusInjections::from_case(&c), &dir, &CpfOptions::default()).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "lambda,v_1,v_2");
        assert_eq!(lines.count(), tr.points.len());
    }
}
