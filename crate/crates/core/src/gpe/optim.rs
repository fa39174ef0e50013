//! Box-constrained BFGS for smooth objectives with analytic gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 200, gtol: 1e-6, ftol: 1e-12, max_step: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Objective value after every accepted step, starting point first.
    pub trace: Vec<f64>,
}

fn project(x: &mut DVector<f64>, lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimizes `f` over the box `[lo, hi]`. `f` returns `None` where the
/// objective is undefined; such points are treated as infinitely bad.
pub(crate) fn minimize(
    f: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BfgsOptions,
) -> Option<BfgsResult> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, lo, hi);
    let (mut fx, g0) = f(x.as_slice())?;
    if !fx.is_finite() {
        return None;
    }
    let mut g = DVector::from_vec(g0);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    let mut iterations = 0;

    let at_bound = |x: &DVector<f64>, g: &DVector<f64>, i: usize| {
        (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)
    };

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let pg_norm = (0..n).filter(|&i| !at_bound(&x, &g, i)).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm < opts.gtol {
            break;
        }
        let mut d = -(&hinv * &g);
        for i in 0..n {
            if at_bound(&x, &g, i) {
                d[i] = 0.0;
            }
        }
        if d.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
            for i in 0..n {
                if at_bound(&x, &g, i) {
                    d[i] = 0.0;
                }
            }
        }
        let dmax = d.amax();
        if dmax > opts.max_step {
            d *= opts.max_step / dmax;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn = &x + &d * t;
            project(&mut xn, lo, hi);
            let step = &xn - &x;
            if step.amax() == 0.0 {
                break;
            }
            if let Some((fnew, gnew)) = f(xn.as_slice()) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * g.dot(&step) {
                    accepted = Some((xn, fnew, DVector::from_vec(gnew)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                continue;
            }
            break;
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        let converged = (fx - fnew).abs() <= opts.ftol * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(fx);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            hinv = &a * &hinv * a.transpose() + &s * s.transpose() * rho;
        }
        if converged {
            break;
        }
    }
    Some(BfgsResult { x: x.iter().copied().collect(), f: fx, iterations, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn unconstrained_minimum() {
        let opts = BfgsOptions { max_iter: 500, ftol: 0.0, ..Default::default() };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        let quad = |x: &[f64]| Some(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let r = minimize(quad, &[0.0, 0.0], &[-1.0, -0.5], &[1.0, 1.0], &BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn undefined_start_is_rejected() {
        let never = |_: &[f64]| None;
        assert!(minimize(never, &[0.0], &[-1.0], &[1.0], &BfgsOptions::default()).is_none());
    }
}
