//! Gaussian-process emulator: trend bases, stationary kernels, profiled
//! maximum-likelihood training and posterior prediction.

mod kernel;
mod likelihood;
mod optim;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{BasisSpec, KernelFamily, KernelSpec, Theta};
pub use likelihood::{beta_profile, covariance_matrix, log_marginal_likelihood};

use likelihood::{factor, profile, profile_with_grad};
use optim::{minimize, BfgsOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpeError {
    #[error(
        "covariance matrix is not positive definite (n = {n}, nugget = {sigma2:e}, \
         smallest diagonal = {diag_min:e}, largest off-diagonal = {offdiag_max:e})"
    )]
    NotPositiveDefinite { n: usize, sigma2: f64, diag_min: f64, offdiag_max: f64 },
    #[error("trend basis of width {width} is rank deficient with {n} training points; use at least {} points", width + 1)]
    RankDeficient { n: usize, width: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparameter(String),
    #[error("no multi-start produced a finite likelihood")]
    AllStartsFailed,
}

/// Nugget variance, trend coefficients and kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma2: f64,
    pub beta: Vec<f64>,
    pub theta: Theta,
}

/// Affine maps between raw and standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_and_scale(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    let mean = v.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 1.0);
    }
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Standardization { x_mean: vec![0.0; p], x_scale: vec![1.0; p], y_mean: 0.0, y_scale: 1.0 }
    }

    /// Zero mean and unit sample standard deviation per column; constant
    /// columns keep scale 1.
    pub fn from_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (x_mean, x_scale) = (0..x.ncols()).map(|j| mean_and_scale(x.column(j).iter().copied())).unzip();
        let (y_mean, y_scale) = mean_and_scale(y.iter().copied());
        Standardization { x_mean, x_scale, y_mean, y_scale }
    }

    pub fn apply_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_mean).zip(&self.x_scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn apply_x_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_scale[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub n_starts: usize,
    /// Lower bound on the nugget, in standardized output units.
    pub nugget_floor: f64,
    /// Pin the nugget at the floor instead of estimating it.
    pub fix_nugget: bool,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { n_starts: 8, nugget_floor: 1e-8, fix_nugget: false, max_iter: 200, standardize: true }
    }
}

/// Diagnostics from the multi-start optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Profiled log-likelihood at each start (negative infinity if undefined).
    pub start_log_likelihood: Vec<f64>,
    pub final_log_likelihood: Vec<f64>,
    pub iterations: Vec<usize>,
    pub best_start: usize,
    pub nugget_floor: f64,
    /// Objective history of the winning start (log-likelihood, increasing).
    pub best_trace: Vec<f64>,
    pub warning: Option<String>,
}

/// A fitted emulator. Training data and hyperparameters are held in
/// standardized units; predictions are returned in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEmulator {
    pub basis: BasisSpec,
    pub family: KernelFamily,
    pub standardization: Standardization,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub eta_hat: Hyperparameters,
    /// Lower Cholesky factor of K11.
    pub chol_k11: DMatrix<f64>,
    /// K11^-1 (Y - H beta).
    pub alpha_vec: DVector<f64>,
    pub log_likelihood: f64,
    pub report: Option<TrainingReport>,
}

const LN_TAU_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 4.605_170_185_988_092); // 1e-3 .. 1e2
const LN_LENGTH_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 6.907_755_278_982_137); // 1e-2 .. 1e3
const LN_NUGGET_BOUNDS: (f64, f64) = (-12.0 * std::f64::consts::LN_10, std::f64::consts::LN_10); // 1e-12 .. 10

const START_FACTORS: [(f64, f64); 8] =
    [(1.0, 1.0), (0.1, 1.0), (10.0, 1.0), (1.0, 0.1), (1.0, 10.0), (0.1, 0.1), (10.0, 10.0), (0.1, 10.0)];

impl TrainedEmulator {
    /// Conditions the GP on `(x, y)` with fixed kernel parameters and nugget;
    /// beta is set by weighted least squares. With `standardize` the
    /// parameters are interpreted in standardized units.
    pub fn fit(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        basis: BasisSpec,
        kernel: &KernelSpec,
        sigma2: f64,
        standardize: bool,
    ) -> Result<Self, GpeError> {
        let st = if standardize { Standardization::from_data(x, y) } else { Standardization::identity(x.ncols()) };
        Self::fit_standardized(st, x, y, basis, kernel, sigma2, None)
    }

    fn fit_standardized(
        st: Standardization,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        basis: BasisSpec,
        kernel: &KernelSpec,
        sigma2: f64,
        report: Option<TrainingReport>,
    ) -> Result<Self, GpeError> {
        kernel.validate().map_err(GpeError::Hyperparameter)?;
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(GpeError::Hyperparameter(format!("nugget must be nonnegative, got {sigma2}")));
        }
        let xs = st.apply_x_matrix(x);
        let ys = y.map(|v| (v - st.y_mean) / st.y_scale);
        beta_profile(&xs, &ys, basis, kernel.family, &kernel.theta, sigma2)?;
        let pr = profile(&xs, &ys, &basis.matrix(&xs), kernel, sigma2)?;
        Ok(TrainedEmulator {
            basis,
            family: kernel.family,
            standardization: st,
            x_train: xs,
            y_train: ys,
            eta_hat: Hyperparameters { sigma2, beta: pr.beta.iter().copied().collect(), theta: kernel.theta.clone() },
            chol_k11: pr.chol.l(),
            alpha_vec: pr.alpha,
            log_likelihood: pr.ll,
            report,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec { family: self.family, theta: self.eta_hat.theta.clone() }
    }

    pub fn n_inputs(&self) -> usize {
        self.x_train.ncols()
    }

    /// Prior variance tau^2 + sigma^2 in raw output units.
    pub fn prior_variance(&self) -> f64 {
        let t = self.eta_hat.theta.tau;
        self.standardization.y_scale.powi(2) * (t * t + self.eta_hat.sigma2)
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.n_inputs(), "query has {} inputs, emulator expects {}", x.len(), self.n_inputs());
    }

    fn mean_standardized(&self, z: &[f64], kernel: &KernelSpec) -> f64 {
        let h = self.basis.row(z);
        let trend: f64 = h.iter().zip(&self.eta_hat.beta).map(|(a, b)| a * b).sum();
        trend + kernel.column(&self.x_train, z).dot(&self.alpha_vec)
    }

    /// Posterior mean at one input point.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.check_len(x);
        let z = self.standardization.apply_x(x);
        let st = &self.standardization;
        st.y_mean + st.y_scale * self.mean_standardized(&z, &self.kernel())
    }

    /// Posterior means for every row of `xs`, evaluated in parallel.
    pub fn predict_mean_rows(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let kernel = self.kernel();
        let st = &self.standardization;
        xs.par_iter()
            .map(|x| {
                self.check_len(x);
                st.y_mean + st.y_scale * self.mean_standardized(&st.apply_x(x), &kernel)
            })
            .collect()
    }

    /// Posterior covariance between the rows of `xs`. The nugget is part of
    /// the query block unless `include_nugget` is false.
    pub fn predict_cov(&self, xs: &DMatrix<f64>, include_nugget: bool) -> DMatrix<f64> {
        assert_eq!(xs.ncols(), self.n_inputs());
        let kernel = self.kernel();
        let zs = self.standardization.apply_x_matrix(xs);
        let mut k22 = kernel.cross(&zs, &zs);
        if include_nugget {
            for i in 0..k22.nrows() {
                k22[(i, i)] += self.eta_hat.sigma2;
            }
        }
        let k12 = kernel.cross(&self.x_train, &zs);
        let v = self.chol_k11.solve_lower_triangular(&k12).expect("cached factor has a positive diagonal");
        let sigma = k22 - v.transpose() * v;
        let s2 = self.standardization.y_scale.powi(2);
        (&sigma + sigma.transpose()) * (0.5 * s2)
    }

    pub fn predict_variance(&self, x: &[f64], include_nugget: bool) -> f64 {
        self.check_len(x);
        self.predict_cov(&DMatrix::from_row_slice(1, x.len(), x), include_nugget)[(0, 0)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("emulator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Profiled maximum-likelihood training with multi-start quasi-Newton search
/// over log kernel parameters (and the nugget unless it is pinned).
pub fn train(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: BasisSpec,
    family: KernelFamily,
    options: &TrainOptions,
) -> Result<TrainedEmulator, GpeError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(GpeError::Dimension(format!("{n} input rows but {} outputs", y.len())));
    }
    if p == 0 {
        return Err(GpeError::Dimension("no input columns".into()));
    }
    let width = basis.width(p);
    if n < width + 1 {
        return Err(GpeError::RankDeficient { n, width });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(GpeError::Dimension("training data contain non-finite values".into()));
    }
    if !(options.nugget_floor >= 0.0) || options.n_starts == 0 {
        return Err(GpeError::Hyperparameter("nugget floor must be nonnegative and n_starts positive".into()));
    }
    let st = if options.standardize { Standardization::from_data(x, y) } else { Standardization::identity(p) };
    let xs = st.apply_x_matrix(x);
    let ys = y.map(|v| (v - st.y_mean) / st.y_scale);
    let h = basis.matrix(&xs);

    let mut floor = options.nugget_floor;
    let mut last_err = GpeError::AllStartsFailed;
    for _attempt in 0..8 {
        match train_at_floor(&xs, &ys, &h, family, options, floor) {
            Ok((kernel, sigma2, report)) => {
                match TrainedEmulator::fit_standardized(st.clone(), x, y, basis, &kernel, sigma2, Some(report)) {
                    Ok(e) => return Ok(e),
                    Err(e) => last_err = e,
                }
            }
            Err(e) => last_err = e,
        }
        if matches!(last_err, GpeError::RankDeficient { .. }) {
            return Err(last_err);
        }
        floor = if floor > 0.0 { floor * 100.0 } else { 1e-10 };
        log::warn!("raising nugget floor to {floor:e} after: {last_err}");
    }
    Err(last_err)
}

type Candidate = (KernelSpec, f64, TrainingReport);

fn train_at_floor(
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
    h: &DMatrix<f64>,
    family: KernelFamily,
    options: &TrainOptions,
    floor: f64,
) -> Result<Candidate, GpeError> {
    let p = xs.ncols();
    let free_nugget = !options.fix_nugget;
    let unpack = |v: &[f64]| -> (KernelSpec, f64) {
        let kernel = KernelSpec::new(family, v[0].exp(), v[1..=p].iter().map(|l| l.exp()).collect());
        let sigma2 = if free_nugget { floor + v[p + 1].exp() } else { floor };
        (kernel, sigma2)
    };
    let objective = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (kernel, sigma2) = unpack(v);
        let (ll, g) = profile_with_grad(xs, ys, h, &kernel, sigma2).ok()?;
        if !ll.is_finite() {
            return None;
        }
        let mut grad: Vec<f64> = g[..=p].iter().map(|d| -d).collect();
        if free_nugget {
            grad.push(-g[p + 1] * (sigma2 - floor));
        }
        Some((-ll, grad))
    };

    let mut lo = vec![LN_TAU_BOUNDS.0];
    let mut hi = vec![LN_TAU_BOUNDS.1];
    lo.extend(std::iter::repeat_n(LN_LENGTH_BOUNDS.0, p));
    hi.extend(std::iter::repeat_n(LN_LENGTH_BOUNDS.1, p));
    if free_nugget {
        lo.push(LN_NUGGET_BOUNDS.0);
        hi.push(LN_NUGGET_BOUNDS.1);
    }

    let y_var = {
        let m = ys.mean();
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len().max(2) - 1) as f64;
        if v > 0.0 { v } else { 1.0 }
    };
    let ranges: Vec<f64> = (0..p)
        .map(|j| {
            let c = xs.column(j);
            let r = c.max() - c.min();
            if r > 0.0 { r } else { 1.0 }
        })
        .collect();
    let starts: Vec<Vec<f64>> = (0..options.n_starts)
        .map(|s| {
            let (fl, ft) = START_FACTORS[s % START_FACTORS.len()];
            // further starts beyond the table spread the length scales more
            let extra = (s / START_FACTORS.len()) as f64;
            let mut v = vec![0.5 * (y_var * ft).ln()];
            v.extend(ranges.iter().map(|r| (r * fl * 2f64.powf(extra)).ln()));
            if free_nugget {
                v.push((1e-4 * y_var).ln());
            }
            v.iter().zip(lo.iter().zip(&hi)).map(|(x, (a, b))| x.clamp(*a, *b)).collect()
        })
        .collect();

    let bfgs = BfgsOptions { max_iter: options.max_iter, ..Default::default() };
    let runs: Vec<(f64, Option<optim::BfgsResult>)> = starts
        .par_iter()
        .map(|s| {
            let start_ll = objective(s).map(|(f, _)| -f).unwrap_or(f64::NEG_INFINITY);
            (start_ll, minimize(objective, s, &lo, &hi, &bfgs))
        })
        .collect();

    let start_ll: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let final_ll: Vec<f64> = runs.iter().map(|r| r.1.as_ref().map_or(f64::NEG_INFINITY, |b| -b.f)).collect();
    let iterations: Vec<usize> = runs.iter().map(|r| r.1.as_ref().map_or(0, |b| b.iterations)).collect();
    let best = (0..runs.len())
        .filter(|&i| final_ll[i].is_finite())
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(b) if final_ll[b] >= final_ll[i] => Some(b),
            _ => Some(i),
        })
        .ok_or(GpeError::AllStartsFailed)?;
    let result = runs[best].1.as_ref().expect("best start has a result");
    let best_start_ll = start_ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let warning = (final_ll[best] <= best_start_ll)
        .then(|| "optimization did not improve on the best starting point".to_string());
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let (kernel, sigma2) = unpack(&result.x);
    let report = TrainingReport {
        start_log_likelihood: start_ll,
        final_log_likelihood: final_ll,
        iterations,
        best_start: best,
        nugget_floor: floor,
        best_trace: result.trace.iter().map(|f| -f).collect(),
        warning,
    };
    // make sure the chosen point factors before handing it back
    factor(covariance_matrix(xs, &kernel, sigma2), sigma2)?;
    Ok((kernel, sigma2, report))
}
