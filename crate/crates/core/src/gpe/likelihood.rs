use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{rows, BasisSpec, KernelFamily, KernelSpec, Theta};
use super::{GpeError, Hyperparameters};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// K11 = k(X, X) + sigma2 * I.
pub fn covariance_matrix(x: &DMatrix<f64>, kernel: &KernelSpec, sigma2: f64) -> DMatrix<f64> {
    let r = rows(x);
    let n = r.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&r[i], &r[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += sigma2;
    }
    k
}

pub(crate) fn factor(k: DMatrix<f64>, sigma2: f64) -> Result<Cholesky<f64, Dyn>, GpeError> {
    let n = k.nrows();
    let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    let offdiag_max = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| k[(i, j)].abs())
        .fold(0.0, f64::max);
    Cholesky::new(k).ok_or_else(|| GpeError::NotPositiveDefinite {
        n,
        sigma2,
        diag_min: diag.iter().copied().fold(f64::INFINITY, f64::min),
        offdiag_max,
    })
}

fn check_data(x: &DMatrix<f64>, y: &DVector<f64>, basis: BasisSpec, theta: &Theta) -> Result<(), GpeError> {
    if x.nrows() != y.len() {
        return Err(GpeError::Dimension(format!("{} input rows but {} outputs", x.nrows(), y.len())));
    }
    if theta.lengthscales.len() != x.ncols() {
        return Err(GpeError::Dimension(format!(
            "{} length scales for {} input columns",
            theta.lengthscales.len(),
            x.ncols()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(GpeError::Dimension("training data contain non-finite values".into()));
    }
    let width = basis.width(x.ncols());
    if x.nrows() < width {
        return Err(GpeError::RankDeficient { n: x.nrows(), width });
    }
    Ok(())
}

/// Log marginal likelihood of `y` under the GP prior with hyperparameters `eta`.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: BasisSpec,
    family: KernelFamily,
    eta: &Hyperparameters,
) -> Result<f64, GpeError> {
    let kernel = KernelSpec { family, theta: eta.theta.clone() };
    kernel.validate().map_err(GpeError::Hyperparameter)?;
    if x.nrows() != y.len() || eta.theta.lengthscales.len() != x.ncols() {
        return Err(GpeError::Dimension("inconsistent training data and hyperparameters".into()));
    }
    let h = basis.matrix(x);
    if eta.beta.len() != h.ncols() {
        return Err(GpeError::Dimension(format!("beta has {} entries, basis width is {}", eta.beta.len(), h.ncols())));
    }
    let chol = factor(covariance_matrix(x, &kernel, eta.sigma2), eta.sigma2)?;
    let resid = y - &h * DVector::from_column_slice(&eta.beta);
    Ok(ll_from_parts(&chol, &resid))
}

fn ll_from_parts(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let alpha = chol.solve(resid);
    let n = resid.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    -0.5 * resid.dot(&alpha) - 0.5 * n * LN_2PI - 0.5 * log_det
}

// Generalized least squares through QR of the whitened basis L^-1 H, which
// avoids squaring its condition number in the normal equations.
fn beta_from_chol(chol: &Cholesky<f64, Dyn>, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, GpeError> {
    let (n, width) = h.shape();
    let l = chol.l();
    let hw = l.solve_lower_triangular(h).expect("factor has a positive diagonal");
    let yw = l.solve_lower_triangular(y).expect("factor has a positive diagonal");
    let qr = hw.qr();
    let r = qr.r();
    let d = r.diagonal();
    let dmax = d.amax();
    if d.len() < width || d.iter().any(|v| v.abs() <= 1e-12 * dmax) || !(dmax > 0.0) {
        return Err(GpeError::RankDeficient { n, width });
    }
    let qty = qr.q().transpose() * yw;
    Ok(r.solve_upper_triangular(&qty).expect("nonzero diagonal checked above"))
}

/// Weighted least-squares trend coefficients for fixed kernel and nugget.
pub fn beta_profile(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: BasisSpec,
    family: KernelFamily,
    theta: &Theta,
    sigma2: f64,
) -> Result<DVector<f64>, GpeError> {
    check_data(x, y, basis, theta)?;
    let kernel = KernelSpec { family, theta: theta.clone() };
    kernel.validate().map_err(GpeError::Hyperparameter)?;
    let chol = factor(covariance_matrix(x, &kernel, sigma2), sigma2)?;
    beta_from_chol(&chol, &basis.matrix(x), y)
}

/// Everything derived from one (theta, sigma2) evaluation with beta profiled out.
pub(crate) struct Profile {
    pub chol: Cholesky<f64, Dyn>,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub ll: f64,
}

pub(crate) fn profile(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<Profile, GpeError> {
    let chol = factor(covariance_matrix(x, kernel, sigma2), sigma2)?;
    let beta = beta_from_chol(&chol, h, y)?;
    let resid = y - h * &beta;
    let ll = ll_from_parts(&chol, &resid);
    let alpha = chol.solve(&resid);
    Ok(Profile { chol, beta, alpha, ll })
}

/// Profiled log-likelihood and its gradient with respect to
/// `[ln tau, ln l_1..ln l_p, sigma2]`. Beta sits at its optimum, so only
/// the explicit dependence on the covariance contributes.
pub(crate) fn profile_with_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<(f64, Vec<f64>), GpeError> {
    let pr = profile(x, y, h, kernel, sigma2)?;
    let r = rows(x);
    let n = r.len();
    let m = 1 + x.ncols();
    let mut dk: Vec<DMatrix<f64>> = (0..m).map(|_| DMatrix::zeros(n, n)).collect();
    for i in 0..n {
        for j in 0..=i {
            let (_, g) = kernel.eval_with_grad(&r[i], &r[j]);
            for (d, gd) in g.into_iter().enumerate() {
                dk[d][(i, j)] = gd;
                dk[d][(j, i)] = gd;
            }
        }
    }
    let mut grad = Vec::with_capacity(m + 1);
    for d in dk {
        let quad = pr.alpha.dot(&(&d * &pr.alpha));
        let trace = pr.chol.solve(&d).trace();
        grad.push(0.5 * quad - 0.5 * trace);
    }
    // tr(K^-1) = ||L^-1||_F^2
    let trace_inv = pr
        .chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("factor has a positive diagonal")
        .norm_squared();
    grad.push(0.5 * pr.alpha.norm_squared() - 0.5 * trace_inv);
    Ok((pr.ll, grad))
}
