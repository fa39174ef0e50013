use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Trend basis of the prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    Constant,
    Linear,
    PureQuadratic,
}

impl BasisSpec {
    pub fn width(&self, p: usize) -> usize {
        match self {
            BasisSpec::Constant => 1,
            BasisSpec::Linear => 1 + p,
            BasisSpec::PureQuadratic => 1 + 2 * p,
        }
    }

    /// `[1]`, `[1, x]` or `[1, x, x^2]` (squares taken element-wise).
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.width(x.len()));
        h.push(1.0);
        if matches!(self, BasisSpec::Linear | BasisSpec::PureQuadratic) {
            h.extend_from_slice(x);
        }
        if matches!(self, BasisSpec::PureQuadratic) {
            h.extend(x.iter().map(|v| v * v));
        }
        h
    }

    /// Basis matrix H with one row per row of `x`.
    pub fn matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = x.shape();
        let w = self.width(p);
        let mut h = DMatrix::zeros(n, w);
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            for (j, v) in self.row(&xi).into_iter().enumerate() {
                h[(i, j)] = v;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Exponential,
    RationalQuadratic {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Matern32,
}

fn default_alpha() -> f64 {
    2.0
}

impl KernelFamily {
    pub fn rational_quadratic() -> Self {
        KernelFamily::RationalQuadratic { alpha: default_alpha() }
    }
}

/// Kernel amplitude and per-dimension length scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub tau: f64,
    pub lengthscales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub theta: Theta,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, tau: f64, lengthscales: Vec<f64>) -> Self {
        KernelSpec { family, theta: Theta { tau, lengthscales } }
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.theta.tau) {
            return Err(format!("kernel amplitude must be positive, got {}", self.theta.tau));
        }
        if let Some(l) = self.theta.lengthscales.iter().find(|l| !pos(**l)) {
            return Err(format!("length scales must be positive, got {l}"));
        }
        if let KernelFamily::RationalQuadratic { alpha } = self.family {
            if !pos(alpha) {
                return Err(format!("rational quadratic alpha must be positive, got {alpha}"));
            }
        }
        Ok(())
    }

    pub fn eval(&self, xi: &[f64], xj: &[f64]) -> f64 {
        let t2 = self.theta.tau * self.theta.tau;
        let ls = &self.theta.lengthscales;
        let sum = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
            xi.iter().zip(xj).zip(ls).map(|((a, b), l)| f((a - b).abs(), *l)).sum()
        };
        match self.family {
            KernelFamily::SquaredExponential => t2 * (-sum(&|r, l| r * r / (2.0 * l * l))).exp(),
            KernelFamily::Exponential => t2 * (-sum(&|r, l| r / l)).exp(),
            KernelFamily::RationalQuadratic { alpha } => {
                t2 * (1.0 + sum(&|r, l| r * r / (2.0 * alpha * l * l))).powf(-alpha)
            }
            KernelFamily::Matern32 => {
                let s = sum(&|r, l| SQRT_3 * r / l);
                t2 * (1.0 + s) * (-s).exp()
            }
        }
    }

    /// Kernel value and its derivatives with respect to
    /// `[ln tau, ln l_1, ..., ln l_p]`.
    pub fn eval_with_grad(&self, xi: &[f64], xj: &[f64]) -> (f64, Vec<f64>) {
        let t2 = self.theta.tau * self.theta.tau;
        let ls = &self.theta.lengthscales;
        let r: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| (a - b).abs()).collect();
        let mut g = vec![0.0; 1 + ls.len()];
        let k = match self.family {
            KernelFamily::SquaredExponential => {
                let k = t2 * (-r.iter().zip(ls).map(|(r, l)| r * r / (2.0 * l * l)).sum::<f64>()).exp();
                for (d, (r, l)) in r.iter().zip(ls).enumerate() {
                    g[d + 1] = k * r * r / (l * l);
                }
                k
            }
            KernelFamily::Exponential => {
                let k = t2 * (-r.iter().zip(ls).map(|(r, l)| r / l).sum::<f64>()).exp();
                for (d, (r, l)) in r.iter().zip(ls).enumerate() {
                    g[d + 1] = k * r / l;
                }
                k
            }
            KernelFamily::RationalQuadratic { alpha } => {
                let q: f64 = r.iter().zip(ls).map(|(r, l)| r * r / (2.0 * alpha * l * l)).sum();
                let base = 1.0 + q;
                let k = t2 * base.powf(-alpha);
                let outer = t2 * base.powf(-alpha - 1.0);
                for (d, (r, l)) in r.iter().zip(ls).enumerate() {
                    g[d + 1] = outer * r * r / (l * l);
                }
                k
            }
            KernelFamily::Matern32 => {
                let s: f64 = r.iter().zip(ls).map(|(r, l)| SQRT_3 * r / l).sum();
                let e = (-s).exp();
                let k = t2 * (1.0 + s) * e;
                for (d, (r, l)) in r.iter().zip(ls).enumerate() {
                    g[d + 1] = t2 * s * e * SQRT_3 * r / l;
                }
                k
            }
        };
        g[0] = 2.0 * k;
        (k, g)
    }

    /// Covariance matrix between the rows of `a` and the rows of `b`.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra = rows(a);
        let rb = rows(b);
        DMatrix::from_fn(ra.len(), rb.len(), |i, j| self.eval(&ra[i], &rb[j]))
    }

    /// Covariance vector between one point and the rows of `a`.
    pub fn column(&self, a: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
        let ra = rows(a);
        DVector::from_iterator(ra.len(), ra.iter().map(|r| self.eval(r, x)))
    }
}

pub(crate) fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}
