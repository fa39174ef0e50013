use serde::{Deserialize, Serialize};

use super::marginal::{norm_cdf, norm_inv, norm_pdf};
use super::UncertaintyError;
use crate::quadrature::integrate;

/// Smallest distance kept between a uniform argument and the interval ends.
pub const UNIFORM_CLAMP: f64 = 1e-12;

pub(crate) fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
}

fn check_open(what: &'static str, x: f64) -> Result<(), UncertaintyError> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(UncertaintyError::Domain { what, value: x })
    }
}

/// Bivariate copula family with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameter", rename_all = "lowercase")]
pub enum PairCopula {
    Independence,
    Gaussian(f64),
    Frank(f64),
    Gumbel(f64),
}

impl PairCopula {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let ok = match *self {
            PairCopula::Independence => true,
            PairCopula::Gaussian(rho) => rho > -1.0 && rho < 1.0,
            PairCopula::Frank(theta) => theta.is_finite() && theta != 0.0,
            PairCopula::Gumbel(theta) => theta.is_finite() && theta >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(UncertaintyError::Parameter(format!("parameter out of range for {self:?}")))
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            PairCopula::Independence => "independence",
            PairCopula::Gaussian(_) => "gaussian",
            PairCopula::Frank(_) => "frank",
            PairCopula::Gumbel(_) => "gumbel",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            PairCopula::Independence => None,
            PairCopula::Gaussian(p) | PairCopula::Frank(p) | PairCopula::Gumbel(p) => Some(p),
        }
    }

    /// Builds a copula from a family name and an optional parameter.
    pub fn from_parts(family: &str, parameter: Option<f64>) -> Result<Self, UncertaintyError> {
        let need = |p: Option<f64>| {
            p.ok_or_else(|| UncertaintyError::Parameter(format!("family {family} needs a parameter")))
        };
        let c = match family.to_ascii_lowercase().as_str() {
            "independence" | "indep" => PairCopula::Independence,
            "gaussian" | "normal" => PairCopula::Gaussian(need(parameter)?),
            "frank" => PairCopula::Frank(need(parameter)?),
            "gumbel" => PairCopula::Gumbel(need(parameter)?),
            other => return Err(UncertaintyError::Parameter(format!("unknown copula family '{other}'"))),
        };
        c.validate()?;
        Ok(c)
    }

    /// Copula cdf C(u, v).
    pub fn cdf(&self, u: f64, v: f64) -> Result<f64, UncertaintyError> {
        check_open("copula argument u", u)?;
        check_open("copula argument v", v)?;
        Ok(self.cdf_raw(u, v))
    }

    /// Copula density c(u, v).
    pub fn density(&self, u: f64, v: f64) -> Result<f64, UncertaintyError> {
        check_open("copula argument u", u)?;
        check_open("copula argument v", v)?;
        Ok(self.log_density_raw(u, v).exp())
    }

    /// Conditional cdf h(u | v) = dC(u, v)/dv.
    pub fn h(&self, u: f64, v: f64) -> Result<f64, UncertaintyError> {
        check_open("h-function argument u", u)?;
        check_open("h-function conditioning value v", v)?;
        Ok(self.h_raw(u, v))
    }

    /// Inverse of `h` in its first argument.
    pub fn h_inv(&self, w: f64, v: f64) -> Result<f64, UncertaintyError> {
        check_open("h-inverse level w", w)?;
        check_open("h-inverse conditioning value v", v)?;
        self.h_inv_raw(w, v)
    }

    /// Kendall's tau implied by the family and parameter.
    pub fn kendall_tau(&self) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian(rho) => 2.0 * rho.asin() / std::f64::consts::PI,
            PairCopula::Gumbel(theta) => 1.0 - 1.0 / theta,
            PairCopula::Frank(theta) => 1.0 - 4.0 / theta * (1.0 - debye1(theta)),
        }
    }

    pub(crate) fn cdf_raw(&self, u: f64, v: f64) -> f64 {
        match *self {
            PairCopula::Independence => u * v,
            PairCopula::Gaussian(rho) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                // C(u, v) = integral over z < Phi^-1(v) of h(u | Phi(z)) phi(z)
                let a = norm_inv(u);
                let b = norm_inv(v);
                let s = (1.0 - rho * rho).sqrt();
                let lo = (-9.0f64).min(b - 1.0);
                integrate(|z| norm_cdf((a - rho * z) / s) * norm_pdf(z), lo, b, 64, 16)
            }
            PairCopula::Frank(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                let a = (-theta * u).exp_m1();
                let b = (-theta * v).exp_m1();
                let d = (-theta).exp_m1();
                -(a * b / d).ln_1p() / theta
            }
            PairCopula::Gumbel(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                let (x, y) = (-u.ln(), -v.ln());
                (-(log_sum_pow(x, y, theta) / theta).exp()).exp()
            }
        }
    }

    pub(crate) fn log_density_raw(&self, u: f64, v: f64) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian(rho) => {
                let (x, y) = (norm_inv(clamp_unit(u)), norm_inv(clamp_unit(v)));
                let s2 = 1.0 - rho * rho;
                -0.5 * s2.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * s2)
            }
            PairCopula::Frank(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                let a = (-theta * u).exp_m1();
                let b = (-theta * v).exp_m1();
                let d = (-theta).exp_m1();
                (-theta * d).ln() - theta * (u + v) - 2.0 * (d + a * b).abs().ln()
            }
            PairCopula::Gumbel(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                let (x, y) = (-u.ln(), -v.ln());
                let ls = log_sum_pow(x, y, theta);
                let big_a = (ls / theta).exp();
                -big_a + x + y + (theta - 1.0) * (x.ln() + y.ln()) + (1.0 / theta - 2.0) * ls
                    + (big_a + theta - 1.0).ln()
            }
        }
    }

    pub(crate) fn h_raw(&self, u: f64, v: f64) -> f64 {
        match *self {
            PairCopula::Independence => u,
            PairCopula::Gaussian(rho) => {
                let (x, y) = (norm_inv(clamp_unit(u)), norm_inv(clamp_unit(v)));
                clamp_unit(norm_cdf((x - rho * y) / (1.0 - rho * rho).sqrt()))
            }
            PairCopula::Frank(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                let a = (-theta * u).exp_m1();
                let b = (-theta * v).exp_m1();
                let d = (-theta).exp_m1();
                clamp_unit((b + 1.0) * a / (d + a * b))
            }
            PairCopula::Gumbel(theta) => {
                let (u, v) = (clamp_unit(u), clamp_unit(v));
                clamp_unit(gumbel_log_h(u, v, theta).exp())
            }
        }
    }

    pub(crate) fn h_inv_raw(&self, w: f64, v: f64) -> Result<f64, UncertaintyError> {
        Ok(match *self {
            PairCopula::Independence => w,
            PairCopula::Gaussian(rho) => {
                let (x, y) = (norm_inv(clamp_unit(w)), norm_inv(clamp_unit(v)));
                clamp_unit(norm_cdf(x * (1.0 - rho * rho).sqrt() + rho * y))
            }
            PairCopula::Frank(theta) => {
                let (w, v) = (clamp_unit(w), clamp_unit(v));
                let b = (-theta * v).exp_m1();
                let d = (-theta).exp_m1();
                let a = w * d / (1.0 + b * (1.0 - w));
                clamp_unit(-a.ln_1p() / theta)
            }
            PairCopula::Gumbel(theta) => gumbel_h_inv(clamp_unit(w), clamp_unit(v), theta)?,
        })
    }
}

/// ln(x^theta + y^theta) computed without overflow.
fn log_sum_pow(x: f64, y: f64, theta: f64) -> f64 {
    let (a, b) = (theta * x.ln(), theta * y.ln());
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn gumbel_log_h(u: f64, v: f64, theta: f64) -> f64 {
    let (x, y) = (-u.ln(), -v.ln());
    let ls = log_sum_pow(x, y, theta);
    -(ls / theta).exp() + (1.0 - theta) / theta * ls + (theta - 1.0) * y.ln() + y
}

const GUMBEL_TOL: f64 = 1e-10;
const GUMBEL_MAX_ITER: usize = 200;

/// Safeguarded Newton on u for h(u | v) = w, keeping a bisection bracket.
fn gumbel_h_inv(w: f64, v: f64, theta: f64) -> Result<f64, UncertaintyError> {
    if theta == 1.0 {
        return Ok(w);
    }
    let h = |u: f64| gumbel_log_h(u, v, theta).exp();
    let (mut lo, mut hi) = (UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    if h(lo) >= w {
        return Ok(lo);
    }
    if h(hi) <= w {
        return Ok(hi);
    }
    let mut u = w;
    for _ in 0..GUMBEL_MAX_ITER {
        let f = h(u) - w;
        if f.abs() < GUMBEL_TOL * 1e-3 {
            return Ok(u);
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        if hi - lo < 1e-15 * hi.max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
        let slope = PairCopula::Gumbel(theta).log_density_raw(u, v).exp();
        let newton = u - f / slope;
        u = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let f = h(u) - w;
    if f.abs() < GUMBEL_TOL {
        Ok(u)
    } else {
        Err(UncertaintyError::HInvNonConvergence { w, v, theta })
    }
}

/// First Debye function D1(x) = (1/x) * integral_0^x t / (e^t - 1) dt.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let f = |t: f64| if t.abs() < 1e-10 { 1.0 - 0.5 * t } else { t / t.exp_m1() };
    let panels = ((x.abs() / 2.0).ceil() as usize).clamp(4, 400);
    integrate(f, 0.0, x, panels, 16) / x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    fn families() -> Vec<PairCopula> {
        vec![
            PairCopula::Independence,
            PairCopula::Gaussian(0.5),
            PairCopula::Gaussian(-0.8),
            PairCopula::Frank(5.736),
            PairCopula::Frank(-3.0),
            PairCopula::Frank(0.5),
            PairCopula::Gumbel(1.0),
            PairCopula::Gumbel(1.5),
            PairCopula::Gumbel(4.0),
        ]
    }

    // tensor Gauss-Legendre on the unit square, split into panels so the
    // corner singularities of some densities are resolved
    fn square_integral(f: impl Fn(f64, f64) -> f64) -> f64 {
        let (x, w) = gauss_legendre(24);
        let edges = [0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.5, 0.8, 0.95, 0.99, 0.999, 0.9999, 1.0];
        let mut nodes = Vec::new();
        for pair in edges.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push((a + 0.5 * (b - a) * (xi + 1.0), 0.5 * (b - a) * wi));
            }
        }
        let mut s = 0.0;
        for &(u, wu) in &nodes {
            for &(v, wv) in &nodes {
                s += wu * wv * f(u, v);
            }
        }
        s
    }

    #[test]
    fn independence_and_zero_correlation() {
        for c in [PairCopula::Independence, PairCopula::Gaussian(0.0)] {
            for &(u, v) in &[(0.1, 0.7), (0.5, 0.5), (0.93, 0.02)] {
                assert!((c.density(u, v).unwrap() - 1.0).abs() < 1e-14);
                assert!((c.h(u, v).unwrap() - u).abs() < 1e-14);
            }
        }
        assert_eq!(PairCopula::Independence.h_inv(0.3, 0.9).unwrap(), 0.3);
    }

    #[test]
    fn frank_density_integrates_to_one() {
        let c = PairCopula::Frank(5.0);
        let total = square_integral(|u, v| c.density(u, v).unwrap());
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn h_matches_finite_difference_of_cdf() {
        for c in [PairCopula::Frank(3.0), PairCopula::Gumbel(2.0), PairCopula::Gaussian(0.6)] {
            for &(u, v) in &[(0.2, 0.3), (0.5, 0.5), (0.8, 0.1), (0.9, 0.95)] {
                let eps = 1e-5;
                let fd = (c.cdf(u, v + eps).unwrap() - c.cdf(u, v - eps).unwrap()) / (2.0 * eps);
                assert!((fd - c.h(u, v).unwrap()).abs() < 1e-6, "{c:?} {u} {v}");
            }
        }
    }

    #[test]
    fn density_matches_mixed_difference_of_cdf() {
        for c in [PairCopula::Frank(-4.0), PairCopula::Gumbel(1.7), PairCopula::Gaussian(0.4)] {
            let (u, v) = (0.35, 0.6);
            let e = 1e-4;
            let mixed = (c.cdf(u + e, v + e).unwrap() - c.cdf(u + e, v - e).unwrap()
                - c.cdf(u - e, v + e).unwrap()
                + c.cdf(u - e, v - e).unwrap())
                / (4.0 * e * e);
            let d = c.density(u, v).unwrap();
            assert!((mixed - d).abs() < 1e-5 * d.max(1.0), "{c:?} {mixed} {d}");
        }
    }

    #[test]
    fn gaussian_closed_forms() {
        let rho: f64 = 0.7;
        let c = PairCopula::Gaussian(rho);
        for &(w, v) in &[(0.1, 0.2), (0.5, 0.9), (0.99, 0.01), (0.3, 0.5)] {
            let want = norm_cdf(norm_inv(w) * (1.0 - rho * rho).sqrt() + rho * norm_inv(v));
            let u = c.h_inv(w, v).unwrap();
            assert!((u - want).abs() < 1e-15);
            assert!((c.h(u, v).unwrap() - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gumbel_round_trip_grid() {
        let c = PairCopula::Gumbel(2.0);
        for i in 1..40 {
            for j in 1..40 {
                let (w, v) = (i as f64 / 40.0, j as f64 / 40.0);
                let u = c.h_inv(w, v).unwrap();
                assert!((c.h(u, v).unwrap() - w).abs() < 1e-9, "w={w} v={v}");
            }
        }
        // Far in the tails one ulp of u moves h by density * ulp, which is the
        // best any inversion can resolve.
        for &(w, v) in &[(1e-9, 0.5), (1.0 - 1e-9, 0.5), (0.5, 1e-9), (0.5, 1.0 - 1e-9)] {
            let u = c.h_inv(w, v).unwrap();
            let back = c.h(u, v).unwrap();
            let resolution = 4.0 * c.density(u, v).unwrap() * f64::EPSILON;
            assert!((back - w).abs() < 1e-9 + resolution, "w={w} v={v} u={u} back={back}");
        }
    }

    #[test]
    fn boundary_conditions() {
        let (lo, hi) = (1e-10, 1.0 - 1e-10);
        for c in families() {
            for &u in &[0.05, 0.3, 0.5, 0.77, 0.99] {
                assert!(c.cdf(u, lo).unwrap().abs() < 1e-10 + lo, "{c:?}");
                assert!(c.cdf(lo, u).unwrap().abs() < 1e-10 + lo, "{c:?}");
                assert!((c.cdf(u, hi).unwrap() - u).abs() < 1e-10 + lo, "{c:?}");
                assert!((c.cdf(hi, u).unwrap() - u).abs() < 1e-10 + lo, "{c:?}");
            }
        }
    }

    #[test]
    fn tau_values() {
        assert_eq!(PairCopula::Gumbel(1.0).kendall_tau(), 0.0);
        assert!((PairCopula::Gaussian(0.5).kendall_tau() - 1.0 / 3.0).abs() < 1e-15);
        assert!(PairCopula::Gaussian(1.0 - 1e-12).kendall_tau() > 0.999);
        assert!((PairCopula::Frank(5.736).kendall_tau() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn frank_tau_matches_double_integral() {
        // tau = 1 - 4 * integral of h(u|v) * h(v|u) over the unit square
        for theta in [5.736, -2.0, 0.8, 12.0] {
            let c = PairCopula::Frank(theta);
            let s = square_integral(|u, v| c.h(u, v).unwrap() * c.h(v, u).unwrap());
            let tau = 1.0 - 4.0 * s;
            assert!((tau - c.kendall_tau()).abs() < 1e-8, "theta={theta} {tau}");
        }
    }

    #[test]
    fn debye_known_values() {
        assert!((debye1(1.0) - 0.777504634112248).abs() < 1e-13);
        // D1(-x) = D1(x) + x/2
        assert!((debye1(-2.0) - (debye1(2.0) + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn domain_and_parameter_errors() {
        let c = PairCopula::Frank(2.0);
        assert!(c.density(0.0, 0.5).is_err());
        assert!(c.h(0.5, 1.0).is_err());
        assert!(c.h_inv(1.2, 0.5).is_err());
        assert!(PairCopula::Gaussian(1.0).validate().is_err());
        assert!(PairCopula::Frank(0.0).validate().is_err());
        assert!(PairCopula::Gumbel(0.9).validate().is_err());
        assert!(PairCopula::from_parts("clayton", Some(1.0)).is_err());
        assert!(PairCopula::from_parts("frank", None).is_err());
        assert_eq!(PairCopula::from_parts("Gumbel", Some(1.5)).unwrap(), PairCopula::Gumbel(1.5));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_copula() -> impl Strategy<Value = PairCopula> {
            prop_oneof![
                Just(PairCopula::Independence),
                (-0.95f64..0.95).prop_map(PairCopula::Gaussian),
                (-15.0f64..15.0).prop_filter("nonzero", |t| t.abs() > 1e-3).prop_map(PairCopula::Frank),
                (1.0f64..8.0).prop_map(PairCopula::Gumbel),
            ]
        }

        proptest! {
            #[test]
            fn h_is_monotone_and_in_range(c in any_copula(), v in 0.001f64..0.999, u1 in 0.001f64..0.999, u2 in 0.001f64..0.999) {
                let (a, b) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
                let (ha, hb) = (c.h(a, v).unwrap(), c.h(b, v).unwrap());
                prop_assert!(ha > 0.0 && ha < 1.0);
                prop_assert!(ha <= hb + 1e-14);
            }

            #[test]
            fn h_inverse_round_trips(c in any_copula(), w in 0.0005f64..0.9995, v in 0.0005f64..0.9995) {
                let u = c.h_inv(w, v).unwrap();
                prop_assert!((c.h(u, v).unwrap() - w).abs() < 1e-9);
            }

            #[test]
            fn density_is_nonnegative(c in any_copula(), u in 0.0001f64..0.9999, v in 0.0001f64..0.9999) {
                let d = c.density(u, v).unwrap();
                prop_assert!(d >= 0.0 && d.is_finite());
            }
        }
    }
}
