use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("statistics need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("samples contain non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Mean, unbiased standard deviation and the 5/50/95% quantiles.
pub fn summary_stats(samples: &[f64]) -> Result<SummaryStats, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let std = if s.len() > 1 {
        (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(SummaryStats {
        mean,
        std,
        q05: quantile_sorted(&s, 0.05),
        q50: quantile_sorted(&s, 0.50),
        q95: quantile_sorted(&s, 0.95),
    })
}

pub const KDE_GRID_POINTS: usize = 512;

/// Gaussian kernel density estimate on a 512-point grid spanning
/// [min - 3h, max + 3h]. Bandwidth defaults to 1.06 * sd * n^(-1/5).
///
/// Samples without spread return a unit-area triangle of half-width
/// `max(1e-9 * |v|, 1e-12)` centred on the common value, so the result
/// still integrates to one under the trapezoid rule.
pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<Vec<(f64, f64)>, StatsError> {
    if samples.len() < 30 {
        return Err(StatsError::TooFew { needed: 30, got: samples.len() });
    }
    let st = summary_stats(samples)?;
    let n = samples.len() as f64;
    let h = bandwidth.unwrap_or(1.06 * st.std * n.powf(-0.2));
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(h > 0.0) || hi - lo <= 0.0 {
        // All samples equal: a unit-mass triangle one nano-width wide.
        let v = lo;
        let w = (1e-9 * v.abs()).max(1e-12);
        let (left, right) = (v - w, v + w);
        return Ok(vec![(left, 0.0), (v, 2.0 / (right - left)), (right, 0.0)]);
    }
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (KDE_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..KDE_GRID_POINTS)
        .into_par_iter()
        .map(|k| {
            let x = a + k as f64 * step;
            let d: f64 = samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect())
}

/// Trapezoid integral of a tabulated density.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let (sa, sb) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous cdf.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let s = sorted(samples)?;
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}
