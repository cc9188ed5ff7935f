//! Log-log fits of `|u|` against boundary distance.

use serde::Serialize;

use super::{GridFunction, RadialSolution};
use crate::error::{Error, Result};
use crate::geometry::normal_ray_samples;

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub lambda_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub predicted: f64,
    pub abs_gap: f64,
    pub depths: usize,
}

/// `count` depths spaced geometrically over `[d_min, d_max]`.
pub fn geometric_depths(d_min: f64, d_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(d_min > 0.0 && d_max > d_min && d_max.is_finite()) {
        return Err(Error::OutOfRange(format!("fit window ({d_min}, {d_max}) is not increasing and positive")));
    }
    if count < 8 {
        return Err(Error::OutOfRange(format!("need at least 8 depths, got {count}")));
    }
    let ratio = (d_max / d_min).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| d_min * (ratio * i as f64).exp()).collect())
}

/// Least-squares slope of `ln|u|` against `ln d` for samples `(d, u)`.
pub fn fit_power_law(samples: &[(f64, f64)], predicted: f64) -> Result<ExponentFit> {
    if samples.len() < 8 {
        return Err(Error::OutOfRange(format!("need at least 8 samples, got {}", samples.len())));
    }
    let floor = 100.0 * f64::EPSILON;
    let mut pts = Vec::with_capacity(samples.len());
    for &(d, u) in samples {
        if !(d > 0.0) {
            return Err(Error::OutOfRange(format!("depth {d} must be positive")));
        }
        if !(u.abs() >= floor) {
            return Err(Error::WindowTooDeep { depth: d, value: u.abs() });
        }
        pts.push((d.ln(), u.abs().ln()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.0), b.max(s.0)));
    Ok(ExponentFit {
        lambda_hat: slope,
        intercept,
        r_squared,
        window: (lo, hi),
        predicted,
        abs_gap: (slope - predicted).abs(),
        depths: samples.len(),
    })
}

/// Fit along the inward normal ray at the boundary point `x0`.
pub fn fit_boundary_exponent(
    u: &GridFunction,
    x0: &[f64],
    window: (f64, f64),
    count: usize,
    predicted: f64,
) -> Result<ExponentFit> {
    let depths = geometric_depths(window.0, window.1, count)?;
    let points = normal_ray_samples(&u.domain.kind, x0, &depths)?;
    let samples: Vec<(f64, f64)> = depths.iter().zip(&points).map(|(&d, p)| (d, u.value_at(p))).collect();
    fit_power_law(&samples, predicted)
}

/// Fit of a radial profile in the distance `R - r`.
pub fn fit_radial_exponent(sol: &RadialSolution, window: (f64, f64), count: usize, predicted: f64) -> Result<ExponentFit> {
    if window.1 >= sol.radius {
        return Err(Error::OutOfRange("fit window exceeds the radius".into()));
    }
    let depths = geometric_depths(window.0, window.1, count)?;
    let samples: Vec<(f64, f64)> = depths.iter().map(|&d| (d, sol.value_at(sol.radius - d))).collect();
    fit_power_law(&samples, predicted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(c: f64, lambda: f64) -> Vec<(f64, f64)> {
        geometric_depths(1e-3, 0.1, 12).unwrap().into_iter().map(|d| (d, -c * d.powf(lambda))).collect()
    }

    #[test]
    fn exact_power_laws() {
        let f = fit_power_law(&synthetic(2.0, 0.5), 0.5).unwrap();
        assert!((f.lambda_hat - 0.5).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.intercept - 2f64.ln()).abs() < 1e-12);
        for c in [1e-3, 0.7, 40.0] {
            let f = fit_power_law(&synthetic(c, 0.37), 0.5).unwrap();
            assert!((f.lambda_hat - 0.37).abs() < 1e-12);
            assert!((f.abs_gap - 0.13).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_rescaling_keeps_slope() {
        let s = synthetic(1.3, 0.61);
        let scaled: Vec<(f64, f64)> = s.iter().map(|&(d, u)| (7.0 * d, u)).collect();
        let a = fit_power_law(&s, 0.0).unwrap();
        let b = fit_power_law(&scaled, 0.0).unwrap();
        assert!((a.lambda_hat - b.lambda_hat).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_windows() {
        assert!(geometric_depths(1e-3, 0.1, 7).is_err());
        assert!(geometric_depths(0.1, 1e-3, 12).is_err());
        let mut s = synthetic(1.0, 0.5);
        s[0].1 = 1e-20;
        assert!(matches!(fit_power_law(&s, 0.5), Err(Error::WindowTooDeep { .. })));
    }
}
