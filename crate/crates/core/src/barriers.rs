//! Explicit barriers: the anisotropic power barrier, the ellipsoid quadratic
//! barrier and the rescaled radial lower barrier, with sampled certification.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponents::{lambda_start_downward, theta, ExponentContext};
use crate::geometry::{sphere_directions, AnisotropyProfile};
use crate::solver::radial::{radial_oracle, RadialOptions, RadialRhs};

/// Lower cut-off of the sampled normal coordinate, as a multiple of epsilon.
pub const DEFAULT_COLLAR: f64 = 1e-4;

const BATCH: usize = 1024;

/// `W = -sum_i [(x_n/eps)^{2/a_i} - x_i^2]^{1/b_i}` with `b_i = 2/(a_i * exponent)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerBarrierSpec {
    pub profile: AnisotropyProfile,
    pub exponent: f64,
    pub epsilon: f64,
    pub b: Vec<f64>,
    /// Translation entering the drift term `(x + y0).DW - W`.
    pub y0: Vec<f64>,
}

impl PowerBarrierSpec {
    pub fn new(profile: AnisotropyProfile, exponent: f64, epsilon: f64, y0: Option<Vec<f64>>) -> Result<Self> {
        let n = profile.dim();
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(Error::OutOfRange(format!("barrier exponent {exponent} must lie in (0, 1)")));
        }
        if let Some(i) = (0..n - 1).find(|&i| profile.is_flat(i)) {
            return Err(Error::InvalidProfile(format!(
                "direction {i} is flat; the power barrier needs finite a_i"
            )));
        }
        if !(epsilon > 0.0) || epsilon >= profile.eta_min() {
            return Err(Error::OutOfRange(format!(
                "epsilon {epsilon} must lie in (0, min eta = {})",
                profile.eta_min()
            )));
        }
        let y0 = y0.unwrap_or_else(|| vec![0.0; n]);
        if y0.len() != n {
            return Err(Error::OutOfRange(format!("shift has {} entries, expected {n}", y0.len())));
        }
        let b = profile.a.iter().map(|a| 2.0 / (a * exponent)).collect();
        Ok(Self {
            profile,
            exponent,
            epsilon,
            b,
            y0,
        })
    }

    pub fn dim(&self) -> usize {
        self.profile.dim()
    }

    /// `delta(eps) = max_i (eps/eta_i)^{2/a_i}`.
    pub fn delta(&self) -> f64 {
        delta(&self.profile, self.epsilon)
    }

    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }
}

fn delta(profile: &AnisotropyProfile, eps: f64) -> f64 {
    profile
        .a
        .iter()
        .zip(&profile.eta)
        .map(|(a, e)| (eps / e).powf(2.0 / a))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct BarrierJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub delta: f64,
    /// `xi_i = |W_i| (x_n/eps)^{-exponent}`.
    pub xi: Vec<f64>,
}

/// Barrier value on the closure of the admissible region (zero on its boundary).
pub fn power_barrier_value(spec: &PowerBarrierSpec, x: &[f64]) -> Result<f64> {
    let n = spec.dim();
    if x.len() != n || !(x[n - 1] >= 0.0) {
        return Err(Error::BarrierDomain {
            point: x.to_vec(),
            reason: "requires a point with x_n >= 0".into(),
        });
    }
    let ratio = x[n - 1] / spec.epsilon;
    let mut w = 0.0;
    for i in 0..n - 1 {
        let g = ratio.powf(2.0 / spec.profile.a[i]);
        let s = g - x[i] * x[i];
        if s < -1e-14 * g.max(f64::MIN_POSITIVE) {
            return Err(Error::BarrierDomain {
                point: x.to_vec(),
                reason: format!("(x_n/eps)^(2/a_{i}) < x_{i}^2"),
            });
        }
        w -= s.max(0.0).powf(1.0 / spec.b[i]);
    }
    Ok(w)
}

/// Value, gradient and Hessian of the power barrier from the closed forms.
pub fn power_barrier_jet(spec: &PowerBarrierSpec, x: &[f64]) -> Result<BarrierJet> {
    let n = spec.dim();
    if x.len() != n {
        return Err(Error::BarrierDomain {
            point: x.to_vec(),
            reason: format!("expected a point of dimension {n}"),
        });
    }
    let xn = x[n - 1];
    if !(xn > 0.0) {
        return Err(Error::BarrierDomain {
            point: x.to_vec(),
            reason: "requires x_n > 0".into(),
        });
    }
    let eps = spec.epsilon;
    let ratio = xn / eps;
    let mut value = 0.0;
    let mut gradient = vec![0.0; n];
    let mut hessian = DMatrix::zeros(n, n);
    let mut xi = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let a = spec.profile.a[i];
        let p = 1.0 / spec.b[i];
        let e = 2.0 / a;
        let g = ratio.powf(e);
        let s = g - x[i] * x[i];
        if !(s > 0.0) {
            return Err(Error::BarrierDomain {
                point: x.to_vec(),
                reason: format!("(x_n/eps)^(2/a_{i}) <= x_{i}^2"),
            });
        }
        let sp = s.powf(p);
        let sp1 = sp / s;
        let sp2 = sp1 / s;
        // d g / d x_n and its derivative
        let sigma = e * g / xn;
        let sigma1 = e * (e - 1.0) * g / (xn * xn);
        value -= sp;
        gradient[i] = 2.0 * p * x[i] * sp1;
        gradient[n - 1] -= p * sp1 * sigma;
        hessian[(i, i)] = 2.0 * p * sp1 - 4.0 * p * (p - 1.0) * x[i] * x[i] * sp2;
        let hin = 2.0 * p * (p - 1.0) * x[i] * sp2 * sigma;
        hessian[(i, n - 1)] = hin;
        hessian[(n - 1, i)] = hin;
        hessian[(n - 1, n - 1)] -= p * (p - 1.0) * sp2 * sigma * sigma + p * sp1 * sigma1;
        xi.push(sp / ratio.powf(spec.exponent));
    }
    Ok(BarrierJet {
        value,
        gradient,
        hessian,
        delta: spec.delta(),
        xi,
    })
}

/// Determinant of the arrow-structured Hessian by its Schur complement.
pub fn det_hessian(jet: &BarrierJet) -> Result<f64> {
    let h = &jet.hessian;
    let n = h.nrows();
    let mut det = 1.0;
    let mut schur = h[(n - 1, n - 1)];
    for i in 0..n - 1 {
        let d = h[(i, i)];
        if !(d > 0.0) {
            return Err(Error::NotConvex(format!("diagonal entry {i} is {d}")));
        }
        det *= d;
        schur -= h[(i, n - 1)] * h[(i, n - 1)] / d;
    }
    Ok(det * schur)
}

/// `H[W] = det D^2 W |W|^{n+k+2} ((x + y0).DW - W)^k`.
pub fn h_functional(spec: &PowerBarrierSpec, ctx: &ExponentContext, x: &[f64]) -> Result<f64> {
    let k = ctx.require_k()?;
    let jet = power_barrier_jet(spec, x)?;
    h_from_jet(spec, k, x, &jet)
}

fn h_from_jet(spec: &PowerBarrierSpec, k: f64, x: &[f64], jet: &BarrierJet) -> Result<f64> {
    let n = spec.dim() as f64;
    let det = det_hessian(jet)?;
    let mut h = det * jet.value.abs().powf(n + k + 2.0);
    if k != 0.0 {
        let drift: f64 = x
            .iter()
            .zip(&spec.y0)
            .zip(&jet.gradient)
            .map(|((xi, yi), g)| (xi + yi) * g)
            .sum::<f64>()
            - jet.value;
        if !(drift > 0.0) {
            return Err(Error::Assumption(format!("(x + y0).DW - W = {drift} is not positive at {x:?}")));
        }
        h *= drift.powf(k);
    }
    Ok(h)
}

/// Uniform draws for points of the model region, generated in fixed batches so
/// that serial and parallel runs agree bit for bit.
fn model_uniforms(profile: &AnisotropyProfile, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = profile.dim();
    let batches = count.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let len = BATCH.min(count - b * BATCH);
            let mut out = Vec::with_capacity(len);
            while out.len() < len {
                let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                // rejection step for the joint constraint sum eta_i |x_i|^{a_i} < x_n
                let lhs: f64 = (0..n - 1)
                    .map(|i| (2.0 * u[i] - 1.0).abs().powf(profile.a[i]))
                    .sum();
                if lhs < 1.0 {
                    out.push(u);
                }
            }
            out
        })
        .collect()
}

/// Map unit draws to `{ sum eta_i |x_i|^{a_i} < x_n <= diam, |x_i| <= diam }`,
/// with `x_n` log-uniform above `lo`.
fn map_uniform(profile: &AnisotropyProfile, u: &[f64], lo: f64, diam: f64) -> Vec<f64> {
    let n = profile.dim();
    let xn = (lo.ln() + u[n - 1] * (diam.ln() - lo.ln())).exp();
    let mut x: Vec<f64> = (0..n - 1)
        .map(|i| {
            let reach = (xn / profile.eta[i]).powf(1.0 / profile.a[i]);
            (2.0 * u[i] - 1.0) * (1.0 - 1e-12) * reach
        })
        .collect();
    // the diameter box only ever shrinks the tangential range
    for xi in x.iter_mut() {
        *xi = xi.clamp(-diam, diam);
    }
    x.push(xn);
    x
}

/// Deterministic grid in the same unit coordinates as [`model_uniforms`].
fn structured_uniforms(profile: &AnisotropyProfile) -> Vec<Vec<f64>> {
    let n = profile.dim();
    let levels = 25;
    let per_axis = match n {
        2 => 21,
        3 => 11,
        _ => 5,
    };
    let mut tangential: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..n - 1 {
        let mut next = Vec::new();
        for t in &tangential {
            for j in 0..per_axis {
                let mut t2 = t.clone();
                t2.push(j as f64 / (per_axis - 1) as f64);
                next.push(t2);
            }
        }
        tangential = next;
    }
    let mut out = Vec::new();
    for l in 0..levels {
        let un = l as f64 / (levels - 1) as f64;
        for t in &tangential {
            let lhs: f64 = (0..n - 1).map(|i| (2.0 * t[i] - 1.0).abs().powf(profile.a[i])).sum();
            if lhs < 1.0 {
                let mut u = t.clone();
                u.push(un);
                out.push(u);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct HSample {
    pub point: Vec<f64>,
    pub h: f64,
}

/// `H[W]` at `count` random points of the model region (seeded).
pub fn sample_h(spec: &PowerBarrierSpec, ctx: &ExponentContext, diam: f64, count: usize, seed: u64) -> Result<Vec<HSample>> {
    let k = ctx.require_k()?;
    let lo = DEFAULT_COLLAR * spec.epsilon;
    model_uniforms(&spec.profile, count, seed)
        .par_iter()
        .map(|u| {
            let x = map_uniform(&spec.profile, u, lo, diam);
            let jet = power_barrier_jet(spec, &x)?;
            let h = h_from_jet(spec, k, &x, &jet)?;
            Ok(HSample { point: x, h })
        })
        .collect()
}

fn min_h_over(spec: &PowerBarrierSpec, k: f64, units: &[Vec<f64>], diam: f64) -> Result<f64> {
    let lo = DEFAULT_COLLAR * spec.epsilon;
    units
        .par_iter()
        .map(|u| {
            let x = map_uniform(&spec.profile, u, lo, diam);
            let jet = power_barrier_jet(spec, &x)?;
            h_from_jet(spec, k, &x, &jet)
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))
}

/// Auxiliary quantities of the positivity argument for the barrier Hessian.
#[derive(Debug, Clone, Serialize)]
pub struct TauDiagnostics {
    pub delta: f64,
    /// Lower bounds `c_i(eps)` on `W_{x_i x_i} (x_n/eps)^{-theta(1-b_i)}`.
    pub c_lower: Vec<f64>,
    /// Lower bound `c_n(eps)` on `eps^2 W_{x_n x_n} (x_n/eps)^{2-theta}`.
    pub c_n_lower: f64,
    /// Upper bounds `c~_i(eps)` of the mixed-derivative estimate.
    pub c_tilde_upper: Vec<f64>,
    /// `c_1 ... c_{n-1} [c_n - delta sum c~_i^2 / c_i]`.
    pub tau1_bound: f64,
    /// Minimum over the admissible region of `eps^2 det D^2 W (x_n/eps)^{abar+2-n theta}`.
    pub tau1_sampled_min: f64,
    /// `(n-1) prod a_i theta^n (1-theta)`, the `eps -> 0` limit.
    pub tau1_limit: f64,
}

pub fn tau1_diagnostics(spec: &PowerBarrierSpec) -> Result<TauDiagnostics> {
    let n = spec.dim();
    let th = spec.exponent;
    let d = spec.delta();
    let c_lower: Vec<f64> = spec
        .b
        .iter()
        .map(|&b| {
            let lo = (1.0 - d).powf((1.0 - b) / b).min(1.0);
            let hi = (1.0 - d).powf((1.0 - 2.0 * b) / b).max(1.0);
            (2.0 / b) * (lo - d * 2.0 * (b - 1.0).abs() / b * hi)
        })
        .collect();
    // extremes over xi_i in [(1 - delta)^{1/b_i}, 1], by dense evaluation
    let xi_range = |b: f64| {
        let lo = (1.0 - d).powf(1.0 / b);
        (0..=200).map(move |j| lo + (1.0 - lo) * j as f64 / 200.0)
    };
    let mut c_n_lower = 0.0;
    let mut c_tilde_upper = Vec::with_capacity(n - 1);
    for (&a, &b) in spec.profile.a.iter().zip(&spec.b) {
        c_n_lower += th
            * th
            * xi_range(b)
                .map(|x| (1.0 / th - b) * x.powf(1.0 - b) + (b - 1.0) * x.powf(1.0 - 2.0 * b))
                .fold(f64::INFINITY, f64::min);
        let m = xi_range(b).map(|x| x.powf(1.0 - 2.0 * b)).fold(0.0, f64::max);
        c_tilde_upper.push(4.0 * (b - 1.0).abs() / (a * b * b) * m);
    }
    let correction: f64 = c_tilde_upper.iter().zip(&c_lower).map(|(t, c)| t * t / c).sum();
    let tau1_bound = c_lower.iter().product::<f64>() * (c_n_lower - d * correction);
    let prod_a: f64 = spec.profile.a.iter().product();
    let tau1_limit = (n as f64 - 1.0) * prod_a * th.powi(n as i32) * (1.0 - th);
    let abar: f64 = spec.profile.a.iter().map(|a| 2.0 / a).sum();
    // the scaled determinant is invariant under x_n -> t x_n, x_i -> t^{1/a_i} x_i,
    // so the minimum over the model region is taken on the slice x_n = eps
    let xn = spec.epsilon;
    let mut min = f64::INFINITY;
    for u in structured_uniforms(&spec.profile) {
        let mut x: Vec<f64> = (0..n - 1)
            .map(|i| {
                let reach = (spec.epsilon / spec.profile.eta[i]).powf(1.0 / spec.profile.a[i]);
                (2.0 * u[i] - 1.0) * (1.0 - 1e-12) * reach
            })
            .collect();
        x.push(xn);
        let jet = power_barrier_jet(spec, &x)?;
        let det = det_hessian(&jet)?;
        let scaled = spec.epsilon.powi(2) * det * (xn / spec.epsilon).powf(abar + 2.0 - n as f64 * th);
        min = min.min(scaled);
    }
    Ok(TauDiagnostics {
        delta: d,
        c_lower,
        c_n_lower,
        c_tilde_upper,
        tau1_bound,
        tau1_sampled_min: min,
        tau1_limit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonReport {
    pub epsilon0: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub eta_min: f64,
    pub delta: f64,
    pub theta: f64,
    pub min_h: f64,
    pub samples: usize,
    /// `(epsilon, min H)` at every trial value, in search order.
    pub trials: Vec<(f64, f64)>,
    pub tau: TauDiagnostics,
}

/// `eps_1 = min_i (d0 diam^{2/a_i - 1} / (2 a_i diam^2))^{a_i/2}`.
pub fn epsilon1(profile: &AnisotropyProfile, d0: f64, diam: f64) -> f64 {
    profile
        .a
        .iter()
        .map(|&a| (d0 * diam.powf(2.0 / a - 1.0) / (2.0 * a * diam * diam)).powf(a / 2.0))
        .fold(f64::INFINITY, f64::min)
}

/// Largest epsilon with `delta(eps) <= 1 - exponent`, i.e. `min_i eta_i (1 - exponent)^{a_i/2}`.
pub fn epsilon2(profile: &AnisotropyProfile, exponent: f64) -> f64 {
    profile
        .a
        .iter()
        .zip(&profile.eta)
        .map(|(&a, &e)| e * (1.0 - exponent).powf(a / 2.0))
        .fold(f64::INFINITY, f64::min)
}

/// Largest epsilon on a halving grid below the caps, refined by bisection to
/// three significant digits, for which `accept` holds.
fn search_epsilon<F>(cap: f64, mut accept: F) -> Result<(f64, Vec<(f64, f64)>)>
where
    F: FnMut(f64) -> Result<(bool, f64)>,
{
    let mut trials = Vec::new();
    let mut eps = cap * (1.0 - 1e-9);
    let mut failed: Option<f64> = None;
    loop {
        if eps < 1e-12 {
            return Err(Error::Selection(format!(
                "no admissible epsilon above 1e-12; trials (eps, score): {trials:?}"
            )));
        }
        let (ok, score) = accept(eps)?;
        trials.push((eps, score));
        if ok {
            break;
        }
        failed = Some(eps);
        eps *= 0.5;
    }
    let mut pass = eps;
    if let Some(mut fail) = failed {
        while (fail - pass) / pass > 1e-3 {
            let mid = 0.5 * (pass + fail);
            let (ok, score) = accept(mid)?;
            trials.push((mid, score));
            if ok {
                pass = mid;
            } else {
                fail = mid;
            }
        }
        // report three significant digits, rounded towards the safe side
        let scale = 10f64.powf(pass.log10().floor() - 2.0);
        let rounded = (pass / scale).floor() * scale;
        if rounded > 0.0 && rounded < pass {
            let (ok, score) = accept(rounded)?;
            trials.push((rounded, score));
            if ok {
                pass = rounded;
            }
        }
    }
    Ok((pass, trials))
}

/// Select the largest certified epsilon for the singular-problem barrier.
pub fn select_epsilon(
    ctx: &ExponentContext,
    profile: &AnisotropyProfile,
    d0: f64,
    diam: f64,
    sample_count: usize,
    seed: u64,
) -> Result<EpsilonReport> {
    let k = ctx.require_k()?;
    ctx.check_singular_hypothesis()?;
    if profile.dim() != ctx.n || profile.a != ctx.a {
        return Err(Error::InvalidProfile("profile exponents do not match the context".into()));
    }
    if !(d0 > 0.0) || !(diam > d0) {
        return Err(Error::OutOfRange(format!("need 0 < d0 < diam (d0 = {d0}, diam = {diam})")));
    }
    let th = theta(ctx)?;
    let n = ctx.n;
    let e1 = epsilon1(profile, d0, diam);
    let e2 = epsilon2(profile, th);
    let eta_min = profile.eta_min();
    let cap = e1.min(e2).min(eta_min);
    let mut y0 = vec![0.0; n];
    y0[n - 1] = -d0;
    let base = PowerBarrierSpec::new(profile.clone(), th, cap * (1.0 - 1e-9), Some(y0))?;
    let mut units = model_uniforms(profile, sample_count, seed);
    units.extend(structured_uniforms(profile));
    let (eps0, trials) = search_epsilon(cap, |eps| {
        let m = min_h_over(&base.with_epsilon(eps), k, &units, diam)?;
        Ok((m > 1.0, m))
    })?;
    let spec = base.with_epsilon(eps0);
    let min_h = min_h_over(&spec, k, &units, diam)?;
    Ok(EpsilonReport {
        epsilon0: eps0,
        epsilon1: e1,
        epsilon2: e2,
        eta_min,
        delta: spec.delta(),
        theta: th,
        min_h,
        samples: units.len(),
        trials,
        tau: tau1_diagnostics(&spec)?,
    })
}

/// The barrier certified by an [`EpsilonReport`].
pub fn certified_barrier(
    ctx: &ExponentContext,
    profile: &AnisotropyProfile,
    d0: f64,
    report: &EpsilonReport,
) -> Result<PowerBarrierSpec> {
    let mut y0 = vec![0.0; ctx.n];
    y0[ctx.n - 1] = -d0;
    PowerBarrierSpec::new(profile.clone(), report.theta, report.epsilon0, Some(y0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegenerateCase {
    /// `lambda = (abar + 2)/n` with `n - abar - 2 > 0`: constant lower bound.
    Critical,
    /// `lambda in (abar/n, 1)`: bound through `(diam/eps)^{n lambda - abar - 2}`.
    DiameterBounded,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegenerateBarrierReport {
    pub lambda: f64,
    pub case: DegenerateCase,
    /// Exponent `n lambda - abar - 2` of `x_n/eps` in the determinant bound.
    pub det_exponent: f64,
    pub epsilon: f64,
    pub min_det: f64,
    pub m_rhs: f64,
    pub samples: usize,
    pub trials: Vec<(f64, f64)>,
    pub tau: TauDiagnostics,
}

/// Certify `det D^2 W >= m_rhs` for the power barrier with exponent `lambda`.
pub fn degenerate_barrier_check(
    ctx: &ExponentContext,
    profile: &AnisotropyProfile,
    lambda: f64,
    m_rhs: f64,
    diam: f64,
    sample_count: usize,
    seed: u64,
) -> Result<DegenerateBarrierReport> {
    ctx.require_q()?;
    if profile.dim() != ctx.n || profile.a != ctx.a {
        return Err(Error::InvalidProfile("profile exponents do not match the context".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    if !(m_rhs > 0.0) || !(diam > 0.0) {
        return Err(Error::OutOfRange("need m_rhs > 0 and diam > 0".into()));
    }
    let n = ctx.nf();
    let abar = ctx.abar();
    let critical = (abar + 2.0) / n;
    let case = if n - abar - 2.0 > 0.0 && (lambda - critical).abs() <= 1e-12 {
        DegenerateCase::Critical
    } else if lambda > abar / n {
        DegenerateCase::DiameterBounded
    } else {
        return Err(Error::Hypothesis(format!(
            "lambda = {lambda} must exceed abar/n = {}",
            abar / n
        )));
    };
    let det_exponent = if case == DegenerateCase::Critical {
        0.0
    } else {
        n * lambda - abar - 2.0
    };
    let cap = epsilon2(profile, lambda).min(profile.eta_min());
    let base = PowerBarrierSpec::new(profile.clone(), lambda, cap * (1.0 - 1e-9), None)?;
    let mut units = model_uniforms(profile, sample_count, seed);
    units.extend(structured_uniforms(profile));
    let min_det = |spec: &PowerBarrierSpec| -> Result<f64> {
        let lo = DEFAULT_COLLAR * spec.epsilon;
        units
            .par_iter()
            .map(|u| {
                let x = map_uniform(&spec.profile, u, lo, diam);
                det_hessian(&power_barrier_jet(spec, &x)?)
            })
            .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))
    };
    let (eps, trials) = search_epsilon(cap, |eps| {
        let m = min_det(&base.with_epsilon(eps))?;
        Ok((m >= m_rhs, m))
    })?;
    let spec = base.with_epsilon(eps);
    Ok(DegenerateBarrierReport {
        lambda,
        case,
        det_exponent,
        epsilon: eps,
        min_det: min_det(&spec)?,
        m_rhs,
        samples: units.len(),
        trials,
        tau: tau1_diagnostics(&spec)?,
    })
}

/// Ellipsoid `E` with semi-axes `c (h/eta)^{1/a_i}` and `c h`, centred at
/// `(0, ..., 0, 3h/4)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipsoidSpec {
    pub a: Vec<f64>,
    pub h_tilde: f64,
    pub eta: f64,
    pub c: f64,
}

impl EllipsoidSpec {
    pub fn new(a: Vec<f64>, eta: f64, h_tilde: f64, c: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidProfile("need at least one tangential exponent".into()));
        }
        if !(h_tilde > 0.0) || !(eta > 0.0) {
            return Err(Error::OutOfRange("h_tilde and eta must be positive".into()));
        }
        if !(c > 0.0 && c <= 0.25) {
            return Err(Error::OutOfRange(format!("ellipsoid scale c = {c} must lie in (0, 1/4]")));
        }
        Ok(Self { a, h_tilde, eta, c })
    }

    /// Ellipsoid for a profile, with `eta = max eta_i` and the largest admissible `c`.
    pub fn for_profile(profile: &AnisotropyProfile, h_tilde: f64) -> Result<Self> {
        let h = profile
            .h
            .ok_or_else(|| Error::InvalidProfile("interior height h is required".into()))?;
        if !(h_tilde > 0.0 && h_tilde < 0.5 * h) {
            return Err(Error::OutOfRange(format!("h_tilde = {h_tilde} must lie in (0, h/2 = {})", 0.5 * h)));
        }
        Self::new(profile.a.clone(), profile.eta_max(), h_tilde, ellipsoid_scale(&profile.a))
    }

    pub fn dim(&self) -> usize {
        self.a.len() + 1
    }

    pub fn semi_axes(&self) -> Vec<f64> {
        let mut axes: Vec<f64> = self
            .a
            .iter()
            .map(|a| self.c * (self.h_tilde / self.eta).powf(1.0 / a))
            .collect();
        axes.push(self.c * self.h_tilde);
        axes
    }

    pub fn center(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        c[self.dim() - 1] = 0.75 * self.h_tilde;
        c
    }

    /// `2^n eps^n c^{-2n} eta^{abar} h^{-abar-2}`.
    pub fn det_closed_form(&self, epsilon: f64) -> f64 {
        let n = self.dim() as i32;
        let abar: f64 = self.a.iter().map(|a| 2.0 / a).sum();
        (2.0 * epsilon).powi(n) * self.c.powi(-2 * n) * self.eta.powf(abar) * self.h_tilde.powf(-abar - 2.0)
    }
}

/// Largest `c <= 1/4` with `E` inside `{ 2 eta sum |x_i|^{a_i} < x_n < h }`.
///
/// In the scaled coordinates the condition reads
/// `2 sum c^{a_i} |z_i|^{a_i} < 3/4 + c z_n` on the unit sphere, independent
/// of `h` and `eta`. The left side minus the right is convex in `z`, so the
/// sphere suffices; it is sampled densely and `c` found by bisection.
pub fn ellipsoid_scale(a: &[f64]) -> f64 {
    let n = a.len() + 1;
    let dirs = sphere_directions(n, if n == 2 { 4096 } else { 20_000 });
    let feasible = |c: f64| {
        dirs.iter().all(|z| {
            let lhs: f64 = (0..n - 1).map(|i| 2.0 * c.powf(a[i]) * z[i].abs().powf(a[i])).sum();
            lhs < 0.75 + c * z[n - 1]
        })
    };
    if feasible(0.25) {
        return 0.25;
    }
    let (mut lo, mut hi) = (0.0, 0.25);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipsoidValue {
    pub value: f64,
    pub hessian_diag: Vec<f64>,
    pub det: f64,
}

/// `W = -eps (1 - sum x_i^2/A_i^2 - (x_n - 3h/4)^2/A_n^2)` on `E`.
pub fn ellipsoid_barrier(spec: &EllipsoidSpec, epsilon: f64, x: &[f64]) -> Result<EllipsoidValue> {
    let n = spec.dim();
    if x.len() != n {
        return Err(Error::Domain(format!("expected a point of dimension {n}")));
    }
    let axes = spec.semi_axes();
    let center = spec.center();
    let level: f64 = (0..n).map(|i| ((x[i] - center[i]) / axes[i]).powi(2)).sum();
    if level > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("point {x:?} lies outside the ellipsoid")));
    }
    let hessian_diag: Vec<f64> = axes.iter().map(|a| 2.0 * epsilon / (a * a)).collect();
    let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(hessian_diag.clone()));
    Ok(EllipsoidValue {
        value: -epsilon * (1.0 - level),
        det: m.determinant(),
        hessian_diag,
    })
}

/// Sampled `max |grad v|` for `v = eta_max sum |x_i|^{a_i}` on `{ v < level }`.
pub fn gradient_bound(profile: &AnisotropyProfile, level: f64) -> f64 {
    let m = profile.dim() - 1;
    let eta = profile.eta_max();
    let dirs: Vec<Vec<f64>> = if m == 1 {
        vec![vec![1.0]]
    } else {
        sphere_directions(m, 2000)
    };
    let v = |x: &[f64]| -> f64 {
        x.iter()
            .enumerate()
            .filter(|&(i, _)| !profile.is_flat(i))
            .map(|(i, xi)| eta * xi.abs().powf(profile.a[i]))
            .sum()
    };
    let mut best: f64 = 0.0;
    for u in dirs {
        // |grad v| grows outward along rays for convex v: evaluate on { v = level }
        let (mut lo, mut hi) = (0.0, 1.0);
        while v(&u.iter().map(|x| x * hi).collect::<Vec<_>>()) < level && hi < 1e12 {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if v(&u.iter().map(|x| x * mid).collect::<Vec<_>>()) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g: f64 = u
            .iter()
            .enumerate()
            .filter(|&(i, _)| !profile.is_flat(i))
            .map(|(i, ui)| {
                let x = ui * lo;
                (eta * profile.a[i] * x.abs().powf(profile.a[i] - 1.0)).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        best = best.max(g);
    }
    best
}

/// Default constant `[9 diam sqrt(1 + M^2)]^{-k}` of the rescaled lower barrier.
pub fn default_c1(ctx: &ExponentContext, profile: &AnisotropyProfile, diam: f64) -> Result<f64> {
    let k = ctx.require_k()?;
    let h = profile
        .h
        .ok_or_else(|| Error::InvalidProfile("interior height h is required".into()))?;
    let m = gradient_bound(profile, h);
    Ok((9.0 * diam * (1.0 + m * m).sqrt()).powf(-k))
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerValue {
    /// `h^theta |W(0)|`
    pub value: f64,
    pub w0: f64,
    pub theta: f64,
    pub c: f64,
    pub coefficient: f64,
}

/// Lower value `h^theta |W(0)|` from the rescaled radial problem
/// `det D^2 W = C1 c^{2n} eta^{-abar} |W|^{-n-2k-2}` on the unit ball.
pub fn singular_lower_value(ctx: &ExponentContext, profile: &AnisotropyProfile, h_tilde: f64, c1: f64) -> Result<LowerValue> {
    let k = ctx.require_k()?;
    if !(c1 > 0.0) {
        return Err(Error::OutOfRange(format!("C1 = {c1} must be positive")));
    }
    let th = theta(ctx)?;
    let e = EllipsoidSpec::for_profile(profile, h_tilde)?;
    let n = ctx.n;
    let coefficient = c1 * e.c.powi(2 * n as i32) * e.eta.powf(-ctx.abar());
    let sol = radial_oracle(n, RadialRhs::Rescaled { coef: coefficient, k }, 1.0, &RadialOptions::default())?;
    Ok(LowerValue {
        value: h_tilde.powf(th) * sol.u0.abs(),
        w0: sol.u0,
        theta: th,
        c: e.c,
        coefficient,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DownwardStartBound {
    pub epsilon: f64,
    pub c2: f64,
    pub lambda0: f64,
    pub c: f64,
    pub c1: f64,
    pub gradient_bound: f64,
    /// `C h^q`, the lower bound for the right-hand side on `E`.
    pub rhs_lower: f64,
    /// Closed-form `det D^2 W` at `epsilon`.
    pub det_w: f64,
    /// `|W(0, ..., 0, 3h/4)| = epsilon`, i.e. `C0 (3h/4)^{lambda0}`.
    pub center_value: f64,
    pub c0: f64,
}

/// Largest `eps = c2 h^{lambda0}` with the ellipsoid barrier's determinant at
/// most the lower bound `(K c1 / diam)^q h^q` of `|u|^q` on `E`.
pub fn downward_start_bound(
    ctx: &ExponentContext,
    profile: &AnisotropyProfile,
    h_tilde: f64,
    k_sup: f64,
    diam: f64,
) -> Result<DownwardStartBound> {
    let q = ctx.require_q()?;
    if !(k_sup > 0.0) || !(diam > 0.0) {
        return Err(Error::OutOfRange("need K > 0 and diam > 0".into()));
    }
    let e = EllipsoidSpec::for_profile(profile, h_tilde)?;
    let h = profile.h.unwrap_or(f64::INFINITY);
    let n = ctx.n as f64;
    let abar = ctx.abar();
    let m = gradient_bound(profile, h);
    let c1 = 1.0 / (4.0 * (1.0 + m * m).sqrt());
    let big_c = (k_sup * c1 / diam).powf(q);
    let c2 = (big_c * e.c.powf(2.0 * n) / (2f64.powf(n) * e.eta.powf(abar))).powf(1.0 / n);
    let lambda0 = lambda_start_downward(ctx)?;
    let epsilon = c2 * h_tilde.powf(lambda0);
    Ok(DownwardStartBound {
        epsilon,
        c2,
        lambda0,
        c: e.c,
        c1,
        gradient_bound: m,
        rhs_lower: big_c * h_tilde.powf(q),
        det_w: e.det_closed_form(epsilon),
        center_value: epsilon,
        c0: epsilon / (0.75 * h_tilde).powf(lambda0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof(a: &[f64], eta: &[f64]) -> AnisotropyProfile {
        AnisotropyProfile::new(a.to_vec(), eta.to_vec(), None).unwrap()
    }

    fn worked_spec() -> PowerBarrierSpec {
        PowerBarrierSpec::new(prof(&[2.0], &[1.0]), 0.5, 0.1, None).unwrap()
    }

    #[test]
    fn worked_jet() {
        let s = worked_spec();
        let j = power_barrier_jet(&s, &[0.0, 0.05]).unwrap();
        assert!((j.value + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((j.hessian[(0, 0)] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(j.hessian[(0, 1)], 0.0);
        assert!((j.hessian[(1, 1)] - 50f64 * 2f64.sqrt()).abs() < 1e-10);
        assert!((det_hessian(&j).unwrap() - 100.0).abs() < 1e-10);
        assert_eq!(power_barrier_value(&s, &[0.5, 0.025]).unwrap(), 0.0);
        assert!((power_barrier_value(&s, &[0.0, 0.05]).unwrap() - j.value).abs() < 1e-16);
        assert!(matches!(
            power_barrier_jet(&s, &[0.8, 0.025]),
            Err(Error::BarrierDomain { .. })
        ));
    }

    #[test]
    fn identity_and_nonconvex_determinants() {
        let mut j = power_barrier_jet(&worked_spec(), &[0.0, 0.05]).unwrap();
        j.hessian = DMatrix::identity(2, 2);
        assert_eq!(det_hessian(&j).unwrap(), 1.0);
        j.hessian[(0, 0)] = -1.0;
        assert!(matches!(det_hessian(&j), Err(Error::NotConvex(_))));
    }

    #[test]
    fn axis_slice_value() {
        let s = PowerBarrierSpec::new(prof(&[2.0, 4.0], &[1.0, 2.0]), 0.4, 0.05, None).unwrap();
        for xn in [0.01, 0.3, 1.7] {
            let j = power_barrier_jet(&s, &[0.0, 0.0, xn]).unwrap();
            let expected = -2.0 * (xn / 0.05f64).powf(0.4);
            assert!((j.value / expected - 1.0).abs() < 1e-14);
            assert!(j.xi.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn k_zero_drops_drift() {
        let s = worked_spec();
        let ctx = ExponentContext::singular(2, 1.0, vec![2.0]).unwrap();
        let mut ctx0 = ctx.clone();
        ctx0.k = Some(0.0);
        let x = [0.1, 0.2];
        let j = power_barrier_jet(&s, &x).unwrap();
        let h0 = h_functional(&s, &ctx0, &x).unwrap();
        let expected = det_hessian(&j).unwrap() * j.value.abs().powi(4);
        assert!((h0 / expected - 1.0).abs() < 1e-14);
    }

    #[test]
    fn drift_must_be_positive() {
        // a large positive shift in x_n makes (x + y0).DW - W negative
        let s = PowerBarrierSpec::new(prof(&[2.0], &[1.0]), 0.5, 0.1, Some(vec![0.0, 10.0])).unwrap();
        let ctx = ExponentContext::singular(2, 1.0, vec![2.0]).unwrap();
        assert!(matches!(h_functional(&s, &ctx, &[0.0, 0.05]), Err(Error::Assumption(_))));
    }

    #[test]
    fn epsilon_caps() {
        let p = prof(&[2.0], &[1.0]);
        assert!((epsilon1(&p, 0.5, 2.0) - 0.03125).abs() < 1e-15);
        let e2 = epsilon2(&p, 0.5);
        assert!((delta(&p, e2) - 0.5).abs() < 1e-15);
        assert!(delta(&p, 0.99 * e2) < 0.5);
    }

    #[test]
    fn selection_certifies_h() {
        let ctx = ExponentContext::singular(2, 1.0, vec![2.0]).unwrap();
        let p = prof(&[2.0], &[1.0]);
        let r = select_epsilon(&ctx, &p, 0.5, 2.0, 10_000, 7).unwrap();
        assert!(r.epsilon0 <= 0.03125);
        assert!(r.min_h > 1.0);
        let spec = certified_barrier(&ctx, &p, 0.5, &r).unwrap();
        let fresh = sample_h(&spec, &ctx, 2.0, 10_000, 99).unwrap();
        assert!(fresh.iter().all(|s| s.h > 1.0));
    }

    #[test]
    fn selection_rejects_sharp_profiles() {
        let ctx = ExponentContext::new(2, vec![1.5]).unwrap().with_k(1.0).unwrap();
        let p = prof(&[1.5], &[1.0]);
        assert!(matches!(select_epsilon(&ctx, &p, 0.5, 2.0, 100, 1), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn selection_is_reproducible() {
        let ctx = ExponentContext::singular(3, 2.0, vec![2.0, 4.0]).unwrap();
        let p = prof(&[2.0, 4.0], &[1.0, 0.5]);
        let a = select_epsilon(&ctx, &p, 0.4, 2.0, 3000, 11).unwrap();
        let b = select_epsilon(&ctx, &p, 0.4, 2.0, 3000, 11).unwrap();
        assert_eq!(a.epsilon0.to_bits(), b.epsilon0.to_bits());
        assert_eq!(a.min_h.to_bits(), b.min_h.to_bits());
    }

    #[test]
    fn tau1_approaches_limit() {
        let p = prof(&[2.0, 4.0], &[1.0, 1.0]);
        let mut gaps = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let s = PowerBarrierSpec::new(p.clone(), 0.4, eps, None).unwrap();
            let d = tau1_diagnostics(&s).unwrap();
            assert!(d.tau1_bound <= d.tau1_sampled_min * (1.0 + 1e-12));
            gaps.push((d.tau1_bound / d.tau1_limit - 1.0).abs());
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[4] < 0.05, "{gaps:?}");
    }

    #[test]
    fn degenerate_cases() {
        let ctx = ExponentContext::degenerate(5, 0.0, vec![4.0; 4]).unwrap();
        let p = prof(&[4.0; 4], &[1.0; 4]);
        let r = degenerate_barrier_check(&ctx, &p, 0.8, 1.0, 2.0, 500, 3).unwrap();
        assert_eq!(r.case, DegenerateCase::Critical);
        assert_eq!(r.det_exponent, 0.0);
        assert!(r.min_det >= 1.0);

        let ctx = ExponentContext::degenerate(2, 1.0, vec![2.0]).unwrap();
        let p = prof(&[2.0], &[1.0]);
        let r = degenerate_barrier_check(&ctx, &p, 0.9, 4.0, 2.0, 2000, 3).unwrap();
        assert_eq!(r.case, DegenerateCase::DiameterBounded);
        assert!((r.det_exponent + 1.2).abs() < 1e-12);
        assert!(r.min_det >= 4.0);
        assert!(matches!(
            degenerate_barrier_check(&ctx, &p, 0.5, 1.0, 2.0, 100, 3),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn ellipsoid_worked_value() {
        let e = EllipsoidSpec::new(vec![2.0], 1.0, 0.4, 0.25).unwrap();
        let v = ellipsoid_barrier(&e, 0.01, &e.center()).unwrap();
        assert!((v.value + 0.01).abs() < 1e-18);
        assert!((v.det - 1.6).abs() < 1e-12);
        assert!((e.det_closed_form(0.01) - 1.6).abs() < 1e-12);
        let axes = e.semi_axes();
        let on_boundary = [axes[0], 0.3];
        assert!(ellipsoid_barrier(&e, 0.01, &on_boundary).unwrap().value.abs() < 1e-18);
        assert!(matches!(ellipsoid_barrier(&e, 0.01, &[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn ellipsoid_scale_is_quarter_for_quadratic_profiles() {
        assert_eq!(ellipsoid_scale(&[2.0]), 0.25);
        assert_eq!(ellipsoid_scale(&[2.0, 4.0]), 0.25);
        // (1, 1) is the borderline case where the quarter scale just fits
        let c = ellipsoid_scale(&[1.0, 1.0]);
        assert!(c > 0.249 && c <= 0.25, "{c}");
    }

    #[test]
    fn step1_scaling() {
        let ctx = ExponentContext::degenerate(2, 1.0, vec![2.0]).unwrap();
        let p = AnisotropyProfile::new(vec![2.0], vec![1.0], Some(1.0)).unwrap();
        let lam0 = 2.0;
        let bounds: Vec<DownwardStartBound> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&h| downward_start_bound(&ctx, &p, h, 0.3, 2.0).unwrap())
            .collect();
        for w in bounds.windows(2) {
            assert!((w[0].epsilon / w[1].epsilon - 2f64.powf(lam0)).abs() < 1e-10);
        }
        for b in &bounds {
            assert!((b.det_w / b.rhs_lower - 1.0).abs() < 1e-12);
            assert_eq!(b.center_value, b.epsilon);
        }
    }

    #[test]
    fn lower_value_scaling() {
        let ctx = ExponentContext::singular(2, 1.0, vec![2.0]).unwrap();
        let p = AnisotropyProfile::new(vec![2.0], vec![1.0], Some(1.0)).unwrap();
        let a = singular_lower_value(&ctx, &p, 0.4, 1.0).unwrap();
        let b = singular_lower_value(&ctx, &p, 0.1, 1.0).unwrap();
        assert!((a.value / 0.4f64.powf(0.5) - b.value / 0.1f64.powf(0.5)).abs() < 1e-10);
        let c = singular_lower_value(&ctx, &p, 0.4, 2.0).unwrap();
        assert!(c.w0.abs() > a.w0.abs());
        assert!((c.w0 / a.w0 - 2f64.powf(1.0 / 8.0)).abs() < 1e-7);
        let c1 = default_c1(&ctx, &p, 2.0).unwrap();
        // M = 2 eta sqrt(h / eta) = 2 on { x^2 < 1 }
        assert!((c1 - 1.0 / (18.0 * 5f64.sqrt())).abs() < 1e-9);
    }
}
