//! Radial shooting oracle for `det D^2 u = f(r, u, u')` on a ball with zero
//! boundary data.
//!
//! For radial convex `u(r)`, `det D^2 u = u'' (u'/r)^{n-1}`. Near the centre the
//! ODE is integrated in `r` with state `(u, P = (u')^n)`, where
//! `P' = n r^{n-1} f`. Once `|u|` has dropped to half its central value the
//! independent variable becomes `l = ln|u|` with state `(r, ln Q)`, `Q = 1/u'`,
//! which stays regular at the boundary even when `u'` blows up. The unknown
//! central value `s = -u(0)` is found by bisection on `r_end(s) - R`, which is
//! increasing in `s`.

use serde::Serialize;

use super::ode::{integrate, OdeOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RadialRhs {
    /// `f = c`
    Constant { c: f64 },
    /// `f = coef |u|^q`
    Degenerate { coef: f64, q: f64 },
    /// `f = |u|^{-n-k-2} (x.Du - u)^{-k}`
    Singular { k: f64 },
    /// `f = coef |u|^{-n-2k-2}`
    Rescaled { coef: f64, k: f64 },
}

impl RadialRhs {
    /// `ln f` at radius `r`, with `t = |u| > 0` and `du = u' >= 0`.
    fn ln_f(&self, n: f64, r: f64, t: f64, du: f64) -> f64 {
        match *self {
            RadialRhs::Constant { c } => c.ln(),
            RadialRhs::Degenerate { coef, q } => coef.ln() + if q == 0.0 { 0.0 } else { q * t.ln() },
            RadialRhs::Singular { k } => -(n + k + 2.0) * t.ln() - k * (r * du + t).ln(),
            RadialRhs::Rescaled { coef, k } => coef.ln() - (n + 2.0 * k + 2.0) * t.ln(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RadialRhs::Constant { c } => c > 0.0 && c.is_finite(),
            RadialRhs::Degenerate { coef, q } => coef > 0.0 && coef.is_finite() && q >= 0.0,
            RadialRhs::Singular { k } => k >= 0.0 && k.is_finite(),
            RadialRhs::Rescaled { coef, k } => coef > 0.0 && coef.is_finite() && k >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("invalid radial right-hand side {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RadialOptions {
    pub rtol: f64,
    /// Shooting tolerance on `|r_end - R| / R`.
    pub tol: f64,
    pub max_bisections: usize,
    /// Profile points per decade of `|u|` in the boundary phase.
    pub per_decade: usize,
}

impl Default for RadialOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            tol: 1e-8,
            max_bisections: 200,
            per_decade: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialSolution {
    pub n: usize,
    pub radius: f64,
    /// `u(0)`, negative.
    pub u0: f64,
    /// `|r_end - R|` of the final shot.
    pub residual: f64,
    pub iterations: usize,
    /// Boundary radius reached by the final shot (after the end correction).
    pub r_end: f64,
    /// `(r, u)` samples of the final shot, increasing in `r`.
    pub profile: Vec<[f64; 2]>,
}

impl RadialSolution {
    /// Linear interpolation of the final profile, `0` beyond the boundary.
    pub fn value_at(&self, r: f64) -> f64 {
        let p = &self.profile;
        if r <= p[0][0] {
            return p[0][1];
        }
        // rescale the shot so that it ends exactly at R
        let r = r * self.r_end / self.radius;
        match p.iter().position(|q| q[0] >= r) {
            None => 0.0,
            Some(0) => p[0][1],
            Some(i) => {
                let (a, b) = (p[i - 1], p[i]);
                let w = (r - a[0]) / (b[0] - a[0]);
                a[1] + w * (b[1] - a[1])
            }
        }
    }

    /// `(R - r, |u|)` pairs with the depth measured from the shot's own end point.
    pub fn boundary_profile(&self) -> Vec<(f64, f64)> {
        self.profile
            .iter()
            .filter(|q| q[1] < 0.0 && q[0] < self.r_end)
            .map(|q| (self.r_end - q[0], -q[1]))
            .collect()
    }
}

struct Shot {
    r_end: f64,
    profile: Vec<[f64; 2]>,
}

fn shoot(n: usize, rhs: RadialRhs, radius: f64, s: f64, opts: &RadialOptions) -> Result<Shot> {
    let nf = n as f64;
    let ode = OdeOptions {
        rtol: opts.rtol,
        atol: 1e-300,
        h_init: 1e-3 * radius,
        h_max: radius / 200.0,
        max_steps: 500_000,
    };
    let r0 = 1e-6 * radius;
    let f0 = rhs.ln_f(nf, 0.0, s, 0.0).exp();
    let c0 = f0.powf(1.0 / nf);
    let y0 = [-s + 0.5 * c0 * r0 * r0, (c0 * r0).powi(n as i32)];
    let mut profile = vec![[0.0, -s], [r0, y0[0]]];

    let phase1 = |r: f64, y: &[f64], d: &mut [f64]| {
        let t = -y[0];
        if !(t > 0.0) || !(y[1] >= 0.0) {
            d[0] = f64::NAN;
            d[1] = f64::NAN;
            return;
        }
        let du = y[1].powf(1.0 / nf);
        d[0] = du;
        d[1] = nf * r.powi(n as i32 - 1) * rhs.ln_f(nf, r, t, du).exp();
    };
    let (r1, y1) = integrate(phase1, r0, &y0, 0.5 * radius, &ode, |r, y| {
        profile.push([r, y[0]]);
        y[0] >= -0.5 * s
    })?;
    let t1 = -y1[0];
    let du1 = y1[1].powf(1.0 / nf);
    if !(t1 > 0.0) || !(du1 > 0.0) {
        return Err(Error::Oracle(format!("degenerate state after the central phase (s = {s})")));
    }

    let rate = |l: f64, r: f64, lnq: f64| {
        let t = l.exp();
        let du = (-lnq).exp();
        (l + rhs.ln_f(nf, r, t, du) + (nf - 1.0) * r.ln() + (nf + 1.0) * lnq).exp()
    };
    let phase2 = |l: f64, y: &[f64], d: &mut [f64]| {
        d[0] = -(l + y[1]).exp();
        d[1] = rate(l, y[0], y[1]);
    };
    let l1 = t1.ln();
    let l_end = (1e-12 * s).ln();
    let ode2 = OdeOptions {
        h_init: 1e-3,
        h_max: std::f64::consts::LN_10 / opts.per_decade as f64,
        ..ode
    };
    let (l2, y2) = integrate(phase2, l1, &[r1, -du1.ln()], l_end, &ode2, |l, y| {
        profile.push([y[0], -l.exp()]);
        false
    })?;
    // remaining arc: Q ~ t^m near the boundary gives R - r = t Q / (1 + m)
    let t2 = l2.exp();
    let m = rate(l2, y2[0], y2[1]);
    let r_end = y2[0] + t2 * y2[1].exp() / (1.0 + m);
    profile.push([r_end, 0.0]);
    if !r_end.is_finite() {
        return Err(Error::Oracle(format!("shot diverged (s = {s})")));
    }
    Ok(Shot { r_end, profile })
}

/// Solve the radial problem on the ball of radius `radius` in dimension `n`.
pub fn radial_oracle(n: usize, rhs: RadialRhs, radius: f64, opts: &RadialOptions) -> Result<RadialSolution> {
    rhs.validate()?;
    if n < 2 || !(radius > 0.0) {
        return Err(Error::OutOfRange(format!("need n >= 2 and radius > 0 (n = {n}, R = {radius})")));
    }
    let miss = |s: f64| -> Result<f64> { Ok(shoot(n, rhs, radius, s, opts)?.r_end - radius) };

    let (mut lo, mut hi) = (1.0, 1.0);
    let f1 = miss(1.0)?;
    let mut iterations = 1;
    if f1 < 0.0 {
        while miss(hi)? < 0.0 {
            lo = hi;
            hi *= 2.0;
            iterations += 1;
            if hi > 1e8 {
                return Err(Error::Oracle("no bracket for the central value below 1e8".into()));
            }
        }
    } else {
        while miss(lo)? > 0.0 {
            hi = lo;
            lo *= 0.5;
            iterations += 1;
            if lo < 1e-8 {
                return Err(Error::Oracle("no bracket for the central value above 1e-8".into()));
            }
        }
    }
    let target = 1e-3 * opts.tol * radius;
    let mut s = 0.5 * (lo + hi);
    for _ in 0..opts.max_bisections {
        s = (lo * hi).sqrt();
        let fm = miss(s)?;
        iterations += 1;
        if fm.abs() <= target || hi / lo - 1.0 < 1e-15 {
            break;
        }
        if fm < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    let shot = shoot(n, rhs, radius, s, opts)?;
    let residual = (shot.r_end - radius).abs();
    if residual > opts.tol * radius {
        return Err(Error::Oracle(format!(
            "shooting did not meet the boundary: |r_end - R| = {residual:.3e}"
        )));
    }
    Ok(RadialSolution {
        n,
        radius,
        u0: -s,
        residual,
        iterations,
        r_end: shot.r_end,
        profile: shot.profile,
    })
}
