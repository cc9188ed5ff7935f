//! Outer fixed-point loops for right-hand sides that depend on `u`.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::{is_monotone, GridFunction, MaSolver, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::geometry::GridDomain;

/// Default stopping tolerance on the relative outer change of the singular loop.
pub const SINGULAR_TOL: f64 = 1e-6;
/// Default stopping tolerance on the sup-norm outer change of the degenerate loop.
pub const DEGENERATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPointOptions {
    pub inner: SolveOptions,
    /// Damping; `None` gives 0.3 for the singular problem and 1 for the degenerate one.
    pub omega: Option<f64>,
    /// Stopping tolerance; `None` gives 1e-6 (relative change, singular) or
    /// 1e-7 (sup-norm change, degenerate).
    pub tol: Option<f64>,
    pub max_outer: usize,
    /// Multiplies `|Omega|^{2/(n-q)}` in the degenerate initialization.
    pub init_scale: f64,
    /// Decay exponent used to size the singular floor; `None` uses the
    /// exponent of a uniformly convex boundary.
    pub floor_exponent: Option<f64>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            inner: SolveOptions::default(),
            omega: None,
            tol: None,
            max_outer: 400,
            init_scale: 1.0,
            floor_exponent: None,
        }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Nontrivial solution of `det D^2 u = |u|^q`, `u = 0` on the boundary, by
/// the iteration `u <- ma_solve(|u|^q)` started from the constant right side
/// `M^q`, `M = init_scale |Omega|^{2/(n-q)}`.
pub fn solve_degenerate(
    domain: Arc<GridDomain>,
    q: f64,
    opts: FixedPointOptions,
) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let n = domain.n as f64;
    if !(0.0..n).contains(&q) {
        return Err(Error::OutOfRange(format!("q = {q} must lie in [0, {n})")));
    }
    let omega = opts.omega.unwrap_or(1.0);
    let tol = opts.tol.unwrap_or(DEGENERATE_TOL);
    let solver = MaSolver::new(domain.clone(), opts.inner)?;
    let m = opts.init_scale * domain.volume().powf(2.0 / (n - q));
    let rhs0 = if q == 0.0 { 1.0 } else { m.powf(q) };
    let rows = solver.rows();
    let (mut u, first) = solver.solve_rows(&vec![rhs0; rows], None)?;
    let mut inner = first.inner_iterations;
    let mut linear = first.linear_iterations;
    let mut history = Vec::new();
    let mut pointwise = true;
    let collapse = 10.0 * domain.spacing * domain.spacing;
    for outer in 1..=opts.max_outer {
        let rhs: Vec<f64> = u.iter().map(|v| if q == 0.0 { 1.0 } else { v.abs().powf(q) }).collect();
        let (t, rep) = solver.solve_rows(&rhs, Some(&u))?;
        inner += rep.inner_iterations;
        linear += rep.linear_iterations;
        let scale = sup(&u).max(f64::MIN_POSITIVE);
        let next: Vec<f64> = u.iter().zip(&t).map(|(a, b)| (1.0 - omega) * a + omega * b).collect();
        let diff = u.iter().zip(&next).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        pointwise &= u.iter().zip(&next).all(|(a, b)| *b >= a - 1e-10 * scale);
        u = next;
        history.push(diff);
        let norm = sup(&u);
        if norm < collapse {
            return Err(Error::DegenerateFixedPoint { sup_norm: norm });
        }
        if diff < tol {
            let report = SolveReport {
                outer_iterations: outer,
                inner_iterations: inner,
                linear_iterations: linear,
                residual: diff,
                monotone: pointwise && is_monotone(&history),
                min_second_difference: solver.min_second_difference(&u),
                history,
                clamped_nodes: 0,
                init: format!("constant right side {rhs0:.6e}"),
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Ok((GridFunction::from_rows(domain, &solver.stencil, &u), report));
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_outer,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

struct SingularRhs {
    values: Vec<f64>,
    clamped: usize,
    min_drift: (f64, usize),
}

fn singular_rhs(solver: &MaSolver, coords: &[Vec<f64>], u: &[f64], k: f64, floor: f64) -> SingularRhs {
    let st = &solver.stencil;
    let n = st.n;
    let mut values = Vec::with_capacity(u.len());
    let mut clamped = 0;
    let mut min_drift = (f64::INFINITY, 0);
    for r in 0..u.len() {
        let x = &coords[r];
        let xdu: f64 = (0..n).map(|d| x[d] * st.first_derivative(u, r, d)).sum();
        let drift = xdu - u[r];
        if drift < min_drift.0 {
            min_drift = (drift, r);
        }
        let a = u[r].abs();
        if a < floor || drift < floor {
            clamped += 1;
        }
        let f = a.max(floor).powf(-(n as f64 + k + 2.0)) * drift.max(floor).powf(-k);
        values.push(f);
    }
    SingularRhs {
        values,
        clamped,
        min_drift,
    }
}

/// Solution of `det D^2 u = |u|^{-n-k-2} (x.Du - u)^{-k}`, `u = 0` on the
/// boundary, by the damped iteration `u <- (1 - w) u + w ma_solve(F(u))`.
///
/// The start is `-s (-U1)^theta` with `U1` the constant-right-side solution,
/// `theta` the expected boundary exponent and `s` balancing `F` against
/// `det_h` at the median node.
pub fn solve_singular(domain: Arc<GridDomain>, k: f64, opts: FixedPointOptions) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::OutOfRange(format!("k = {k} must be positive")));
    }
    let origin_depth = domain
        .d0
        .ok_or_else(|| Error::Domain("the origin must lie inside the domain".into()))?;
    if origin_depth <= domain.spacing {
        return Err(Error::Domain("the origin is within one grid step of the boundary".into()));
    }
    let n = domain.n as f64;
    let omega = opts.omega.unwrap_or(0.3);
    let tol = opts.tol.unwrap_or(SINGULAR_TOL);
    let theta = opts.floor_exponent.unwrap_or((n + 1.0 + k) / (2.0 * n + 2.0 * k + 2.0));
    let inradius = domain.dist.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = inradius * (domain.spacing / inradius).powf(theta) / 10.0;

    let solver = MaSolver::new(domain.clone(), opts.inner)?;
    let coords = solver.row_coords();
    let rows = solver.rows();
    let (u1, first) = solver.solve_rows(&vec![1.0; rows], None)?;
    let mut inner = first.inner_iterations;
    let mut linear = first.linear_iterations;
    // shape -(-U1)^theta carries the expected boundary decay; its scale
    // balances F against det
    let peak = sup(&u1);
    let shape: Vec<f64> = u1.iter().map(|v| -peak * (v.abs() / peak).powf(theta)).collect();
    let f1 = singular_rhs(&solver, &coords, &shape, k, floor);
    let g1 = solver.det_root(&shape);
    let mut ratios: Vec<f64> = f1
        .values
        .iter()
        .zip(&g1)
        .filter(|(_, g)| **g > 0.0)
        .map(|(f, g)| f / g.powi(domain.n as i32))
        .collect();
    if ratios.is_empty() {
        return Err(Error::Domain("initial shape has no convex nodes".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let s = ratios[ratios.len() / 2].powf(1.0 / (2.0 * n + 2.0 * k + 2.0));
    let mut u: Vec<f64> = shape.iter().map(|v| s * v).collect();

    let mut history = Vec::new();
    for outer in 1..=opts.max_outer {
        let rhs = singular_rhs(&solver, &coords, &u, k, floor);
        // inexact inner solves until the outer change nears the tolerance
        let last = history.last().copied().unwrap_or(1.0);
        let inner_tol = if last <= 10.0 * tol { opts.inner.tol } else { (1e-2 * last).clamp(opts.inner.tol, 1e-4) };
        let (t, rep) = solver.solve_rows_to(&rhs.values, Some(&u), inner_tol)?;
        inner += rep.inner_iterations;
        linear += rep.linear_iterations;
        let scale = sup(&u).max(f64::MIN_POSITIVE);
        let change = u.iter().zip(&t).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())) / scale;
        history.push(change);
        if change <= tol && inner_tol <= opts.inner.tol {
            // t is the last undamped image; its residual is the one reported
            let last = singular_rhs(&solver, &coords, &t, k, floor);
            if last.min_drift.0 <= 0.0 {
                let x = &coords[last.min_drift.1];
                return Err(Error::Assumption(format!(
                    "x.Du - u = {:.3e} <= 0 at node {x:?}",
                    last.min_drift.0
                )));
            }
            let report = SolveReport {
                outer_iterations: outer,
                inner_iterations: inner,
                linear_iterations: linear,
                residual: change,
                monotone: is_monotone(&history),
                min_second_difference: solver.min_second_difference(&t),
                history,
                clamped_nodes: last.clamped,
                init: format!("{s:.6e} * -(-U1)^{theta:.4} with U1 the constant-rhs solution; floor {floor:.3e}"),
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Ok((GridFunction::from_rows(domain, &solver.stencil, &t), report));
        }
        for (a, b) in u.iter_mut().zip(&t) {
            *a = (1.0 - omega) * *a + omega * b;
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_outer,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}
