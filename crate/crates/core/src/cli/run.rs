//! Validation and execution of the subcommands.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::*;
use super::report::{num, Check, Output, Row, RunReport, REPORT_SCHEMA};
use crate::barriers::{certified_barrier, degenerate_barrier_check, sample_h, select_epsilon};
use crate::error::{Error, Result};
use crate::exponents::{alpha, lambda_iterate, lambda_start_downward, lambda_start_upward, theta, ExponentContext};
use crate::geometry::{normal_ray_samples, AnisotropyProfile, DomainKind, GridDomain};
use crate::solver::fixed_point::{DEGENERATE_TOL, SINGULAR_TOL};
use crate::solver::{
    fit_power_law, fit_radial_exponent, geometric_depths, ma_solve, radial_oracle, solve_degenerate, solve_singular,
    ExponentFit, FixedPointOptions, GridFunction, RadialOptions, RadialRhs, SolveOptions, SolveReport,
};

/// Failures that prevent a report from being produced.
#[derive(Debug)]
pub enum Failure {
    /// Found while validating the config, before any computation started.
    Config(Error),
    /// The output directory could not be written.
    Output(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Output(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => e.fmt(f),
            Failure::Output(e) => write!(f, "cannot write outputs: {e}"),
        }
    }
}

type Prep<T> = std::result::Result<T, Failure>;

struct Env<'a> {
    loaded: &'a LoadedConfig,
}

impl<'a> Env<'a> {
    fn cfg(&self) -> &'a ExperimentConfig {
        &self.loaded.config
    }

    fn bad(&self, section: &str, key: Option<&str>, msg: impl Into<String>) -> Failure {
        Failure::Config(self.loaded.error(section, key, msg))
    }

    fn check<T>(&self, r: Result<T>, section: &str, key: Option<&str>) -> Prep<T> {
        r.map_err(|e| self.bad(section, key, e.to_string()))
    }

    fn problem(&self) -> ProblemConfig {
        self.cfg().problem.clone().unwrap_or_default()
    }

    fn tangential_a(&self, n: usize) -> Prep<Vec<f64>> {
        match &self.cfg().profile {
            Some(p) if p.a.len() != n - 1 => {
                Err(self.bad("profile", Some("a"), format!("need {} exponents for n = {n}, got {}", n - 1, p.a.len())))
            }
            Some(p) => Ok(p.a.clone()),
            None => Ok(vec![2.0; n - 1]),
        }
    }

    fn profile(&self, n: usize) -> Prep<AnisotropyProfile> {
        let a = self.tangential_a(n)?;
        let (eta, h) = match &self.cfg().profile {
            Some(p) => (p.eta.clone().unwrap_or_else(|| vec![1.0; n - 1]), p.h),
            None => (vec![1.0; n - 1], None),
        };
        self.check(AnisotropyProfile::new(a, eta, h), "profile", None)
    }

    fn dimension(&self) -> Prep<usize> {
        let n = self.problem().n;
        if !(2..=3).contains(&n) {
            return Err(self.bad("problem", Some("n"), format!("dimension n = {n} must be 2 or 3")));
        }
        Ok(n)
    }

    fn domain_kind(&self, n: usize) -> Prep<DomainKind> {
        let kind = match &self.cfg().domain {
            None => DomainKind::ball(n, 1.0),
            Some(DomainConfig::Ball { center, radius }) => DomainKind::Ball {
                center: center.clone().unwrap_or_else(|| vec![0.0; n]),
                radius: *radius,
            },
            Some(DomainConfig::Box { lo, hi }) => DomainKind::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            Some(DomainConfig::Superellipse { center, semi_axes, power }) => DomainKind::Superellipse {
                center: center.clone().unwrap_or_else(|| vec![0.0; n]),
                semi_axes: semi_axes.clone(),
                power: *power,
            },
            Some(DomainConfig::InteriorModel {}) => DomainKind::InteriorModel { profile: self.profile(n)? },
        };
        self.check(kind.validate(), "domain", None)?;
        if kind.dim() != n {
            return Err(self.bad("domain", None, format!("domain has dimension {}, problem has n = {n}", kind.dim())));
        }
        Ok(kind)
    }

    fn grid(&self, kind: DomainKind) -> Prep<Arc<GridDomain>> {
        let g = self
            .cfg()
            .grid
            .as_ref()
            .ok_or_else(|| self.bad("grid", None, "a [grid] section with `spacing` is required"))?;
        if let Some(w) = g.width {
            if !(1..=2).contains(&w) {
                return Err(self.bad("grid", Some("width"), format!("stencil width {w} must be 1 or 2")));
            }
        }
        let d = self.check(GridDomain::new(kind, g.spacing), "grid", Some("spacing"))?;
        if d.interior_count() == 0 {
            return Err(self.bad("grid", Some("spacing"), "grid has no interior nodes"));
        }
        Ok(Arc::new(d))
    }

    fn solver_options(&self) -> Prep<(SolveOptions, FixedPointOptions)> {
        let s = self.cfg().solver.clone().unwrap_or_default();
        let mut inner = SolveOptions::default();
        if let Some(t) = s.tol {
            if !(t > 0.0) {
                return Err(self.bad("solver", Some("tol"), "tolerance must be positive"));
            }
            inner.tol = t;
        }
        let positive = |v: Option<usize>, key: &str| -> Prep<Option<usize>> {
            match v {
                Some(0) => Err(self.bad("solver", Some(key), format!("{key} must be at least 1"))),
                v => Ok(v),
            }
        };
        inner.max_newton = positive(s.max_newton, "max_newton")?.unwrap_or(inner.max_newton);
        inner.max_linear = positive(s.max_linear, "max_linear")?.unwrap_or(inner.max_linear);
        inner.width = self.cfg().grid.as_ref().and_then(|g| g.width);
        let mut fp = FixedPointOptions {
            inner,
            ..Default::default()
        };
        fp.max_outer = positive(s.max_outer, "max_outer")?.unwrap_or(fp.max_outer);
        if let Some(w) = s.omega {
            if !(w > 0.0 && w <= 1.0) {
                return Err(self.bad("solver", Some("omega"), "damping must lie in (0, 1]"));
            }
            fp.omega = Some(w);
        }
        if let Some(t) = s.outer_tol {
            if !(t > 0.0) {
                return Err(self.bad("solver", Some("outer_tol"), "tolerance must be positive"));
            }
            fp.tol = Some(t);
        }
        if let Some(m) = s.init_scale {
            if !(m > 0.0 && m.is_finite()) {
                return Err(self.bad("solver", Some("init_scale"), "initial scale must be positive"));
            }
            fp.init_scale = m;
        }
        Ok((inner, fp))
    }

    fn k(&self) -> Prep<f64> {
        let k = self.problem().k.unwrap_or(1.0);
        if !(k >= 0.0 && k.is_finite()) {
            return Err(self.bad("problem", Some("k"), format!("k = {k} must be non-negative")));
        }
        Ok(k)
    }

    fn q(&self, n: usize) -> Prep<f64> {
        let q = self
            .problem()
            .q
            .ok_or_else(|| self.bad("problem", Some("q"), "the degenerate problem needs `q`"))?;
        if !(q >= 0.0 && q < n as f64) {
            return Err(self.bad("problem", Some("q"), format!("q = {q} must lie in [0, n)")));
        }
        Ok(q)
    }
}

/// Exponent the boundary fit is compared with.
fn predicted_exponent(kind: ProblemKind, n: usize, a: &[f64], k: f64, q: f64) -> Result<f64> {
    match kind {
        ProblemKind::Singular => theta(&ExponentContext::singular(n, k, a.to_vec())?),
        // the right side vanishes on the boundary, so the decay is at most linear
        ProblemKind::Degenerate => Ok(alpha(&ExponentContext::degenerate(n, q, a.to_vec())?)?.min(1.0)),
        ProblemKind::Constant => Ok(1.0),
    }
}

fn fresh_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x2545_F491_4F6C_DD1D)
}

fn histogram(values: &[f64], bins: usize) -> Vec<Row> {
    let logs: Vec<f64> = values.iter().map(|v| v.log10()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Vec::new();
    }
    let bins = if hi > lo { bins } else { 1 };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for l in &logs {
        let b = (((l - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let a = lo + i as f64 * width;
            vec![num(a), num(a + width), c.to_string()]
        })
        .collect()
}

struct BarrierPlan {
    mode: BarrierMode,
    ctx: ExponentContext,
    profile: AnisotropyProfile,
    d0: f64,
    diam: f64,
    samples: usize,
    fresh: usize,
    lambda: f64,
    m_rhs: f64,
    bins: usize,
}

fn prepare_barrier(env: &Env) -> Prep<BarrierPlan> {
    let n = env.dimension()?;
    let b = env.cfg().barrier.clone().unwrap_or_default();
    let profile = env.profile(n)?;
    let a = profile.a.clone();
    let (ctx, lambda, m_rhs) = match b.mode {
        BarrierMode::Singular => (env.check(ExponentContext::singular(n, env.k()?, a), "problem", None)?, 0.0, 0.0),
        BarrierMode::Degenerate => {
            let ctx = env.check(ExponentContext::degenerate(n, env.q(n)?, a), "problem", None)?;
            let lambda = b
                .lambda
                .ok_or_else(|| env.bad("barrier", Some("lambda"), "degenerate mode needs `lambda`"))?;
            let m = b.m_rhs.unwrap_or(1.0);
            if !(m > 0.0 && m.is_finite()) {
                return Err(env.bad("barrier", Some("m_rhs"), "m_rhs must be positive"));
            }
            (ctx, lambda, m)
        }
    };
    let d0 = b.d0.unwrap_or(0.5);
    let diam = b
        .diam
        .or_else(|| env.cfg().domain.as_ref().and_then(|_| env.domain_kind(n).ok()).map(|k| k.diameter()))
        .unwrap_or(2.0);
    if !(d0 > 0.0 && diam > d0 && diam.is_finite()) {
        return Err(env.bad("barrier", Some("d0"), format!("need 0 < d0 < diam (d0 = {d0}, diam = {diam})")));
    }
    let samples = b.samples.unwrap_or(10_000);
    let fresh = b.fresh_samples.unwrap_or(samples);
    if samples == 0 || fresh == 0 {
        return Err(env.bad("barrier", Some("samples"), "sample counts must be positive"));
    }
    let bins = b.bins.unwrap_or(20).max(1);
    Ok(BarrierPlan {
        mode: b.mode,
        ctx,
        profile,
        d0,
        diam,
        samples,
        fresh,
        lambda,
        m_rhs,
        bins,
    })
}

/// Singular-mode certification: select epsilon, then resample with a fresh seed.
fn certify_singular(
    ctx: &ExponentContext,
    profile: &AnisotropyProfile,
    d0: f64,
    diam: f64,
    samples: usize,
    fresh: usize,
    seed: u64,
) -> Result<(crate::barriers::EpsilonReport, Vec<f64>)> {
    let rep = select_epsilon(ctx, profile, d0, diam, samples, seed)?;
    let spec = certified_barrier(ctx, profile, d0, &rep)?;
    let hs = sample_h(&spec, ctx, diam, fresh, fresh_seed(seed))?;
    Ok((rep, hs.into_iter().map(|s| s.h).collect()))
}

fn run_barrier(p: &BarrierPlan, out: &mut Output, seed: u64) -> Result<(Vec<Check>, Value)> {
    match p.mode {
        BarrierMode::Singular => {
            let (rep, hs) = certify_singular(&p.ctx, &p.profile, p.d0, p.diam, p.samples, p.fresh, seed)?;
            let min_fresh = hs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_fresh = hs.iter().cloned().fold(0.0, f64::max);
            let trials: Vec<Row> = rep
                .trials
                .iter()
                .map(|&(e, m)| vec![num(e), num(m), (m > 1.0).to_string()])
                .collect();
            out.csv("epsilon_trials.csv", "table", &["epsilon", "min_h", "certified"], &trials)?;
            out.csv("h_histogram.csv", "table", &["log10_h_lo", "log10_h_hi", "count"], &histogram(&hs, p.bins))?;
            let checks = vec![
                Check::above("selection-min-h", rep.min_h, 1.0, false),
                Check::above("fresh-min-h", min_fresh, 1.0, false),
            ];
            let details = json!({
                "mode": "singular",
                "d0": p.d0,
                "diam": p.diam,
                "epsilon": rep,
                "epsilon_cap": rep.epsilon1.min(rep.epsilon2).min(rep.eta_min),
                "fresh": { "count": hs.len(), "seed": fresh_seed(seed), "min_h": min_fresh, "max_h": max_fresh },
            });
            Ok((checks, details))
        }
        BarrierMode::Degenerate => {
            let rep = degenerate_barrier_check(&p.ctx, &p.profile, p.lambda, p.m_rhs, p.diam, p.samples, seed)?;
            let trials: Vec<Row> = rep
                .trials
                .iter()
                .map(|&(e, m)| vec![num(e), num(m), (m >= p.m_rhs).to_string()])
                .collect();
            out.csv("epsilon_trials.csv", "table", &["epsilon", "min_det", "certified"], &trials)?;
            let checks = vec![Check::above("min-det", rep.min_det, p.m_rhs, true)];
            Ok((checks, json!({ "mode": "degenerate", "diam": p.diam, "barrier": rep })))
        }
    }
}

struct GridFit {
    x0: Vec<f64>,
    window: (f64, f64),
    depths: usize,
    predicted: f64,
    tolerance: f64,
}

struct SolvePlan {
    kind: ProblemKind,
    domain: Arc<GridDomain>,
    c: f64,
    k: f64,
    q: f64,
    inner: SolveOptions,
    fp: FixedPointOptions,
    fit: Option<GridFit>,
}

struct FitSettings {
    config: FitConfig,
    window: (f64, f64),
    depths: usize,
    predicted: f64,
    tolerance: f64,
}

fn fit_common(env: &Env, predicted: f64, default_window: (f64, f64)) -> Prep<FitSettings> {
    let f = env.cfg().fit.clone().unwrap_or_default();
    let window = (f.d_min.unwrap_or(default_window.0), f.d_max.unwrap_or(default_window.1));
    let depths = f.depths.unwrap_or(12);
    env.check(geometric_depths(window.0, window.1, depths), "fit", None)?;
    let predicted = f.predicted.unwrap_or(predicted);
    let tolerance = f.tolerance.unwrap_or(0.06);
    if !(tolerance > 0.0) {
        return Err(env.bad("fit", Some("tolerance"), "tolerance must be positive"));
    }
    Ok(FitSettings {
        config: f,
        window,
        depths,
        predicted,
        tolerance,
    })
}

fn prepare_solve(env: &Env, force_fit: bool) -> Prep<SolvePlan> {
    let n = env.dimension()?;
    let pr = env.problem();
    let kind = env.domain_kind(n)?;
    let domain = env.grid(kind)?;
    let (inner, fp) = env.solver_options()?;
    let (mut c, mut k, mut q) = (1.0, 0.0, 0.0);
    match pr.kind {
        ProblemKind::Constant => {
            c = pr.rhs.unwrap_or(1.0);
            if !(c >= 0.0 && c.is_finite()) {
                return Err(env.bad("problem", Some("rhs"), "constant right side must be non-negative"));
            }
        }
        ProblemKind::Singular => k = env.k()?,
        ProblemKind::Degenerate => q = env.q(n)?,
    }
    let fit = if force_fit || env.cfg().fit.is_some() {
        let a = env.tangential_a(n)?;
        let predicted = env.check(predicted_exponent(pr.kind, n, &a, k, q), "profile", None)?;
        let h = domain.spacing;
        let FitSettings {
            config,
            window,
            depths,
            predicted,
            tolerance,
        } = fit_common(env, predicted, (4.0 * h, 0.1 * domain.diam))?;
        let x0 = match config.x0 {
            Some(x) if x.len() != n => return Err(env.bad("fit", Some("x0"), format!("x0 needs {n} coordinates"))),
            Some(x) => x,
            None => {
                let c = domain.kind.interior_point();
                let mut e = vec![0.0; n];
                e[0] = 1.0;
                let t = domain.kind.ray_exit(&c, &e);
                c.iter().zip(&e).map(|(ci, ei)| ci + t * ei).collect()
            }
        };
        Some(GridFit {
            x0,
            window,
            depths,
            predicted,
            tolerance,
        })
    } else {
        None
    };
    Ok(SolvePlan {
        kind: pr.kind,
        domain,
        c,
        k,
        q,
        inner,
        fp,
        fit,
    })
}

fn solve_problem(p: &SolvePlan) -> Result<(GridFunction, SolveReport)> {
    match p.kind {
        ProblemKind::Constant => {
            let c = p.c;
            ma_solve(p.domain.clone(), move |_| c, p.inner)
        }
        ProblemKind::Singular => solve_singular(p.domain.clone(), p.k, p.fp),
        ProblemKind::Degenerate => solve_degenerate(p.domain.clone(), p.q, p.fp),
    }
}

fn grid_fit(u: &GridFunction, f: &GridFit) -> Result<(ExponentFit, Vec<(f64, f64)>)> {
    let depths = geometric_depths(f.window.0, f.window.1, f.depths)?;
    let points = normal_ray_samples(&u.domain.kind, &f.x0, &depths)?;
    let samples: Vec<(f64, f64)> = depths.iter().zip(&points).map(|(&d, x)| (d, u.value_at(x))).collect();
    Ok((fit_power_law(&samples, f.predicted)?, samples))
}

fn sample_rows(samples: &[(f64, f64)]) -> Vec<Row> {
    samples.iter().map(|&(d, u)| vec![num(d), num(u)]).collect()
}

fn run_solve(p: &SolvePlan, out: &mut Output) -> Result<(Vec<Check>, Value)> {
    let (u, rep) = solve_problem(p)?;
    let mut snap = Vec::new();
    u.write_snapshot(&mut snap)?;
    out.write("solution.txt", "snapshot", &snap)?;
    let center = p.domain.kind.interior_point();
    let tol = match p.kind {
        ProblemKind::Constant => p.inner.tol,
        ProblemKind::Singular => p.fp.tol.unwrap_or(SINGULAR_TOL),
        ProblemKind::Degenerate => p.fp.tol.unwrap_or(DEGENERATE_TOL),
    };
    let mut checks = vec![Check::below("residual", rep.residual, tol)];
    let mut details = json!({
        "problem": p.kind,
        "spacing": p.domain.spacing,
        "interior_nodes": p.domain.interior_count(),
        "center": center,
        "center_value": u.value_at(&center),
        "sup_norm": u.sup_norm(),
        "solve": rep,
    });
    if let Some(f) = &p.fit {
        let (fit, samples) = grid_fit(&u, f)?;
        out.csv("fit_samples.csv", "table", &["depth", "value"], &sample_rows(&samples))?;
        checks.push(Check::below("fit-gap", fit.abs_gap, f.tolerance));
        details["fit"] = json!({ "x0": f.x0, "result": fit });
    }
    Ok((checks, details))
}

struct RadialFit {
    n: usize,
    rhs: RadialRhs,
    radius: f64,
    window: (f64, f64),
    depths: usize,
    predicted: f64,
    tolerance: f64,
}

enum FitPlan {
    Grid(SolvePlan),
    Radial(RadialFit),
}

fn prepare_fit(env: &Env) -> Prep<FitPlan> {
    let source = env.cfg().fit.as_ref().map(|f| f.source).unwrap_or_default();
    if source == FitSource::Grid {
        return Ok(FitPlan::Grid(prepare_solve(env, true)?));
    }
    let n = env.dimension()?;
    let pr = env.problem();
    let radius = match env.domain_kind(n)? {
        DomainKind::Ball { radius, .. } => radius,
        _ => return Err(env.bad("domain", Some("kind"), "the radial oracle needs a ball domain")),
    };
    let (mut k, mut q) = (0.0, 0.0);
    let rhs = match pr.kind {
        ProblemKind::Constant => RadialRhs::Constant {
            c: pr.rhs.unwrap_or(1.0),
        },
        ProblemKind::Singular => {
            k = env.k()?;
            RadialRhs::Singular { k }
        }
        ProblemKind::Degenerate => {
            q = env.q(n)?;
            RadialRhs::Degenerate { coef: 1.0, q }
        }
    };
    let a = vec![2.0; n - 1];
    let predicted = env.check(predicted_exponent(pr.kind, n, &a, k, q), "problem", None)?;
    let FitSettings {
        window,
        depths,
        predicted,
        tolerance,
        ..
    } = fit_common(env, predicted, (1e-4 * radius, 1e-2 * radius))?;
    if window.1 >= radius {
        return Err(env.bad("fit", Some("d_max"), "fit window exceeds the radius"));
    }
    Ok(FitPlan::Radial(RadialFit {
        n,
        rhs,
        radius,
        window,
        depths,
        predicted,
        tolerance,
    }))
}

fn run_fit(p: &FitPlan, out: &mut Output) -> Result<(Vec<Check>, Value)> {
    let r = match p {
        FitPlan::Grid(s) => return run_solve(s, out),
        FitPlan::Radial(r) => r,
    };
    let sol = radial_oracle(r.n, r.rhs, r.radius, &RadialOptions::default())?;
    let fit = fit_radial_exponent(&sol, r.window, r.depths, r.predicted)?;
    let profile: Vec<Row> = sol.profile.iter().map(|q| vec![num(q[0]), num(q[1])]).collect();
    out.csv("radial_profile.csv", "table", &["r", "u"], &profile)?;
    let depths = geometric_depths(r.window.0, r.window.1, r.depths)?;
    let samples: Vec<(f64, f64)> = depths.iter().map(|&d| (d, sol.value_at(r.radius - d))).collect();
    out.csv("fit_samples.csv", "table", &["depth", "value"], &sample_rows(&samples))?;
    let checks = vec![Check::below("fit-gap", fit.abs_gap, r.tolerance)];
    let details = json!({
        "source": "radial",
        "rhs": r.rhs,
        "radius": r.radius,
        "u0": sol.u0,
        "shooting_residual": sol.residual,
        "fit": fit,
    });
    Ok((checks, details))
}

struct IteratePlan {
    ctx: ExponentContext,
    lambda0: f64,
    steps: usize,
}

fn prepare_iterate(env: &Env) -> Prep<IteratePlan> {
    let n = env.problem().n;
    if n < 2 {
        return Err(env.bad("problem", Some("n"), "dimension must be at least 2"));
    }
    let a = env.tangential_a(n)?;
    let ctx = env.check(ExponentContext::degenerate(n, env.q(n)?, a), "problem", None)?;
    let it = env.cfg().iterate.clone().unwrap_or_default();
    let lambda0 = match (it.lambda0, it.regime) {
        (Some(l), _) => l,
        (None, Regime::Upward) => lambda_start_upward(&ctx),
        (None, Regime::Downward) => env.check(lambda_start_downward(&ctx), "iterate", None)?,
    };
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(env.bad("iterate", Some("lambda0"), "lambda0 must be positive"));
    }
    Ok(IteratePlan {
        ctx,
        lambda0,
        steps: it.steps.unwrap_or(30),
    })
}

fn lambda_rows(seq: &crate::exponents::LambdaSequence, prefix: &[String]) -> Vec<Row> {
    (0..seq.len())
        .map(|j| {
            let mut r = prefix.to_vec();
            let ratio = if j == 0 || seq.deviations[j - 1] == 0.0 {
                String::new()
            } else {
                num(seq.deviations[j] / seq.deviations[j - 1])
            };
            r.extend([j.to_string(), num(seq.values[j]), num(seq.deviations[j]), ratio]);
            r
        })
        .collect()
}

/// Largest relative deviation from `|lambda_j - alpha| = r^j |lambda_0 - alpha|`.
fn geometric_law_error(seq: &crate::exponents::LambdaSequence) -> f64 {
    let d0 = seq.deviations[0].abs();
    (0..seq.len())
        .map(|j| {
            let expected = seq.ratio.powi(j as i32) * d0;
            let got = seq.deviations[j].abs();
            if expected == 0.0 {
                got
            } else {
                (got - expected).abs() / expected
            }
        })
        .fold(0.0, f64::max)
}

fn run_iterate(p: &IteratePlan, out: &mut Output) -> Result<(Vec<Check>, Value)> {
    let seq = lambda_iterate(&p.ctx, p.lambda0, p.steps)?;
    out.csv("lambda.csv", "table", &["j", "lambda", "deviation", "ratio"], &lambda_rows(&seq, &[]))?;
    let err = geometric_law_error(&seq);
    let checks = vec![Check::below("geometric-law", err, 1e-12)];
    let details = json!({
        "n": p.ctx.n,
        "q": p.ctx.q,
        "abar": p.ctx.abar(),
        "alpha": seq.alpha,
        "ratio": seq.ratio,
        "lambda0": seq.lambda0,
        "lambda1": seq.values.get(1),
        "upward": seq.is_upward(),
        "steps": p.steps,
    });
    Ok((checks, details))
}

struct SweepCell {
    a: f64,
    param: f64,
    spacing: Option<f64>,
}

enum SweepPlan {
    Exponents {
        kind: ProblemKind,
        n: usize,
        cells: Vec<SweepCell>,
        solve: bool,
        certify: bool,
        fp: FixedPointOptions,
        barrier: (f64, f64, usize),
    },
    Lambda {
        n: usize,
        cells: Vec<(f64, f64)>,
        lambda0: Option<f64>,
        steps: usize,
    },
}

fn prepare_sweep(env: &Env) -> Prep<SweepPlan> {
    let s = env
        .cfg()
        .sweep
        .clone()
        .ok_or_else(|| env.bad("sweep", None, "a [sweep] section is required"))?;
    let n = env.problem().n;
    if !(2..=3).contains(&n) && s.mode == SweepMode::Exponents {
        return Err(env.bad("problem", Some("n"), "dimension must be 2 or 3"));
    }
    let a_values = if s.a.is_empty() {
        let a = env.tangential_a(n)?;
        if a.windows(2).any(|w| w[0] != w[1]) {
            return Err(env.bad("sweep", Some("a"), "sweep cells use one exponent for every direction"));
        }
        vec![a[0]]
    } else {
        s.a.clone()
    };
    for &a in &a_values {
        if !(a >= 1.0) {
            return Err(env.bad("sweep", Some("a"), format!("exponent a = {a} must be >= 1")));
        }
    }
    let pr = env.problem();
    let params = |key: &str, list: &Option<Vec<f64>>, single: Option<f64>, default: Option<f64>| -> Prep<Vec<f64>> {
        match (list, single.or(default)) {
            (Some(l), _) if !l.is_empty() => Ok(l.clone()),
            (_, Some(v)) => Ok(vec![v]),
            _ => Err(env.bad("sweep", Some(key), format!("no values for `{key}`"))),
        }
    };
    match s.mode {
        SweepMode::Lambda => {
            let qs = params("q", &s.q, pr.q, None)?;
            let mut cells = Vec::new();
            for &a in &a_values {
                for &q in &qs {
                    env.check(ExponentContext::degenerate(n, q, vec![a; n - 1]), "sweep", Some("q"))?;
                    cells.push((a, q));
                }
            }
            Ok(SweepPlan::Lambda {
                n,
                cells,
                lambda0: s.lambda0,
                steps: s.steps.unwrap_or(30),
            })
        }
        SweepMode::Exponents => {
            let kind = pr.kind;
            let ps = match kind {
                ProblemKind::Singular => params("k", &s.k, pr.k, Some(1.0))?,
                ProblemKind::Degenerate => params("q", &s.q, pr.q, None)?,
                ProblemKind::Constant => vec![0.0],
            };
            let spacings: Vec<Option<f64>> = match &s.spacings {
                Some(v) if !v.is_empty() => v.iter().map(|&h| Some(h)).collect(),
                _ if s.solve => return Err(env.bad("sweep", Some("spacings"), "solving cells needs `spacings`")),
                _ => vec![None],
            };
            if let Some(h) = spacings.iter().flatten().find(|h| !(**h > 0.0 && **h < 0.5)) {
                return Err(env.bad("sweep", Some("spacings"), format!("spacing {h} must lie in (0, 0.5)")));
            }
            if s.certify && kind != ProblemKind::Singular {
                return Err(env.bad("sweep", Some("certify"), "certification sweeps need the singular problem"));
            }
            let mut cells = Vec::new();
            for &a in &a_values {
                for &p in &ps {
                    env.check(predicted_exponent(kind, n, &vec![a; n - 1], p, p), "sweep", None)?;
                    for &spacing in &spacings {
                        cells.push(SweepCell { a, param: p, spacing });
                    }
                }
            }
            let (_, fp) = env.solver_options()?;
            let b = env.cfg().barrier.clone().unwrap_or_default();
            let barrier = (b.d0.unwrap_or(0.5), b.diam.unwrap_or(2.0), b.samples.unwrap_or(10_000));
            Ok(SweepPlan::Exponents {
                kind,
                n,
                cells,
                solve: s.solve,
                certify: s.certify,
                fp,
                barrier,
            })
        }
    }
}

struct CellResult {
    row: Row,
    seconds: f64,
    error: Option<String>,
    checks: Vec<Check>,
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    kind: ProblemKind,
    n: usize,
    cell: &SweepCell,
    solve: bool,
    certify: bool,
    fp: FixedPointOptions,
    barrier: (f64, f64, usize),
    seed: u64,
) -> CellResult {
    let start = Instant::now();
    let a = vec![cell.a; n - 1];
    let formula = match kind {
        ProblemKind::Singular => ExponentContext::singular(n, cell.param, a.clone()).and_then(|c| theta(&c)),
        ProblemKind::Degenerate => ExponentContext::degenerate(n, cell.param, a.clone()).and_then(|c| alpha(&c)),
        ProblemKind::Constant => Ok(1.0),
    }
    .unwrap_or(f64::NAN);
    let predicted = predicted_exponent(kind, n, &a, cell.param, cell.param).unwrap_or(f64::NAN);
    let abar = crate::exponents::abar(&a).unwrap_or(f64::NAN);
    let mut row = vec![
        num(cell.a),
        num(abar),
        num(cell.param),
        cell.spacing.map(num).unwrap_or_default(),
        num(formula),
        num(predicted),
    ];
    let mut errors = Vec::new();
    let mut checks = Vec::new();
    let label = format!("a={},param={},h={}", cell.a, cell.param, cell.spacing.map(num).unwrap_or_default());
    if solve {
        let h = cell.spacing.unwrap_or(0.05);
        let res = (|| -> Result<ExponentFit> {
            let kindd = DomainKind::Superellipse {
                center: vec![0.0; n],
                semi_axes: vec![1.0; n],
                power: cell.a,
            };
            let domain = Arc::new(GridDomain::new(kindd, h)?);
            let (u, _) = match kind {
                ProblemKind::Singular => solve_singular(domain.clone(), cell.param, fp)?,
                ProblemKind::Degenerate => solve_degenerate(domain.clone(), cell.param, fp)?,
                ProblemKind::Constant => ma_solve(domain.clone(), |_| 1.0, fp.inner)?,
            };
            let mut x0 = vec![0.0; n];
            x0[0] = 1.0;
            let f = GridFit {
                x0,
                window: (4.0 * h, 0.1 * domain.diam),
                depths: 12,
                predicted,
                tolerance: 0.06,
            };
            Ok(grid_fit(&u, &f)?.0)
        })();
        match res {
            Ok(f) => {
                row.extend([num(f.lambda_hat), num(f.abs_gap)]);
                checks.push(Check::below(&format!("fit-gap[{label}]"), f.abs_gap, 0.06));
            }
            Err(e) => {
                row.extend([String::new(), String::new()]);
                errors.push(e.to_string());
            }
        }
    } else {
        row.extend([String::new(), String::new()]);
    }
    if certify {
        let r = ExponentContext::singular(n, cell.param, a.clone()).and_then(|ctx| {
            let profile = AnisotropyProfile::new(a.clone(), vec![1.0; n - 1], None)?;
            certify_singular(&ctx, &profile, barrier.0, barrier.1, barrier.2, barrier.2, seed)
        });
        match r {
            Ok((rep, hs)) => {
                let m = hs.iter().cloned().fold(f64::INFINITY, f64::min);
                row.extend([num(rep.epsilon0), num(m)]);
                checks.push(Check::above(&format!("fresh-min-h[{label}]"), m, 1.0, false));
            }
            Err(e) => {
                row.extend([String::new(), String::new()]);
                errors.push(e.to_string());
            }
        }
    } else {
        row.extend([String::new(), String::new()]);
    }
    let error = if errors.is_empty() { None } else { Some(errors.join("; ")) };
    row.push(if error.is_some() { "error" } else { "ok" }.into());
    CellResult {
        row,
        seconds: start.elapsed().as_secs_f64(),
        error,
        checks,
    }
}

fn run_sweep(p: &SweepPlan, out: &mut Output, seed: u64) -> Result<(Vec<Check>, Value)> {
    match p {
        SweepPlan::Lambda { n, cells, lambda0, steps } => {
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for &(a, q) in cells {
                let ctx = ExponentContext::degenerate(*n, q, vec![a; n - 1])?;
                let l0 = lambda0.unwrap_or_else(|| lambda_start_upward(&ctx));
                let seq = lambda_iterate(&ctx, l0, *steps)?;
                worst = worst.max(geometric_law_error(&seq));
                rows.extend(lambda_rows(&seq, &[n.to_string(), num(a), num(ctx.abar()), num(q)]));
            }
            out.csv(
                "sweep.csv",
                "table",
                &["n", "a", "abar", "q", "j", "lambda", "deviation", "ratio"],
                &rows,
            )?;
            let checks = vec![Check::below("geometric-law", worst, 1e-12)];
            Ok((checks, json!({ "mode": "lambda", "cells": cells.len(), "rows": rows.len() })))
        }
        SweepPlan::Exponents {
            kind,
            n,
            cells,
            solve,
            certify,
            fp,
            barrier,
        } => {
            let results: Vec<CellResult> = cells
                .par_iter()
                .map(|c| sweep_cell(*kind, *n, c, *solve, *certify, *fp, *barrier, seed))
                .collect();
            let param = if *kind == ProblemKind::Degenerate { "q" } else { "k" };
            let header = [
                "a", "abar", param, "spacing", "formula", "predicted", "fitted", "gap", "epsilon0", "fresh_min_h",
                "status",
            ];
            let rows: Vec<Row> = results.iter().map(|r| r.row.clone()).collect();
            out.csv("sweep.csv", "table", &header, &rows)?;
            let timings: Vec<Row> = results
                .iter()
                .enumerate()
                .map(|(i, r)| vec![i.to_string(), num(r.seconds)])
                .collect();
            out.csv("sweep_timings.csv", "timing", &["row", "seconds"], &timings)?;
            let failed: Vec<Value> = results
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.error.as_ref().map(|e| json!({ "row": i, "error": e })))
                .collect();
            let mut checks = vec![Check::below("failed-cells", failed.len() as f64, 0.0)];
            checks.extend(results.into_iter().flat_map(|r| r.checks));
            Ok((checks, json!({ "mode": "exponents", "problem": kind, "n": n, "cells": cells.len(), "failures": failed })))
        }
    }
}

enum Plan {
    Barrier(BarrierPlan),
    Solve(SolvePlan),
    Fit(FitPlan),
    Iterate(IteratePlan),
    Sweep(SweepPlan),
}

fn error_details(e: &Error) -> Value {
    match e {
        Error::Convergence { iterations, residual, history } => {
            json!({ "iterations": iterations, "residual": residual, "history": history })
        }
        Error::DegenerateFixedPoint { sup_norm } => json!({ "sup_norm": sup_norm }),
        _ => Value::Null,
    }
}

/// Validate the config for `command`, run it and write all outputs.
///
/// Configuration problems come back as `Err`; failures during the run are
/// recorded in the returned report, whose exit code is then 1.
pub fn execute(command: CommandKind, loaded: &LoadedConfig, out: &Path, seed: Option<u64>) -> Prep<RunReport> {
    let env = Env { loaded };
    if let Some(c) = env.cfg().command {
        if c != command {
            return Err(env.bad(
                "",
                Some("command"),
                format!("config is for `{}`, not `{}`", c.name(), command.name()),
            ));
        }
    }
    let seed = seed.or(env.cfg().seed).unwrap_or(0);
    let plan = match command {
        CommandKind::VerifyBarrier => Plan::Barrier(prepare_barrier(&env)?),
        CommandKind::Solve => Plan::Solve(prepare_solve(&env, false)?),
        CommandKind::FitExponent => Plan::Fit(prepare_fit(&env)?),
        CommandKind::IterateExponents => Plan::Iterate(prepare_iterate(&env)?),
        CommandKind::Sweep => Plan::Sweep(prepare_sweep(&env)?),
    };
    let mut output = Output::create(out).map_err(Failure::Output)?;
    let start = Instant::now();
    let result = match &plan {
        Plan::Barrier(p) => run_barrier(p, &mut output, seed),
        Plan::Solve(p) => run_solve(p, &mut output),
        Plan::Fit(p) => run_fit(p, &mut output),
        Plan::Iterate(p) => run_iterate(p, &mut output),
        Plan::Sweep(p) => run_sweep(p, &mut output, seed),
    };
    let wall = start.elapsed().as_secs_f64();
    let (checks, details, error) = match result {
        Ok((c, d)) => (c, d, None),
        Err(e) => (Vec::new(), error_details(&e), Some(e.to_string())),
    };
    let mut report = RunReport {
        schema: REPORT_SCHEMA,
        command: command.name().into(),
        seed,
        config: serde_json::to_value(&loaded.config).unwrap_or(Value::Null),
        checks,
        error,
        details,
        files: Vec::new(),
    };
    output
        .json("timings.json", "timing", &json!({ "wall_seconds": wall }))
        .map_err(Failure::Output)?;
    output.finish(&mut report).map_err(Failure::Output)?;
    Ok(report)
}
