//! Bounded convex domains, anisotropic convexity data and boundary distances.
//!
//! A domain is described by a [`DomainKind`] with an exact membership
//! predicate. Distances to the boundary are exact for balls and boxes; for
//! the model and superellipse domains they are computed as the minimum over
//! directions of the ray-exit distance, each exit found by bisection on the
//! membership predicate (valid because every domain here is convex).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{abar, FLAT_CUTOFF};

/// Slack accepted by the sampled convexity certificates, relative to the domain size.
pub const CERT_TOL: f64 = 1e-9;

const BISECT_TOL: f64 = 1e-13;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn axpy(x: &[f64], t: f64, dir: &[f64]) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + t * d).collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let l = norm(v);
    v.iter().map(|x| x / l).collect()
}

/// Convexity data `(a_i, eta_i, h)` of the model region
/// `{ sum eta_i |x_i|^{a_i} < x_n < h }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyProfile {
    pub a: Vec<f64>,
    pub eta: Vec<f64>,
    pub h: Option<f64>,
}

impl AnisotropyProfile {
    pub fn new(a: Vec<f64>, eta: Vec<f64>, h: Option<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidProfile("need at least one tangential exponent".into()));
        }
        if a.len() != eta.len() {
            return Err(Error::InvalidProfile(format!(
                "a has {} entries but eta has {}",
                a.len(),
                eta.len()
            )));
        }
        abar(&a)?;
        if let Some(i) = eta.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidProfile(format!("eta[{i}] = {} must be positive", eta[i])));
        }
        if let Some(h) = h {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidProfile(format!("height h = {h} must be positive")));
            }
        }
        Ok(Self { a, eta, h })
    }

    /// Dimension `n` of the ambient space.
    pub fn dim(&self) -> usize {
        self.a.len() + 1
    }

    pub fn eta_max(&self) -> f64 {
        self.eta.iter().cloned().fold(0.0, f64::max)
    }

    pub fn eta_min(&self) -> f64 {
        self.eta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_flat(&self, i: usize) -> bool {
        2.0 / self.a[i] < FLAT_CUTOFF
    }

    /// `sum eta_i |x_i|^{a_i}` over the tangential coordinates, flat terms dropped.
    pub fn model_height(&self, tangential: &[f64]) -> f64 {
        tangential
            .iter()
            .enumerate()
            .filter(|&(i, _)| !self.is_flat(i))
            .map(|(i, x)| self.eta[i] * x.abs().powf(self.a[i]))
            .sum()
    }

    fn model_gradient(&self, tangential: &[f64]) -> Vec<f64> {
        tangential
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.is_flat(i) || x == 0.0 {
                    0.0
                } else {
                    self.eta[i] * self.a[i] * x.abs().powf(self.a[i] - 1.0) * x.signum()
                }
            })
            .collect()
    }

    fn require_h(&self) -> Result<f64> {
        self.h
            .ok_or_else(|| Error::InvalidProfile("interior-model height h is required".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainKind {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ sum |(x_i - c_i)/r_i|^p < 1 }`
    Superellipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        power: f64,
    },
    /// `{ sum eta_i |x_i|^{a_i} < x_n < h }`, capped above by the lid `x_n = h`.
    InteriorModel { profile: AnisotropyProfile },
}

impl DomainKind {
    pub fn ball(n: usize, radius: f64) -> Self {
        DomainKind::Ball {
            center: vec![0.0; n],
            radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainKind::Ball { center, radius } => {
                if !(2..=3).contains(&center.len()) {
                    return Err(Error::Construction("only n = 2 or 3 is supported".into()));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Construction(format!("radius {radius} must be positive")));
                }
            }
            DomainKind::Box { lo, hi } => {
                if lo.len() != hi.len() || !(2..=3).contains(&lo.len()) {
                    return Err(Error::Construction("box corners must be 2- or 3-vectors".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
                    return Err(Error::Construction("box has zero or negative extent".into()));
                }
            }
            DomainKind::Superellipse {
                center,
                semi_axes,
                power,
            } => {
                if center.len() != semi_axes.len() || !(2..=3).contains(&center.len()) {
                    return Err(Error::Construction("superellipse dimension mismatch".into()));
                }
                if semi_axes.iter().any(|r| !(*r > 0.0)) {
                    return Err(Error::Construction("superellipse semi-axes must be positive".into()));
                }
                if !(*power >= 1.0) {
                    return Err(Error::Construction(format!(
                        "superellipse power {power} must be >= 1 for convexity"
                    )));
                }
            }
            DomainKind::InteriorModel { profile } => {
                profile.require_h()?;
                if !(2..=3).contains(&profile.dim()) {
                    return Err(Error::Construction("only n = 2 or 3 is supported".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainKind::Ball { center, .. } => center.len(),
            DomainKind::Box { lo, .. } => lo.len(),
            DomainKind::Superellipse { center, .. } => center.len(),
            DomainKind::InteriorModel { profile } => profile.dim(),
        }
    }

    /// Exact membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainKind::Ball { center, radius } => norm(&sub(x, center)) < *radius,
            DomainKind::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v > l && v < h),
            DomainKind::Superellipse {
                center,
                semi_axes,
                power,
            } => superellipse_level(x, center, semi_axes, *power) < 1.0,
            DomainKind::InteriorModel { profile } => {
                let n = profile.dim();
                let top = profile.h.unwrap_or(f64::INFINITY);
                let xn = x[n - 1];
                profile.model_height(&x[..n - 1]) < xn && xn < top
            }
        }
    }

    /// Membership in the closure, up to a relative slack.
    fn contains_closed(&self, x: &[f64], slack: f64) -> bool {
        match self {
            DomainKind::Ball { center, radius } => norm(&sub(x, center)) <= radius * (1.0 + slack),
            DomainKind::Box { lo, hi } => {
                let s = slack * self.scale();
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - s && *v <= h + s)
            }
            DomainKind::Superellipse {
                center,
                semi_axes,
                power,
            } => superellipse_level(x, center, semi_axes, *power) <= 1.0 + slack,
            DomainKind::InteriorModel { profile } => {
                let n = profile.dim();
                let s = slack * self.scale();
                let xn = x[n - 1];
                profile.model_height(&x[..n - 1]) <= xn + s && xn <= profile.h.unwrap_or(f64::INFINITY) + s
            }
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            DomainKind::Box { lo, hi } => (lo.clone(), hi.clone()),
            DomainKind::Superellipse { center, semi_axes, .. } => (
                center.iter().zip(semi_axes).map(|(c, r)| c - r).collect(),
                center.iter().zip(semi_axes).map(|(c, r)| c + r).collect(),
            ),
            DomainKind::InteriorModel { profile } => {
                let n = profile.dim();
                let h = profile.h.unwrap_or(1.0);
                let mut lo = vec![0.0; n];
                let mut hi = vec![h; n];
                for i in 0..n - 1 {
                    let reach = if profile.is_flat(i) {
                        // a flat direction is unbounded; cap at the height scale
                        h.max(1.0)
                    } else {
                        (h / profile.eta[i]).powf(1.0 / profile.a[i])
                    };
                    lo[i] = -reach;
                    hi[i] = reach;
                }
                lo[n - 1] = 0.0;
                (lo, hi)
            }
        }
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm(&sub(&hi, &lo))
    }

    /// A fixed interior reference point.
    pub fn interior_point(&self) -> Vec<f64> {
        match self {
            DomainKind::Ball { center, .. } => center.clone(),
            DomainKind::Superellipse { center, .. } => center.clone(),
            DomainKind::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            DomainKind::InteriorModel { profile } => {
                let n = profile.dim();
                let mut c = vec![0.0; n];
                c[n - 1] = 0.5 * profile.h.unwrap_or(1.0);
                c
            }
        }
    }

    /// Distance from an interior point `x` to the boundary along the unit direction `dir`.
    pub fn ray_exit(&self, x: &[f64], dir: &[f64]) -> f64 {
        match self {
            DomainKind::Ball { center, radius } => {
                let y = sub(x, center);
                let b = dot(&y, dir);
                let c = dot(&y, &y) - radius * radius;
                let disc = (b * b - c).max(0.0);
                (-b + disc.sqrt()).max(0.0)
            }
            DomainKind::Box { lo, hi } => {
                let mut t = f64::INFINITY;
                for i in 0..x.len() {
                    if dir[i] > 0.0 {
                        t = t.min((hi[i] - x[i]) / dir[i]);
                    } else if dir[i] < 0.0 {
                        t = t.min((lo[i] - x[i]) / dir[i]);
                    }
                }
                t.max(0.0)
            }
            _ => self.bisect_exit(x, dir),
        }
    }

    fn bisect_exit(&self, x: &[f64], dir: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let scale = self.scale();
        let mut hi = scale;
        // the bounding-box diagonal is an upper bound on any chord
        while self.contains(&axpy(x, hi, dir)) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        let tol = BISECT_TOL * scale;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.contains(&axpy(x, mid, dir)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `dist(x, boundary)` for `x` in the closure of the domain.
    pub fn dist_to_boundary(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!("point has dimension {}, domain has {}", x.len(), self.dim())));
        }
        if !self.contains_closed(x, 1e-12) {
            return Err(Error::Domain(format!("point {x:?} lies outside the closed domain")));
        }
        if !self.contains(x) {
            return Ok(0.0);
        }
        Ok(match self {
            DomainKind::Ball { center, radius } => (radius - norm(&sub(x, center))).max(0.0),
            DomainKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            _ => {
                let dirs = sphere_directions(self.dim(), 96);
                self.min_exit_from(x, &dirs)
            }
        })
    }

    /// Minimum ray-exit distance, seeded by the given directions and refined
    /// by a shrinking pattern search around the best few seeds.
    pub(crate) fn min_exit_from(&self, x: &[f64], seeds: &[Vec<f64>]) -> f64 {
        let mut scored: Vec<(f64, &Vec<f64>)> = seeds.iter().map(|d| (self.ray_exit(x, d), d)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = f64::INFINITY;
        for (t0, d0) in scored.iter().take(3) {
            best = best.min(self.refine_direction(x, d0, *t0));
        }
        best
    }

    fn refine_direction(&self, x: &[f64], start: &[f64], t_start: f64) -> f64 {
        let n = x.len();
        let mut dir = start.to_vec();
        let mut best = t_start;
        let mut step = 0.2;
        while step > 1e-9 {
            let tangents = tangent_basis(&dir);
            let mut improved = false;
            for t in tangents.iter().take(n - 1) {
                for sgn in [1.0, -1.0] {
                    let cand = normalize(&axpy(&dir, sgn * step, t));
                    let v = self.ray_exit(x, &cand);
                    if v < best {
                        best = v;
                        dir = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }

    /// Inward unit normal at a boundary point (axis of the model region at corners).
    pub fn inward_normal(&self, x0: &[f64]) -> Vec<f64> {
        let n = self.dim();
        match self {
            DomainKind::Ball { center, .. } => normalize(&sub(center, x0)),
            DomainKind::Box { lo, hi } => {
                let tol = 1e-9 * self.scale();
                let mut v = vec![0.0; n];
                for i in 0..n {
                    if (x0[i] - lo[i]).abs() < tol {
                        v[i] += 1.0;
                    }
                    if (x0[i] - hi[i]).abs() < tol {
                        v[i] -= 1.0;
                    }
                }
                if norm(&v) == 0.0 {
                    return normalize(&sub(&self.interior_point(), x0));
                }
                normalize(&v)
            }
            DomainKind::Superellipse {
                center,
                semi_axes,
                power,
            } => {
                let g: Vec<f64> = (0..n)
                    .map(|i| {
                        let y = (x0[i] - center[i]) / semi_axes[i];
                        -power * y.abs().powf(power - 1.0) * y.signum() / semi_axes[i]
                    })
                    .collect();
                if norm(&g) == 0.0 {
                    return normalize(&sub(center, x0));
                }
                normalize(&g)
            }
            DomainKind::InteriorModel { profile } => {
                let tol = 1e-9 * self.scale();
                let h = profile.h.unwrap_or(f64::INFINITY);
                let on_lid = (x0[n - 1] - h).abs() < tol;
                let on_graph = (x0[n - 1] - profile.model_height(&x0[..n - 1])).abs() < tol;
                let mut v = vec![0.0; n];
                if on_graph {
                    let g = profile.model_gradient(&x0[..n - 1]);
                    let mut w: Vec<f64> = g.iter().map(|x| -x).collect();
                    w.push(1.0);
                    let w = normalize(&w);
                    for i in 0..n {
                        v[i] += w[i];
                    }
                }
                if on_lid {
                    v[n - 1] -= 1.0;
                }
                if norm(&v) == 0.0 {
                    return normalize(&sub(&self.interior_point(), x0));
                }
                normalize(&v)
            }
        }
    }

    /// Orthonormal frame at `x0` whose last vector is the inward normal.
    pub fn boundary_frame(&self, x0: &[f64]) -> Vec<Vec<f64>> {
        let normal = self.inward_normal(x0);
        let mut frame = tangent_basis(&normal);
        frame.push(normal);
        frame
    }

    /// Boundary points sampled along rays from the interior reference point.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec<f64>> {
        let c = self.interior_point();
        sphere_directions(self.dim(), count)
            .into_iter()
            .map(|u| {
                let t = self.ray_exit(&c, &u);
                axpy(&c, t, &u)
            })
            .collect()
    }

    /// Diameter: exact for balls and boxes, sampled otherwise.
    pub fn diameter(&self) -> f64 {
        match self {
            DomainKind::Ball { radius, .. } => 2.0 * radius,
            DomainKind::Box { lo, hi } => norm(&sub(hi, lo)),
            _ => {
                let pts = self.boundary_samples(if self.dim() == 2 { 1440 } else { 1500 });
                let mut d: f64 = 0.0;
                for (i, p) in pts.iter().enumerate() {
                    for q in &pts[i + 1..] {
                        d = d.max(norm(&sub(p, q)));
                    }
                }
                d
            }
        }
    }

    /// Gauge margin of `x`: positive inside, zero on the boundary, negative outside.
    pub(crate) fn gauge_margin(&self, x: &[f64]) -> f64 {
        let c = self.interior_point();
        let v = sub(x, &c);
        let r = norm(&v);
        if r == 0.0 {
            return self.ray_exit(&c, &tangent_basis(&unit(self.dim(), self.dim() - 1))[0]);
        }
        let u: Vec<f64> = v.iter().map(|x| x / r).collect();
        self.ray_exit(&c, &u) - r
    }
}

fn superellipse_level(x: &[f64], center: &[f64], semi_axes: &[f64], power: f64) -> f64 {
    x.iter()
        .zip(center.iter().zip(semi_axes))
        .map(|(v, (c, r))| ((v - c) / r).abs().powf(power))
        .sum()
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Orthonormal completion of `normal` by Gram-Schmidt on the coordinate axes,
/// in order, skipping axes nearly parallel to the normal. Gives the identity
/// tangent frame when `normal = e_n`.
pub(crate) fn tangent_basis(normal: &[f64]) -> Vec<Vec<f64>> {
    let n = normal.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        if basis.len() == n - 1 {
            break;
        }
        let mut v = unit(n, i);
        let p = dot(&v, normal);
        v = axpy(&v, -p, normal);
        for b in &basis {
            let p = dot(&v, b);
            v = axpy(&v, -p, b);
        }
        let l = norm(&v);
        if l > 0.5 {
            basis.push(v.iter().map(|x| x / l).collect());
        }
    }
    basis
}

/// Deterministic, nearly uniform unit directions (angles in 2-D, a Fibonacci
/// lattice in 3-D, fixed-seed Gaussian draws above).
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    let count = count.max(1);
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / count as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            (0..count)
                .map(|_| {
                    // Box-Muller normals give uniformly distributed directions
                    let g: Vec<f64> = (0..n)
                        .map(|_| {
                            let u1: f64 = 1.0 - rng.gen::<f64>();
                            let u2: f64 = rng.gen();
                            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                        })
                        .collect();
                    normalize(&g)
                })
                .collect()
        }
    }
}

/// Outcome of a sampled convexity certificate. A finite sample at one boundary
/// point cannot certify the condition at every boundary point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub holds: bool,
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub samples: usize,
    pub note: String,
}

fn certificate(margins: Vec<(f64, Vec<f64>)>, tol: f64) -> ConvexityCertificate {
    let samples = margins.len();
    let (worst_margin, worst_point) = margins
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, Vec::new()));
    ConvexityCertificate {
        holds: worst_margin >= -tol,
        worst_margin,
        worst_point,
        samples,
        note: "sampled certificate at a single boundary point; not a proof for all boundary points".into(),
    }
}

fn to_local(frame: &[Vec<f64>], x0: &[f64], x: &[f64]) -> Vec<f64> {
    let d = sub(x, x0);
    frame.iter().map(|e| dot(e, &d)).collect()
}

fn to_global(frame: &[Vec<f64>], x0: &[f64], z: &[f64]) -> Vec<f64> {
    let mut x = x0.to_vec();
    for (e, zi) in frame.iter().zip(z) {
        for (xj, ej) in x.iter_mut().zip(e) {
            *xj += zi * ej;
        }
    }
    x
}

/// Sample the closed domain: boundary rays plus interior points along them.
fn domain_samples(kind: &DomainKind, count: usize) -> Vec<Vec<f64>> {
    let c = kind.interior_point();
    let n_boundary = (3 * count / 4).max(1);
    let n_interior = count.saturating_sub(n_boundary);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut out = kind.boundary_samples(n_boundary);
    for (i, u) in sphere_directions(kind.dim(), n_interior.max(1)).into_iter().enumerate().take(n_interior) {
        let t = kind.ray_exit(&c, &u);
        let s = ((i as f64 + 1.0) * golden).fract();
        out.push(axpy(&c, s * t, &u));
    }
    out
}

/// Check `Omega subset { x_n > sum eta_i |x_i|^{a_i} }` after moving `x0` to the
/// origin with inward axis `x_n`.
pub fn check_exterior_convexity(
    kind: &DomainKind,
    x0: &[f64],
    profile: &AnisotropyProfile,
    sample_count: usize,
) -> ConvexityCertificate {
    let frame = kind.boundary_frame(x0);
    let n = kind.dim();
    let scale = kind.scale();
    let margins = domain_samples(kind, sample_count)
        .into_iter()
        .filter(|p| norm(&sub(p, x0)) > 1e-9 * scale)
        .map(|p| {
            let z = to_local(&frame, x0, &p);
            (z[n - 1] - profile.model_height(&z[..n - 1]), p)
        })
        .collect();
    certificate(margins, CERT_TOL * scale)
}

/// Boundary of the model region `{ g(z') < z_n < h }` in local coordinates.
fn model_region_boundary(profile: &AnisotropyProfile, h: f64, count: usize) -> Vec<Vec<f64>> {
    let m = profile.dim() - 1;
    let dirs: Vec<Vec<f64>> = if m == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        sphere_directions(m, (count as f64).sqrt().ceil() as usize)
    };
    let per_dir = (count / (2 * dirs.len())).max(2);
    let mut out = vec![vec![0.0; m + 1]];
    for u in &dirs {
        // radius where the model surface meets the lid
        let mut hi = 1.0;
        while profile.model_height(&u.iter().map(|x| x * hi).collect::<Vec<_>>()) < h && hi < 1e6 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if profile.model_height(&u.iter().map(|x| x * mid).collect::<Vec<_>>()) < h {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rmax = lo;
        for j in 1..=per_dir {
            let s = j as f64 / per_dir as f64;
            // quadratic spacing concentrates samples near the tip
            let rho = rmax * s * s;
            let zt: Vec<f64> = u.iter().map(|x| x * rho).collect();
            let mut surf = zt.clone();
            surf.push(profile.model_height(&zt).min(h));
            out.push(surf);
            let mut lid = zt;
            lid.push(h);
            out.push(lid);
        }
    }
    out
}

/// Check `{ g < x_n < h } subset Omega subset R^n_+` after normalizing at `x0`.
pub fn check_interior_convexity(
    kind: &DomainKind,
    x0: &[f64],
    profile: &AnisotropyProfile,
    sample_count: usize,
) -> Result<ConvexityCertificate> {
    let h = profile.require_h()?;
    let frame = kind.boundary_frame(x0);
    let n = kind.dim();
    let scale = kind.scale();
    let half = (sample_count / 2).max(1);
    let mut margins: Vec<(f64, Vec<f64>)> = domain_samples(kind, half)
        .into_iter()
        .map(|p| (to_local(&frame, x0, &p)[n - 1], p))
        .collect();
    for z in model_region_boundary(profile, h, sample_count - half) {
        let x = to_global(&frame, x0, &z);
        margins.push((kind.gauge_margin(&x), x));
    }
    Ok(certificate(margins, CERT_TOL * scale))
}

/// Points `x0 + t * nu` along the inward normal whose nearest boundary point is `x0`.
pub fn normal_ray_samples(kind: &DomainKind, x0: &[f64], depths: &[f64]) -> Result<Vec<Vec<f64>>> {
    let normal = kind.inward_normal(x0);
    let mut out = Vec::with_capacity(depths.len());
    let mut prev = 0.0;
    for &t in depths {
        if !(t >= 0.0) || t < prev {
            return Err(Error::Domain("depths must be non-negative and increasing".into()));
        }
        prev = t;
        let p = axpy(x0, t, &normal);
        if t == 0.0 {
            out.push(p);
            continue;
        }
        let d = kind.dist_to_boundary(&p).map_err(|e| Error::RayExit {
            depth: t,
            reason: e.to_string(),
        })?;
        if (d - t).abs() > 1e-8 * t.max(1.0) {
            return Err(Error::RayExit {
                depth: t,
                reason: format!("distance to boundary is {d}, nearest point is no longer x0"),
            });
        }
        out.push(p);
    }
    Ok(out)
}

/// Stencil arm from a node: either a full step to an interior neighbour or a
/// shortened step ending on the boundary (where the Dirichlet value applies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub neighbor: Option<usize>,
    /// Arm length as a fraction of the full step.
    pub frac: f64,
}

/// A bounded convex domain discretized on a uniform grid whose nodes sit at
/// integer multiples of the spacing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDomain {
    pub kind: DomainKind,
    pub n: usize,
    pub spacing: f64,
    /// Integer index of the first node along each axis.
    pub offset: Vec<i64>,
    pub shape: Vec<usize>,
    pub interior: Vec<bool>,
    pub dist: Vec<f64>,
    pub diam: f64,
    /// Distance from the origin to the boundary when the origin is interior.
    pub d0: Option<f64>,
}

impl GridDomain {
    pub fn new(kind: DomainKind, spacing: f64) -> Result<Self> {
        kind.validate()?;
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Construction(format!("grid spacing {spacing} must be positive")));
        }
        let n = kind.dim();
        let (lo, hi) = kind.bounding_box();
        let narrowest = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min);
        if narrowest / spacing < 16.0 {
            return Err(Error::Construction(format!(
                "need at least 16 nodes across the narrowest extent {narrowest}, spacing {spacing}"
            )));
        }
        let offset: Vec<i64> = lo.iter().map(|l| (l / spacing).floor() as i64 - 1).collect();
        let last: Vec<i64> = hi.iter().map(|h| (h / spacing).ceil() as i64 + 1).collect();
        let shape: Vec<usize> = offset.iter().zip(&last).map(|(a, b)| (b - a + 1) as usize).collect();
        let total: usize = shape.iter().product();
        let mut grid = GridDomain {
            diam: kind.diameter(),
            kind,
            n,
            spacing,
            offset,
            shape,
            interior: vec![false; total],
            dist: vec![0.0; total],
            d0: None,
        };
        let seeds = stencil_directions(n);
        for idx in 0..total {
            let x = grid.coords(idx);
            if grid.kind.contains(&x) {
                grid.interior[idx] = true;
                grid.dist[idx] = match &grid.kind {
                    DomainKind::Ball { .. } | DomainKind::Box { .. } => grid.kind.dist_to_boundary(&x)?,
                    _ => grid.kind.min_exit_from(&x, &seeds),
                };
            }
        }
        let origin = vec![0.0; n];
        if grid.kind.contains(&origin) {
            grid.d0 = Some(grid.kind.dist_to_boundary(&origin)?);
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.interior[i])
    }

    /// Grid estimate of the domain volume.
    pub fn volume(&self) -> f64 {
        match &self.kind {
            DomainKind::Ball { radius, .. } if self.n == 2 => std::f64::consts::PI * radius * radius,
            DomainKind::Ball { radius, .. } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            DomainKind::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            _ => self.interior_count() as f64 * self.spacing.powi(self.n as i32),
        }
    }

    pub fn multi_index(&self, idx: usize) -> Vec<i64> {
        let mut rem = idx;
        let mut out = Vec::with_capacity(self.n);
        for d in 0..self.n {
            out.push((rem % self.shape[d]) as i64 + self.offset[d]);
            rem /= self.shape[d];
        }
        out
    }

    /// Linear index of the node with the given integer coordinates, if on the grid.
    pub fn index_of(&self, ijk: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for d in 0..self.n {
            let local = ijk[d] - self.offset[d];
            if local < 0 || local as usize >= self.shape[d] {
                return None;
            }
            idx += local as usize * stride;
            stride *= self.shape[d];
        }
        Some(idx)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().map(|&i| i as f64 * self.spacing).collect()
    }

    /// Arm from `idx` along the integer offset `v`.
    pub fn arm(&self, idx: usize, v: &[i64]) -> Arm {
        let ijk = self.multi_index(idx);
        let target: Vec<i64> = ijk.iter().zip(v).map(|(a, b)| a + b).collect();
        if let Some(j) = self.index_of(&target) {
            if self.interior[j] {
                return Arm {
                    neighbor: Some(j),
                    frac: 1.0,
                };
            }
        }
        let x = self.coords(idx);
        let vf: Vec<f64> = v.iter().map(|&c| c as f64).collect();
        let len = norm(&vf);
        let dir: Vec<f64> = vf.iter().map(|c| c / len).collect();
        let t = self.kind.ray_exit(&x, &dir);
        Arm {
            neighbor: None,
            frac: (t / (len * self.spacing)).clamp(1e-12, 1.0),
        }
    }
}

/// Half of the integer neighbourhood offsets (one of each `+v / -v` pair):
/// the 4 directions of the 8-point stencil in 2-D and 13 of the 26-point
/// stencil in 3-D.
pub fn half_neighborhood(n: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let range = [-1i64, 0, 1];
    let mut push = |v: Vec<i64>| {
        let first = v.iter().find(|&&c| c != 0).copied();
        if first == Some(1) {
            out.push(v);
        }
    };
    if n == 2 {
        for a in range {
            for b in range {
                push(vec![a, b]);
            }
        }
    } else {
        for a in range {
            for b in range {
                for c in range {
                    push(vec![a, b, c]);
                }
            }
        }
    }
    out
}

fn stencil_directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for v in half_neighborhood(n) {
        let f: Vec<f64> = v.iter().map(|&c| c as f64).collect();
        let u = normalize(&f);
        out.push(u.iter().map(|x| -x).collect());
        out.push(u);
    }
    out
}
