//! Monge-Ampere measures of piecewise-linear convex functions in the plane.
//!
//! The subgradient of the lower convex envelope at node `i` is the polygon
//! `{ p : p.(x_j - x_i) <= f_j - f_i for all j }`, built by clipping a box
//! with one half-plane per node. Its area is the node's Monge-Ampere mass.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GridDomain;

pub type Point = [f64; 2];

const HULL_TOL: f64 = 1e-12;

/// Values at scattered nodes in the plane, read as the lower convex envelope
/// of the lifted points. Nodes on the convex hull of the node set are boundary
/// nodes; nodes lifted strictly above the envelope are redundant (empty cell).
#[derive(Debug, Clone, Serialize)]
pub struct PLConvexFunction {
    pub nodes: Vec<Point>,
    pub values: Vec<f64>,
    pub boundary: Vec<bool>,
    scale: f64,
    buckets: Buckets,
}

#[derive(Debug, Clone, Serialize)]
struct Buckets {
    origin: Point,
    size: f64,
    dims: [usize; 2],
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(nodes: &[Point]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(f64::MIN_POSITIVE);
        let size = (2.0 * area / nodes.len() as f64).sqrt().max(1e-300);
        let dims = [
            ((hi[0] - lo[0]) / size) as usize + 1,
            ((hi[1] - lo[1]) / size) as usize + 1,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1]];
        let mut out = Self {
            origin: lo,
            size,
            dims,
            cells: Vec::new(),
        };
        for (i, p) in nodes.iter().enumerate() {
            let (a, b) = out.cell_of(p);
            cells[a + dims[0] * b].push(i);
        }
        out.cells = cells;
        out
    }

    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let a = (((p[0] - self.origin[0]) / self.size) as usize).min(self.dims[0] - 1);
        let b = (((p[1] - self.origin[1]) / self.size) as usize).min(self.dims[1] - 1);
        (a, b)
    }

    fn near(&self, p: &Point, reach: usize) -> Vec<usize> {
        let (a, b) = self.cell_of(p);
        let mut out = Vec::new();
        for bb in b.saturating_sub(reach)..=(b + reach).min(self.dims[1] - 1) {
            for aa in a.saturating_sub(reach)..=(a + reach).min(self.dims[0] - 1) {
                out.extend_from_slice(&self.cells[aa + self.dims[0] * bb]);
            }
        }
        out
    }
}

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull vertices in counter-clockwise order (monotone chain).
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

impl PLConvexFunction {
    pub fn new(nodes: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::Domain("node and value counts differ".into()));
        }
        if nodes.len() < 3 || nodes.iter().flatten().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Domain("need at least three finite nodes".into()));
        }
        let hull = convex_hull(&nodes);
        if hull.len() < 3 {
            return Err(Error::Domain("nodes are collinear".into()));
        }
        let scale = hull
            .iter()
            .flat_map(|p| hull.iter().map(move |q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()))
            .fold(0.0, f64::max);
        let boundary = nodes
            .iter()
            .map(|p| {
                (0..hull.len()).any(|e| {
                    let (a, b) = (&hull[e], &hull[(e + 1) % hull.len()]);
                    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    cross(a, b, p).abs() / len <= HULL_TOL * scale
                })
            })
            .collect();
        let buckets = Buckets::new(&nodes);
        Ok(Self {
            nodes,
            values,
            boundary,
            scale,
            buckets,
        })
    }

    /// Interior grid nodes with their values plus zero-valued points on the
    /// domain boundary (the Dirichlet data). Boundary points come after
    /// the interior nodes, which keep their order.
    pub fn from_grid(grid: &GridDomain, values: &[f64]) -> Result<Self> {
        if grid.n != 2 {
            return Err(Error::Domain("piecewise-linear measures are two-dimensional".into()));
        }
        let mut nodes = Vec::new();
        let mut vals = Vec::new();
        for i in grid.interior_nodes() {
            let x = grid.coords(i);
            nodes.push([x[0], x[1]]);
            vals.push(values[i]);
        }
        let perimeter_nodes = (4.0 * std::f64::consts::PI * grid.diam / grid.spacing).ceil() as usize;
        for p in grid.kind.boundary_samples(perimeter_nodes) {
            nodes.push([p[0], p[1]]);
            vals.push(0.0);
        }
        Self::new(nodes, vals)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn polygon_area(poly: &[Point]) -> f64 {
    let m = poly.len();
    if m < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..m {
        let (a, b) = (&poly[i], &poly[(i + 1) % m]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Clip to the half-plane `g.p <= c`, with slack `tol`.
fn clip(poly: &[Point], g: [f64; 2], c: f64, tol: f64) -> Vec<Point> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 1);
    for i in 0..m {
        let (p, q) = (poly[i], poly[(i + 1) % m]);
        let dp = g[0] * p[0] + g[1] * p[1] - c;
        let dq = g[0] * q[0] + g[1] * q[1] - c;
        if dp <= tol {
            out.push(p);
        }
        if (dp < -tol && dq > tol) || (dp > tol && dq < -tol) {
            let t = dp / (dp - dq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Subgradient polygon of `f` at an interior node.
pub fn subgradient_cell(f: &PLConvexFunction, node: usize) -> Result<Vec<Point>> {
    if node >= f.len() {
        return Err(Error::Domain(format!("node {node} out of range")));
    }
    if f.boundary[node] {
        return Err(Error::BoundaryNode(node));
    }
    let xi = f.nodes[node];
    let fi = f.values[node];
    let (fmin, fmax) = f
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let vscale = (fmax - fmin).abs().max(f64::MIN_POSITIVE);
    let tol = HULL_TOL * vscale;
    let near = f.buckets.near(&xi, 2);
    let mut box_half = 16.0 * vscale / f.buckets.size + 1.0;
    loop {
        let mut poly = vec![
            [-box_half, -box_half],
            [box_half, -box_half],
            [box_half, box_half],
            [-box_half, box_half],
        ];
        let constraint = |j: usize| {
            let d = [f.nodes[j][0] - xi[0], f.nodes[j][1] - xi[1]];
            (d, f.values[j] - fi)
        };
        for &j in &near {
            if j != node {
                let (g, c) = constraint(j);
                poly = clip(&poly, g, c, tol);
            }
        }
        // every other node must hold too; clip wherever a vertex violates it
        for j in 0..f.len() {
            if j == node || poly.is_empty() {
                continue;
            }
            let (g, c) = constraint(j);
            if poly.iter().any(|p| g[0] * p[0] + g[1] * p[1] - c > tol) {
                poly = clip(&poly, g, c, tol);
            }
        }
        let touches = poly
            .iter()
            .any(|p| p[0].abs() >= box_half * (1.0 - 1e-9) || p[1].abs() >= box_half * (1.0 - 1e-9));
        if !touches {
            return Ok(poly);
        }
        box_half *= 16.0;
        if box_half > 1e15 * (1.0 + vscale / f.scale) {
            return Err(Error::Domain(format!("subgradient at node {node} is unbounded")));
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MAMeasure {
    /// Mass per node; `None` at boundary nodes.
    pub masses: Vec<Option<f64>>,
    pub total: f64,
}

impl MAMeasure {
    /// Mass of a set of nodes (boundary nodes contribute nothing).
    pub fn mass_of(&self, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes.into_iter().filter_map(|i| self.masses[i]).sum()
    }
}

pub fn ma_measure(f: &PLConvexFunction) -> Result<MAMeasure> {
    let mut masses = Vec::with_capacity(f.len());
    for i in 0..f.len() {
        masses.push(if f.boundary[i] {
            None
        } else {
            Some(polygon_area(&subgradient_cell(f, i)?))
        });
    }
    let total = masses.iter().flatten().sum();
    Ok(MAMeasure { masses, total })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub holds: bool,
    pub tol: f64,
    /// Interior node with the largest `v - u`, and that value.
    pub worst_node: Option<usize>,
    pub worst_gap: f64,
    /// Number of interior nodes whose masses were compared.
    pub checked: usize,
}

/// Discrete comparison principle: with `u >= v` on boundary nodes and
/// `M u <= M v` node by node, check `u >= v - tol` at all interior nodes.
///
/// The per-node mass inequality is only a finite surrogate for the
/// inequality on all Borel sets.
pub fn verify_comparison(
    u: &PLConvexFunction,
    v: &PLConvexFunction,
    mu_u: &MAMeasure,
    mu_v: &MAMeasure,
    tol: f64,
) -> Result<ComparisonReport> {
    if u.nodes != v.nodes || mu_u.masses.len() != u.len() || mu_v.masses.len() != v.len() {
        return Err(Error::Domain("functions and measures must share one node set".into()));
    }
    let bscale = u.values.iter().chain(&v.values).fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
    for i in 0..u.len() {
        if u.boundary[i] && u.values[i] < v.values[i] - 1e-12 * bscale {
            return Err(Error::Hypothesis(format!(
                "boundary ordering fails at node {i}: u = {} < v = {}",
                u.values[i], v.values[i]
            )));
        }
    }
    let mscale = mu_u.total.max(mu_v.total).max(f64::MIN_POSITIVE);
    let mut checked = 0;
    for i in 0..u.len() {
        if let (Some(a), Some(b)) = (mu_u.masses[i], mu_v.masses[i]) {
            checked += 1;
            if a > b + 1e-12 * mscale {
                return Err(Error::Hypothesis(format!("mass ordering fails at node {i}: {a} > {b}")));
            }
        }
    }
    let mut worst_node = None;
    let mut worst_gap = f64::NEG_INFINITY;
    for i in (0..u.len()).filter(|&i| !u.boundary[i]) {
        let gap = v.values[i] - u.values[i];
        if gap > worst_gap {
            worst_gap = gap;
            worst_node = Some(i);
        }
    }
    Ok(ComparisonReport {
        holds: worst_gap <= tol,
        tol,
        worst_node,
        worst_gap,
        checked,
    })
}

/// [`verify_comparison`] for two grid functions on the same grid, with the
/// default slack `10 h^2`.
pub fn verify_grid_comparison(grid: &GridDomain, u: &[f64], v: &[f64]) -> Result<ComparisonReport> {
    let fu = PLConvexFunction::from_grid(grid, u)?;
    let fv = PLConvexFunction::from_grid(grid, v)?;
    let mu = ma_measure(&fu)?;
    let mv = ma_measure(&fv)?;
    verify_comparison(&fu, &fv, &mu, &mv, 10.0 * grid.spacing * grid.spacing)
}
