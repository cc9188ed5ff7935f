//! Grid solver for `det D^2 u = f` with zero boundary data, plus the
//! fixed-point loops for the singular and degenerate problems, the radial
//! shooting oracle and boundary-exponent fits.

pub mod fit;
pub mod fixed_point;
pub mod linear;
pub mod ode;
pub mod radial;
pub mod stencil;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GridDomain;
use linear::{bicgstab, Csr, Ilu0};
use stencil::{Stencil, NONE};

pub use fit::{fit_boundary_exponent, fit_power_law, fit_radial_exponent, geometric_depths, ExponentFit};
pub use fixed_point::{solve_degenerate, solve_singular, FixedPointOptions};
pub use radial::{radial_oracle, RadialOptions, RadialRhs, RadialSolution};

/// Node values on a grid; exterior nodes hold the Dirichlet value 0.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub domain: Arc<GridDomain>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(domain: Arc<GridDomain>) -> Self {
        let values = vec![0.0; domain.len()];
        Self { domain, values }
    }

    pub(crate) fn from_rows(domain: Arc<GridDomain>, st: &Stencil, rows: &[f64]) -> Self {
        let mut out = Self::zeros(domain);
        for (r, &i) in st.nodes.iter().enumerate() {
            out.values[i] = rows[r];
        }
        out
    }

    pub(crate) fn rows(&self, st: &Stencil) -> Vec<f64> {
        st.nodes.iter().map(|&i| self.values[i]).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Multilinear interpolation; corners outside the domain contribute 0.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let g = &*self.domain;
        let n = g.n;
        let mut base = vec![0i64; n];
        let mut t = vec![0.0; n];
        for d in 0..n {
            let s = x[d] / g.spacing;
            let f = s.floor();
            base[d] = f as i64;
            t[d] = s - f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut ijk = base.clone();
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    ijk[d] += 1;
                    w *= t[d];
                } else {
                    w *= 1.0 - t[d];
                }
            }
            if w == 0.0 {
                continue;
            }
            if let Some(i) = g.index_of(&ijk) {
                acc += w * self.values[i];
            }
        }
        acc
    }

    /// Whitespace-separated snapshot: index, coordinates, value per interior node.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in self.domain.interior_nodes() {
            write!(w, "{i}")?;
            for c in self.domain.coords(i) {
                write!(w, " {c:.17e}")?;
            }
            writeln!(w, " {:.17e}", self.values[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveOptions {
    /// Target for the scaled residual `max |G - f^{1/n}| / max(1, f^{1/n})`.
    pub tol: f64,
    pub max_newton: usize,
    pub max_linear: usize,
    /// Lattice reach of the stencil directions; `None` picks 2 in 2-D, 1 in 3-D.
    pub width: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 80,
            max_linear: 4000,
            width: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Whether the residual history (after the first entry) never increased.
    pub monotone: bool,
    /// Smallest second difference over `|v|^2`, a discrete convexity check.
    pub min_second_difference: f64,
    /// Interior nodes where a right-hand-side floor was active on the final iterate.
    pub clamped_nodes: usize,
    pub init: String,
    #[serde(skip)]
    pub wall_time: f64,
}

pub(crate) fn is_monotone(history: &[f64]) -> bool {
    history.windows(2).skip(1).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

/// Newton solver for the discrete equation on a fixed grid; holds the stencil
/// so repeated solves (outer loops) share it.
#[derive(Debug, Clone)]
pub struct MaSolver {
    pub domain: Arc<GridDomain>,
    pub stencil: Stencil,
    pub opts: SolveOptions,
}

struct Newton {
    rows: Vec<f64>,
    iterations: usize,
    linear: usize,
    residual: f64,
    history: Vec<f64>,
}

impl MaSolver {
    pub fn new(domain: Arc<GridDomain>, opts: SolveOptions) -> Result<Self> {
        let width = opts.width.unwrap_or(if domain.n == 2 { 2 } else { 1 });
        let stencil = Stencil::new(&domain, width)?;
        if stencil.rows() == 0 {
            return Err(Error::Domain("grid has no interior nodes".into()));
        }
        Ok(Self { domain, stencil, opts })
    }

    pub fn rows(&self) -> usize {
        self.stencil.rows()
    }

    /// Coordinates of each unknown.
    pub fn row_coords(&self) -> Vec<Vec<f64>> {
        self.stencil.nodes.iter().map(|&i| self.domain.coords(i)).collect()
    }

    fn diffs(&self, u: &[f64], r: usize, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate() {
            *o = self.stencil.second_difference(u, r, d);
        }
    }

    /// `(det_h u)^{1/n}` per row (concave extension off the convex cone).
    pub fn det_root(&self, u: &[f64]) -> Vec<f64> {
        let nd = self.stencil.dirs.len();
        (0..self.rows())
            .into_par_iter()
            .map(|r| {
                let mut diffs = [0.0; 16];
                self.diffs(u, r, &mut diffs[..nd]);
                self.stencil.policy(&diffs[..nd]).value
            })
            .collect()
    }

    fn scaled_residual(&self, u: &[f64], froot: &[f64]) -> (Vec<f64>, f64) {
        let g = self.det_root(u);
        let f: Vec<f64> = g.iter().zip(froot).map(|(a, b)| a - b).collect();
        let res = f
            .iter()
            .zip(froot)
            .map(|(v, s)| v.abs() / s.max(1.0))
            .fold(0.0, f64::max);
        (f, res)
    }

    /// Matrix of `-dG/du` for the active policies at `u`; an M-matrix.
    fn jacobian(&self, u: &[f64]) -> Csr {
        let st = &self.stencil;
        let nd = st.dirs.len();
        let inv_n = 1.0 / st.n as f64;
        let rows: Vec<Vec<(usize, f64)>> = (0..self.rows())
            .into_par_iter()
            .map(|r| {
                let mut diffs = [0.0; 16];
                self.diffs(u, r, &mut diffs[..nd]);
                let p = st.policy(&diffs[..nd]);
                let basis = &st.bases[p.basis];
                let mut row = Vec::with_capacity(2 * st.n + 1);
                let mut diag = 0.0;
                for (&d, t) in basis.dirs.iter().zip(&p.weights) {
                    let w = basis.weight_root * t * inv_n;
                    let k = r * nd + d;
                    diag += w * (st.cp[k] + st.cm[k]);
                    if st.plus[k] != NONE {
                        row.push((st.plus[k] as usize, -w * st.cp[k]));
                    }
                    if st.minus[k] != NONE {
                        row.push((st.minus[k] as usize, -w * st.cm[k]));
                    }
                }
                row.push((r, diag));
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    /// Solution of the axis Poisson problem `Lu = n f^{1/n}`; convex
    /// solutions of it are discrete supersolutions by the AM-GM inequality.
    fn poisson_guess(&self, froot: &[f64]) -> Result<(Vec<f64>, usize)> {
        let st = &self.stencil;
        let rows: Vec<Vec<(usize, f64)>> = (0..self.rows()).map(|r| st.laplacian_row(r)).collect();
        let a = Csr::from_rows(rows);
        let pc = Ilu0::new(&a)?;
        let b: Vec<f64> = froot.iter().map(|v| -(st.n as f64) * v).collect();
        let mut x = vec![0.0; self.rows()];
        let its = bicgstab(&a, &pc, &b, &mut x, 1e-12, self.opts.max_linear)?;
        Ok((x, its))
    }

    fn newton(&self, froot: &[f64], mut u: Vec<f64>, tol: f64) -> Result<Newton> {
        let (mut f, mut res) = self.scaled_residual(&u, froot);
        let mut history = vec![res];
        let mut linear = 0;
        let mut it = 0;
        while res > tol {
            if it == self.opts.max_newton {
                return Err(Error::Convergence {
                    iterations: it,
                    residual: res,
                    history,
                });
            }
            it += 1;
            // rows scaled like the residual so the Krylov stopping test is
            // not dominated by rows with a large right-hand side
            let mut a = self.jacobian(&u);
            let mut b = f.clone();
            for r in 0..a.n {
                let s = 1.0 / froot[r].max(1.0);
                for p in a.row_ptr[r]..a.row_ptr[r + 1] {
                    a.val[p] *= s;
                }
                b[r] *= s;
            }
            let pc = Ilu0::new(&a)?;
            let mut du = vec![0.0; u.len()];
            let rtol = (1e-4 * res.min(1.0)).max(1e-13);
            linear += bicgstab(&a, &pc, &b, &mut du, rtol, self.opts.max_linear)?;
            // policy iteration: full steps, monotone after the first
            for (a, b) in u.iter_mut().zip(&du) {
                *a += b;
            }
            let (ft, rt) = self.scaled_residual(&u, froot);
            if !rt.is_finite() {
                history.push(rt);
                return Err(Error::Convergence {
                    iterations: it,
                    residual: rt,
                    history,
                });
            }
            f = ft;
            res = rt;
            history.push(res);
        }
        Ok(Newton {
            rows: u,
            iterations: it,
            linear,
            residual: res,
            history,
        })
    }

    /// Solve with the right-hand side given per row; `init` is an optional
    /// starting iterate (per row), otherwise the Poisson guess is used.
    pub fn solve_rows(&self, rhs: &[f64], init: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)> {
        self.solve_rows_to(rhs, init, self.opts.tol)
    }

    pub(crate) fn solve_rows_to(&self, rhs: &[f64], init: Option<&[f64]>, tol: f64) -> Result<(Vec<f64>, SolveReport)> {
        let start = Instant::now();
        if rhs.len() != self.rows() {
            return Err(Error::Domain("right-hand side length differs from the unknown count".into()));
        }
        if let Some(r) = rhs.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::OutOfRange(format!("right-hand side {} at row {r} is not finite and >= 0", rhs[r])));
        }
        let inv_n = 1.0 / self.stencil.n as f64;
        let froot: Vec<f64> = rhs.iter().map(|v| v.powf(inv_n)).collect();
        let (u0, mut linear, init_name) = match init {
            Some(u) => (u.to_vec(), 0, "warm start"),
            None => {
                let (u, its) = self.poisson_guess(&froot)?;
                (u, its, "poisson")
            }
        };
        let nw = self.newton(&froot, u0, tol)?;
        linear += nw.linear;
        let report = SolveReport {
            outer_iterations: 1,
            inner_iterations: nw.iterations,
            linear_iterations: linear,
            residual: nw.residual,
            monotone: is_monotone(&nw.history),
            history: nw.history,
            min_second_difference: self.min_second_difference(&nw.rows),
            clamped_nodes: 0,
            init: init_name.into(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        Ok((nw.rows, report))
    }

    pub fn min_second_difference(&self, u: &[f64]) -> f64 {
        let st = &self.stencil;
        let mut m = f64::INFINITY;
        for r in 0..self.rows() {
            for (d, v) in st.dirs.iter().enumerate() {
                let len2: i64 = v.iter().map(|c| c * c).sum();
                m = m.min(st.second_difference(u, r, d) / len2 as f64);
            }
        }
        m
    }

    pub fn solve(&self, rhs: &[f64], init: Option<&GridFunction>) -> Result<(GridFunction, SolveReport)> {
        let init_rows = init.map(|g| g.rows(&self.stencil));
        let (rows, rep) = self.solve_rows(rhs, init_rows.as_deref())?;
        Ok((GridFunction::from_rows(self.domain.clone(), &self.stencil, &rows), rep))
    }
}

/// Solve `det_h D^2 u = rhs(x)` with `u = 0` on the boundary.
pub fn ma_solve(
    domain: Arc<GridDomain>,
    rhs: impl Fn(&[f64]) -> f64 + Sync,
    opts: SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    let solver = MaSolver::new(domain, opts)?;
    let f: Vec<f64> = solver.row_coords().iter().map(|x| rhs(x)).collect();
    solver.solve(&f, None)
}
