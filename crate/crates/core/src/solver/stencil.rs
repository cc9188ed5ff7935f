//! Wide-stencil discretization of `det D^2 u`.
//!
//! For a convex quadratic form `H` and any basis `V = (v_1, .., v_n)`,
//! `det V^T H V <= prod_i v_i^T H v_i`, with equality when the basis is
//! `H`-conjugate. So `det H = min_V prod_i (v_i^T H v_i) / det(V)^2`, and
//! replacing `v^T H v` by second differences along lattice vectors and taking
//! positive parts gives a monotone, degenerate-elliptic operator. Arms that
//! leave the domain are cut at the boundary, where the value is zero.

use crate::error::{Error, Result};
use crate::geometry::GridDomain;

pub(crate) const NONE: u32 = u32::MAX;

/// Bound `T` on the AM-GM weights.
pub const WEIGHT_CAP: f64 = 1e3;

#[derive(Debug, Clone, Copy)]
pub struct Policy {
    pub value: f64,
    pub basis: usize,
    pub weights: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Basis {
    pub dirs: Vec<usize>,
    /// `det(V)^{-2/n}`
    pub weight_root: f64,
}

/// Precomputed second-difference coefficients for every interior node and
/// lattice direction.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub n: usize,
    pub width: usize,
    pub dirs: Vec<Vec<i64>>,
    pub bases: Vec<Basis>,
    /// Grid index of each unknown.
    pub nodes: Vec<usize>,
    /// Unknown index of each grid node (NONE outside).
    pub row_of: Vec<u32>,
    /// Per (row, direction): neighbour rows and weights of the `+v` and `-v` arms.
    pub plus: Vec<u32>,
    pub minus: Vec<u32>,
    pub cp: Vec<f64>,
    pub cm: Vec<f64>,
    /// Per (row, axis): arm fractions, used for first derivatives.
    pub tp: Vec<f64>,
    pub tm: Vec<f64>,
    pub spacing: f64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive lattice directions with entries in `[-w, w]`, one per `+-` pair.
pub fn lattice_directions(n: usize, width: usize) -> Vec<Vec<i64>> {
    let w = width as i64;
    let mut out = Vec::new();
    let mut v = vec![-w; n];
    loop {
        let first = v.iter().find(|&&c| c != 0).copied();
        let g = v.iter().fold(0, |g, &c| gcd(g, c));
        if first.is_some_and(|f| f > 0) && g == 1 {
            out.push(v.clone());
        }
        let mut d = 0;
        loop {
            if d == n {
                // axes first, then by length
                out.sort_by_key(|v| (v.iter().map(|c| c * c).sum::<i64>(), std::cmp::Reverse(v.clone())));
                return out;
            }
            v[d] += 1;
            if v[d] > w {
                v[d] = -w;
                d += 1;
            } else {
                break;
            }
        }
    }
}

fn det(m: &[&Vec<i64>]) -> f64 {
    match m.len() {
        2 => (m[0][0] * m[1][1] - m[0][1] * m[1][0]) as f64,
        3 => {
            let (a, b, c) = (m[0], m[1], m[2]);
            (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0])) as f64
        }
        _ => unreachable!(),
    }
}

fn bases_for(n: usize, dirs: &[Vec<i64>]) -> Vec<Basis> {
    let m = dirs.len();
    let mut out = Vec::new();
    let mut push = |ids: Vec<usize>| {
        let vs: Vec<&Vec<i64>> = ids.iter().map(|&i| &dirs[i]).collect();
        let d = det(&vs);
        if d != 0.0 {
            out.push(Basis {
                dirs: ids,
                weight_root: (d * d).powf(-1.0 / n as f64),
            });
        }
    };
    for i in 0..m {
        for j in i + 1..m {
            if n == 2 {
                push(vec![i, j]);
            } else {
                for k in j + 1..m {
                    push(vec![i, j, k]);
                }
            }
        }
    }
    out
}

impl Stencil {
    /// `width` is the lattice reach of the directions (1: 8/26-point
    /// neighbourhood, 2: the 5x5 neighbourhood in 2-D).
    pub fn new(grid: &GridDomain, width: usize) -> Result<Self> {
        if !(grid.n == 2 || grid.n == 3) {
            return Err(Error::Domain(format!("grid solver supports n = 2, 3 (got {})", grid.n)));
        }
        if width == 0 || width > 2 || (grid.n == 3 && width > 1) {
            return Err(Error::OutOfRange(format!("stencil width {width} not supported for n = {}", grid.n)));
        }
        let n = grid.n;
        let dirs = lattice_directions(n, width);
        let bases = bases_for(n, &dirs);
        let nodes: Vec<usize> = grid.interior_nodes().collect();
        let mut row_of = vec![NONE; grid.len()];
        for (r, &i) in nodes.iter().enumerate() {
            row_of[i] = r as u32;
        }
        let nd = dirs.len();
        let h = grid.spacing;
        let mut plus = vec![NONE; nodes.len() * nd];
        let mut minus = vec![NONE; nodes.len() * nd];
        let mut cp = vec![0.0; nodes.len() * nd];
        let mut cm = vec![0.0; nodes.len() * nd];
        let mut tp = vec![1.0; nodes.len() * n];
        let mut tm = vec![1.0; nodes.len() * n];
        for (r, &i) in nodes.iter().enumerate() {
            for (d, v) in dirs.iter().enumerate() {
                let neg: Vec<i64> = v.iter().map(|c| -c).collect();
                let ap = grid.arm(i, v);
                let am = grid.arm(i, &neg);
                let (a, b) = (ap.frac, am.frac);
                let k = r * nd + d;
                plus[k] = ap.neighbor.map_or(NONE, |j| row_of[j]);
                minus[k] = am.neighbor.map_or(NONE, |j| row_of[j]);
                cp[k] = 2.0 / (h * h * a * (a + b));
                cm[k] = 2.0 / (h * h * b * (a + b));
                if d < n {
                    tp[r * n + d] = a;
                    tm[r * n + d] = b;
                }
            }
        }
        Ok(Self {
            n,
            width,
            dirs,
            bases,
            nodes,
            row_of,
            plus,
            minus,
            cp,
            cm,
            tp,
            tm,
            spacing: h,
        })
    }

    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    fn val(u: &[f64], j: u32) -> f64 {
        if j == NONE {
            0.0
        } else {
            u[j as usize]
        }
    }

    /// Second difference at row `r` along direction `d` (approximates `v^T D^2u v`).
    #[inline]
    pub fn second_difference(&self, u: &[f64], r: usize, d: usize) -> f64 {
        let k = r * self.dirs.len() + d;
        let u0 = u[r];
        self.cp[k] * (Self::val(u, self.plus[k]) - u0) + self.cm[k] * (Self::val(u, self.minus[k]) - u0)
    }

    /// First derivative along axis `d` at row `r` (three-point, nonuniform near the boundary).
    pub fn first_derivative(&self, u: &[f64], r: usize, d: usize) -> f64 {
        let k = r * self.dirs.len() + d;
        let (a, b) = (self.tp[r * self.n + d], self.tm[r * self.n + d]);
        let u0 = u[r];
        let up = Self::val(u, self.plus[k]) - u0;
        let um = Self::val(u, self.minus[k]) - u0;
        (b * b * up - a * a * um) / (self.spacing * a * b * (a + b))
    }

    /// `(det_h u)^{1/n}` from the second differences of one row, with the
    /// minimizing basis and the weights of its directions.
    ///
    /// Each basis contributes `w_B prod_i D_i^{1/n}`, written by AM-GM as the
    /// minimum over weights `t_i` with `prod t_i = 1` of `w_B sum_i t_i D_i / n`.
    /// The weights are restricted to `[1/T, T]`, which leaves the value
    /// unchanged when the ratios of the differences are moderate and gives a
    /// concave, monotone extension to non-convex data (negative differences).
    pub fn policy(&self, diffs: &[f64]) -> Policy {
        let mut best = Policy {
            value: f64::INFINITY,
            basis: 0,
            weights: [1.0; 3],
        };
        let inv_n = 1.0 / self.n as f64;
        let consider = |b: usize, t: [f64; 3], best: &mut Policy| {
            let basis = &self.bases[b];
            let v: f64 = basis.dirs.iter().zip(&t).map(|(&d, ti)| ti * diffs[d]).sum::<f64>() * basis.weight_root * inv_n;
            if v < best.value {
                *best = Policy {
                    value: v,
                    basis: b,
                    weights: t,
                };
            }
        };
        for (b, basis) in self.bases.iter().enumerate() {
            if self.n == 2 {
                let (a, c) = (diffs[basis.dirs[0]], diffs[basis.dirs[1]]);
                if a > 0.0 && c > 0.0 {
                    let t = (c / a).sqrt().clamp(1.0 / WEIGHT_CAP, WEIGHT_CAP);
                    consider(b, [t, 1.0 / t, 1.0], &mut best);
                }
                consider(b, [WEIGHT_CAP, 1.0 / WEIGHT_CAP, 1.0], &mut best);
                consider(b, [1.0 / WEIGHT_CAP, WEIGHT_CAP, 1.0], &mut best);
            } else {
                let d3 = [diffs[basis.dirs[0]], diffs[basis.dirs[1]], diffs[basis.dirs[2]]];
                if d3.iter().all(|&v| v > 0.0) {
                    let g = (d3[0] * d3[1] * d3[2]).cbrt();
                    let mut t = [g / d3[0], g / d3[1], g / d3[2]];
                    for ti in t.iter_mut() {
                        *ti = ti.clamp(1.0 / WEIGHT_CAP, WEIGHT_CAP);
                    }
                    let s = (t[0] * t[1] * t[2]).cbrt();
                    consider(b, [t[0] / s, t[1] / s, t[2] / s], &mut best);
                }
                let (hi, lo) = (WEIGHT_CAP, 1.0 / WEIGHT_CAP);
                for t in [[hi, lo, 1.0], [lo, hi, 1.0], [hi, 1.0, lo], [lo, 1.0, hi], [1.0, hi, lo], [1.0, lo, hi]] {
                    consider(b, t, &mut best);
                }
            }
        }
        best
    }

    /// Axis Laplacian entries for row `r`: `(column, coefficient)` pairs of `-Lu`.
    pub fn laplacian_row(&self, r: usize) -> Vec<(usize, f64)> {
        let nd = self.dirs.len();
        let mut row = Vec::with_capacity(2 * self.n + 1);
        let mut diag = 0.0;
        for d in 0..self.n {
            let k = r * nd + d;
            diag += self.cp[k] + self.cm[k];
            if self.plus[k] != NONE {
                row.push((self.plus[k] as usize, -self.cp[k]));
            }
            if self.minus[k] != NONE {
                row.push((self.minus[k] as usize, -self.cm[k]));
            }
        }
        row.push((r, diag));
        row
    }
}
