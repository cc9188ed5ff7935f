//! Sparse matrices, ILU(0) and preconditioned BiCGStab.

use crate::error::{Error, Result};

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Assemble from per-row entry lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (j, v) in r {
                if col.len() > *row_ptr.last().unwrap() && *col.last().unwrap() == j {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[p] * x[self.col[p]];
            }
            y[i] = s;
        }
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Construction(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                pos[lu.col[p]] = p;
            }
            for p in start..end {
                let k = lu.col[p];
                if k >= i {
                    break;
                }
                let lik = lu.val[p] / lu.val[diag[k]];
                lu.val[p] = lik;
                for q in diag[k] + 1..lu.row_ptr[k + 1] {
                    let t = pos[lu.col[q]];
                    if t != usize::MAX {
                        lu.val[t] -= lik * lu.val[q];
                    }
                }
            }
            for p in start..end {
                pos[lu.col[p]] = usize::MAX;
            }
            let d = lu.val[diag[i]];
            if !(d.abs() > 0.0) || !d.is_finite() {
                return Err(Error::Construction(format!("zero or non-finite pivot {d} in row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solve `LU x = b` in place.
    pub fn apply(&self, x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = x[i];
            for p in lu.row_ptr[i]..self.diag[i] {
                s -= lu.val[p] * x[lu.col[p]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for p in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.val[p] * x[lu.col[p]];
            }
            x[i] = s / lu.val[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGStab. Stops when `|b - Ax| <= rtol |b|`.
/// Returns the iteration count.
pub fn bicgstab(a: &Csr, pc: &Ilu0, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let res = norm2(&r);
        if res <= rtol * bnorm {
            return Ok(it - 1);
        }
        if it % 50 == 0 {
            history.push(res / bnorm);
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        phat.copy_from_slice(&p);
        pc.apply(&mut phat);
        a.mul(&phat, &mut v);
        let den = dot(&r0, &v);
        if den == 0.0 {
            break;
        }
        alpha = rho / den;
        for i in 0..n {
            r[i] -= alpha * v[i];
            x[i] += alpha * phat[i];
        }
        if norm2(&r) <= rtol * bnorm {
            return Ok(it);
        }
        shat.copy_from_slice(&r);
        pc.apply(&mut shat);
        a.mul(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += omega * shat[i];
            r[i] -= omega * t[i];
        }
    }
    let mut ax = vec![0.0; n];
    a.mul(x, &mut ax);
    let res = ax.iter().zip(b).map(|(p, q)| (q - p).powi(2)).sum::<f64>().sqrt() / bnorm;
    if res <= rtol {
        return Ok(max_iter);
    }
    history.push(res);
    Err(Error::Convergence {
        iterations: max_iter,
        residual: res,
        history,
    })
}
