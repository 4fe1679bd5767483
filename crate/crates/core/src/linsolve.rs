//! Small dense least-squares kernels.
//!
//! Both solvers scale every column to unit max-absolute-value before
//! factorizing and unscale the coefficients on return: power-law columns
//! such as `N^-alpha` routinely span many orders of magnitude.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense design matrix stored row-major: entry `(i, j)` lives at `data[i * cols + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DesignMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Domain(format!("expected {} entries, got {}", rows * cols, data.len())));
        }
        Ok(DesignMatrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length columns.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Domain("columns differ in length".into()));
        }
        let mut m = DesignMatrix::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.data[i * cols + j] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `X c`
    pub fn mul_vec(&self, c: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * c[j]).sum())
            .collect()
    }

    /// `||y - X c||^2`
    pub fn rss(&self, c: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let mut pred = 0.0;
            for (j, cj) in c.iter().enumerate() {
                pred += self.get(i, j) * cj;
            }
            let r = yi - pred;
            s += r * r;
        }
        s
    }
}

/// Least-squares solution with rank information.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    /// Numerical rank of the (column-scaled) design matrix.
    pub rank: usize,
    /// Set when the matrix was rank deficient and a minimum-norm solution was returned.
    pub rank_deficient: bool,
    pub rss: f64,
}

fn check_system(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if x.rows != y.len() {
        return Err(Error::Domain(format!("design has {} rows but response has {}", x.rows, y.len())));
    }
    if x.cols == 0 || x.rows < x.cols {
        return Err(Error::InsufficientData(format!("need rows >= cols >= 1 (got {}x{})", x.rows, x.cols)));
    }
    if let Some(i) = x.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i / x.cols, what: "design matrix entry".into() });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, what: "response".into() });
    }
    Ok(())
}

/// Column-pivoted Householder QR of a column-scaled copy of a matrix subset.
struct Qr {
    m: usize,
    n: usize,
    /// Column-major; upper triangle holds R, below-diagonal the Householder vectors.
    a: Vec<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl Qr {
    fn factor(x: &DesignMatrix, columns: &[usize], scale: &[f64]) -> Qr {
        let m = x.rows;
        let n = columns.len();
        let mut a = vec![0.0; m * n];
        for (k, &j) in columns.iter().enumerate() {
            for i in 0..m {
                a[k * m + i] = x.get(i, j) / scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![0.0; n];
        let mut norms: Vec<f64> = (0..n).map(|k| col_norm2(&a[k * m..(k + 1) * m])).collect();
        for k in 0..n {
            // pivot: largest remaining column norm (first index wins ties)
            let mut p = k;
            for j in k + 1..n {
                if norms[j] > norms[p] {
                    p = j;
                }
            }
            if p != k {
                for i in 0..m {
                    a.swap(k * m + i, p * m + i);
                }
                perm.swap(k, p);
                norms.swap(k, p);
            }
            let col = &mut a[k * m..(k + 1) * m];
            let alpha = col_norm2(&col[k..]).sqrt();
            if alpha == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            let beta = if col[k] >= 0.0 { -alpha } else { alpha };
            let v0 = col[k] - beta;
            for v in col[k + 1..].iter_mut() {
                *v /= v0;
            }
            tau[k] = (beta - col[k]) / beta;
            col[k] = beta;
            for j in k + 1..n {
                let (left, right) = a.split_at_mut(j * m);
                let hv = &left[k * m..(k + 1) * m];
                let cj = &mut right[..m];
                let mut s = cj[k];
                for i in k + 1..m {
                    s += hv[i] * cj[i];
                }
                s *= tau[k];
                cj[k] -= s;
                for i in k + 1..m {
                    cj[i] -= s * hv[i];
                }
                norms[j] = col_norm2(&cj[k + 1..]);
            }
        }
        let r00 = if n > 0 { a[0].abs() } else { 0.0 };
        let tol = (m.max(n) as f64) * f64::EPSILON * r00;
        let rank = (0..n).take_while(|&k| a[k * m + k].abs() > tol).count();
        Qr { m, n, a, tau, perm, rank }
    }

    /// `Q^T y`
    fn qt_mul(&self, y: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut b = y.to_vec();
        for k in 0..self.n {
            if self.tau[k] == 0.0 {
                continue;
            }
            let hv = &self.a[k * m..(k + 1) * m];
            let mut s = b[k];
            for i in k + 1..m {
                s += hv[i] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * hv[i];
            }
        }
        b
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.m + i]
    }

    /// Back-substitution for the full-rank case; returns scaled coefficients in
    /// the original column order of the factored subset.
    fn solve_full_rank(&self, y: &[f64]) -> Vec<f64> {
        let qty = self.qt_mul(y);
        let n = self.n;
        let mut z = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = qty[i];
            for j in i + 1..n {
                s -= self.r(i, j) * z[j];
            }
            z[i] = s / self.r(i, i);
        }
        let mut out = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = z[k];
        }
        out
    }

    /// `(R^T R)^-1` in the original column order of the subset.
    fn inverse_gram(&self) -> Vec<f64> {
        let n = self.n;
        // Rinv upper triangular
        let mut rinv = vec![0.0; n * n];
        for j in 0..n {
            rinv[j * n + j] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r(i, k) * rinv[k * n + j];
                }
                rinv[i * n + j] = -s / self.r(i, i);
            }
        }
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in i.max(j)..n {
                    s += rinv[i * n + k] * rinv[j * n + k];
                }
                g[self.perm[i] * n + self.perm[j]] = s;
            }
        }
        g
    }
}

fn col_norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn column_scales(x: &DesignMatrix) -> Vec<f64> {
    (0..x.cols)
        .map(|j| {
            let s = (0..x.rows).map(|i| x.get(i, j).abs()).fold(0.0, f64::max);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect()
}

/// Least squares restricted to `columns`; other coefficients are zero.
/// Returns unscaled coefficients for all columns plus the subset rank.
fn ols_subset(x: &DesignMatrix, y: &[f64], columns: &[usize], scale: &[f64]) -> (Vec<f64>, usize, bool) {
    let mut coef = vec![0.0; x.cols];
    if columns.is_empty() {
        return (coef, 0, false);
    }
    let qr = Qr::factor(x, columns, scale);
    let (sub, deficient) = if qr.rank == columns.len() {
        (qr.solve_full_rank(y), false)
    } else {
        (min_norm_subset(x, y, columns, scale), true)
    };
    for (k, &j) in columns.iter().enumerate() {
        coef[j] = sub[k] / scale[j];
    }
    (coef, qr.rank, deficient)
}

/// Minimum-norm solution (in scaled coordinates) through a truncated SVD.
fn min_norm_subset(x: &DesignMatrix, y: &[f64], columns: &[usize], scale: &[f64]) -> Vec<f64> {
    let m = x.rows;
    let a = DMatrix::from_fn(m, columns.len(), |i, k| x.get(i, columns[k]) / scale[columns[k]]);
    let b = DMatrix::from_column_slice(m, 1, y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (m.max(columns.len()) as f64) * f64::EPSILON * smax;
    match svd.solve(&b, eps) {
        Ok(sol) => sol.column(0).iter().copied().collect(),
        Err(_) => vec![0.0; columns.len()],
    }
}

/// Ordinary least squares `argmin ||y - X c||^2` via column-pivoted Householder QR.
///
/// Rank-deficient systems do not fail: the minimum-norm solution (with respect
/// to the column-scaled problem) is returned with `rank_deficient` set.
pub fn solve_ols(x: &DesignMatrix, y: &[f64]) -> Result<LstsqSolution> {
    check_system(x, y)?;
    let scale = column_scales(x);
    let all: Vec<usize> = (0..x.cols).collect();
    let (coef, rank, rank_deficient) = ols_subset(x, y, &all, &scale);
    let rss = x.rss(&coef, y);
    Ok(LstsqSolution { coef, rank, rank_deficient, rss })
}

/// `(X^T X)^-1`, row-major, for a full-rank design. Used for coefficient
/// standard errors.
pub fn inverse_gram(x: &DesignMatrix) -> Result<Vec<f64>> {
    if x.cols == 0 || x.rows < x.cols {
        return Err(Error::InsufficientData("need rows >= cols".into()));
    }
    let scale = column_scales(x);
    let all: Vec<usize> = (0..x.cols).collect();
    let qr = Qr::factor(x, &all, &scale);
    if qr.rank < x.cols {
        return Err(Error::Domain("design matrix is rank deficient".into()));
    }
    let mut g = qr.inverse_gram();
    let n = x.cols;
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] /= scale[i] * scale[j];
        }
    }
    Ok(g)
}

/// Non-negative least squares, `argmin ||y - X c||^2` subject to `c >= 0`,
/// by the Lawson-Hanson active-set method.
///
/// Fails with [`Error::NnlsNotConverged`] (carrying the best iterate) after
/// `3 * cols * rows` outer iterations.
pub fn solve_nnls(x: &DesignMatrix, y: &[f64]) -> Result<LstsqSolution> {
    check_system(x, y)?;
    let (m, n) = (x.rows, x.cols);
    let scale = column_scales(x);

    // Unconstrained solution already feasible: it is the constrained optimum.
    let all: Vec<usize> = (0..n).collect();
    let (ols, rank, deficient) = ols_subset(x, y, &all, &scale);
    if ols.iter().all(|&c| c >= 0.0) {
        let rss = x.rss(&ols, y);
        return Ok(LstsqSolution { coef: ols, rank, rank_deficient: deficient, rss });
    }

    let y_scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let tol = 10.0 * f64::EPSILON * (m.max(n) as f64) * y_scale;
    // work in scaled coordinates: xs[j] = coef[j] * scale[j]
    let dual = |coef: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; n];
        for i in 0..m {
            let mut pred = 0.0;
            for j in 0..n {
                pred += x.get(i, j) * coef[j];
            }
            let r = y[i] - pred;
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += x.get(i, j) / scale[j] * r;
            }
        }
        w
    };

    let mut coef = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];
    let max_iter = 3 * n * m;
    let mut iter = 0;
    let mut last_rank = 0;
    let mut last_deficient = false;
    loop {
        let w = dual(&coef);
        let cand = (0..n)
            .filter(|&j| !passive[j] && !excluded[j] && w[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if w[b] >= w[j] => Some(b),
                _ => Some(j),
            });
        let Some(t) = cand else { break };
        iter += 1;
        if iter > max_iter {
            return Err(Error::NnlsNotConverged { iterations: iter, best: coef });
        }
        passive[t] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let (z, r, d) = ols_subset(x, y, &cols, &scale);
            last_rank = r;
            last_deficient = d;
            if cols.iter().all(|&j| z[j] > 0.0) {
                coef = z;
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }
            // newly added column immediately non-positive: roundoff, exclude it
            if cols.iter().all(|&j| j == t || z[j] > 0.0) && coef[t] == 0.0 {
                passive[t] = false;
                excluded[t] = true;
                break;
            }
            let mut step = f64::INFINITY;
            for &j in &cols {
                if z[j] <= 0.0 {
                    let s = coef[j] / (coef[j] - z[j]);
                    step = step.min(s);
                }
            }
            for j in 0..n {
                coef[j] += step * (z[j] - coef[j]);
            }
            for j in 0..n {
                if passive[j] && coef[j] * scale[j] <= tol {
                    passive[j] = false;
                    coef[j] = 0.0;
                }
            }
            iter += 1;
            if iter > max_iter {
                return Err(Error::NnlsNotConverged { iterations: iter, best: coef });
            }
        }
    }
    let rss = x.rss(&coef, y);
    Ok(LstsqSolution { coef, rank: last_rank, rank_deficient: last_deficient, rss })
}
