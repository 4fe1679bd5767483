//! Outer-loop optimizers: exhaustive grids, bounded Nelder-Mead, and a
//! projected limited-memory quasi-Newton method, plus gradient checking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise box `lower <= x <= upper`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Config("bounds dimension mismatch".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("each lower bound must be below its upper bound".into()));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: Option<f64>,
}

/// Evaluates `objective` at every node of the tensor grid spanned by `axes`
/// (first axis slowest) and returns the best node. Non-finite values are
/// skipped; ties keep the lowest lexicographic index.
pub fn grid_search_axes<F>(mut objective: F, axes: &[Vec<f64>]) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
        return Err(Error::Config("grid axes must be non-empty".into()));
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut idx = vec![0usize; axes.len()];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..total {
        for (k, &i) in idx.iter().enumerate() {
            x[k] = axes[k][i];
        }
        let f = objective(&x);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x.clone(), f));
        }
        // odometer increment, last axis fastest
        for k in (0..axes.len()).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    let (x, f) = best.ok_or_else(|| Error::Optimization("objective non-finite at every grid node".into()))?;
    Ok(OptimResult { x, f, iterations: total, converged: true, gradient_norm: None })
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Uniform tensor grid with `points_per_dim` nodes per axis spanning the box.
pub fn grid_search<F>(objective: F, bounds: &Bounds, points_per_dim: usize) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if points_per_dim < 2 {
        return Err(Error::Config("grid search needs at least 2 points per dimension".into()));
    }
    if bounds.lower.iter().chain(&bounds.upper).any(|v| !v.is_finite()) {
        return Err(Error::Config("grid search needs finite bounds".into()));
    }
    let axes: Vec<Vec<f64>> =
        (0..bounds.dim()).map(|i| linspace(bounds.lower[i], bounds.upper[i], points_per_dim)).collect();
    grid_search_axes(objective, &axes)
}

/// Nelder-Mead termination settings.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Simplex diameter (infinity norm) threshold.
    pub x_tol: f64,
    /// Spread of objective values across the simplex.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { x_tol: 1e-10, f_tol: 1e-14, max_iter: 2000 }
    }
}

/// Bounded Nelder-Mead (reflection 1, expansion 2, contraction 0.5, shrink
/// 0.5). Every trial point is projected onto the box.
///
/// Stops once both the simplex diameter and the objective spread fall below
/// their tolerances, or at the iteration cap (`converged = false`).
pub fn nelder_mead<F>(mut objective: F, start: &[f64], bounds: &Bounds, opts: NelderMeadOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x0 = start.to_vec();
    bounds.project(&mut x0);
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for i in 0..n {
        let mut v = x0.clone();
        let step = if x0[i] != 0.0 { 0.05 * x0[i].abs() } else { 0.00025 };
        v[i] = x0[i] + step;
        bounds.project(&mut v);
        if v[i] == x0[i] {
            v[i] = x0[i] - step;
            bounds.project(&mut v);
        }
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
        let sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_f: Vec<f64> = order.iter().map(|&i| fvals[i]).collect();
        simplex = sorted;
        fvals = sorted_f;
        order = (0..=n).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = if fvals[n] == fvals[0] { 0.0 } else { fvals[n] - fvals[0] };
        if diameter <= opts.x_tol && spread <= opts.f_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect();
            bounds.project(&mut p);
            p
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < fvals[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
            continue;
        }
        if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fvals[n] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, if fc <= fr { fc } else { f64::NAN })
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, if fc < fvals[n] { fc } else { f64::NAN })
        };
        if !fc.is_nan() {
            simplex[n] = xc;
            fvals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            bounds.project(&mut simplex[i]);
            fvals[i] = eval(&simplex[i]);
        }
    }
    OptimResult { x: simplex[0].clone(), f: fvals[0], iterations, converged, gradient_norm: None }
}

/// How a quasi-Newton run obtains gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Three-point differences with step `1e-6 * max(1, |x_i|)`, kept inside the box.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy)]
pub struct QuasiNewtonOptions {
    /// Correction pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    /// Converged when `||projected gradient||_inf < pg_tol * max(1, |f|)`.
    pub pg_tol: f64,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        QuasiNewtonOptions { memory: 10, max_iter: 500, pg_tol: 1e-12 }
    }
}

fn fd_step(x: f64) -> f64 {
    // cube root of machine epsilon balances truncation and roundoff for a
    // three-point stencil
    1e-6 * x.abs().max(1.0)
}

/// Three-point finite-difference gradient. Central where the stencil fits in
/// the box, otherwise the second-order one-sided stencil.
pub fn fd_gradient<F>(f: F, x: &[f64], f0: f64, bounds: Option<&Bounds>) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    fd_gradient_with(f, x, f0, bounds, fd_step)
}

fn fd_gradient_with<F>(mut f: F, x: &[f64], f0: f64, bounds: Option<&Bounds>, step: fn(f64) -> f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step(x[i]);
            let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lower[i], b.upper[i]));
            let g = if x[i] - h >= lo && x[i] + h <= hi {
                p[i] = x[i] + h;
                let fp = f(&p);
                p[i] = x[i] - h;
                let fm = f(&p);
                (fp - fm) / (2.0 * h)
            } else {
                let s = if x[i] + 2.0 * h <= hi { 1.0 } else { -1.0 };
                p[i] = x[i] + s * h;
                let f1 = f(&p);
                p[i] = x[i] + s * 2.0 * h;
                let f2 = f(&p);
                s * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
            };
            p[i] = x[i];
            g
        })
        .collect()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| (xi - (xi - gi).clamp(bounds.lower[i], bounds.upper[i])).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory quasi-Newton with box constraints by gradient projection.
///
/// Variables sitting on a bound with the gradient pushing outward are held
/// fixed; the two-loop recursion acts on the rest; an Armijo backtracking
/// search runs along the projected path. `objective` writes the gradient into
/// its second argument and returns the value. Trial points never leave the box.
pub fn bounded_quasi_newton<F>(mut objective: F, start: &[f64], bounds: &Bounds, opts: QuasiNewtonOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = start.len();
    let mut x = start.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptimResult { x, f, iterations: 0, converged: false, gradient_norm: None };
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut pg = projected_gradient_norm(&x, &g, bounds);
    let mut stalled = 0;

    while iterations < opts.max_iter {
        if pg < opts.pg_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(a, &fr)| if fr { *a } else { 0.0 }).collect() };

        // two-loop recursion on the free subspace
        let mut q = mask(&g);
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(&mask(s), &q);
            for (qi, yi) in q.iter_mut().zip(mask(y)) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = memory.back().map_or(1.0, |(s, y, _)| {
            let (ms, my) = (mask(s), mask(y));
            let yy = dot(&my, &my);
            if yy > 0.0 && dot(&ms, &my) > 0.0 {
                dot(&ms, &my) / yy
            } else {
                1.0
            }
        });
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&mask(y), &q);
            for (qi, si) in q.iter_mut().zip(mask(s)) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut gd = dot(&g, &dir);
        if !(gd < 0.0) {
            memory.clear();
            dir = mask(&g).iter().map(|v| -v).collect();
            gd = dot(&g, &dir);
        }
        let mut t = if memory.is_empty() {
            let dn = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dn > 0.0 {
                (1.0 / dn).min(1.0)
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let mut xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            bounds.project(&mut xt);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            let ft = objective(&xt, &mut g_new);
            if ft.is_finite() && g_new.iter().all(|v| v.is_finite()) && ft <= f + 1e-4 * dot(&g, &step) {
                accepted = Some((xt, ft, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xt, ft, s)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            stalled += 1;
            if stalled > 2 {
                break;
            }
            continue;
        };
        stalled = 0;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = xt;
        f = ft;
        g.copy_from_slice(&g_new);
        pg = projected_gradient_norm(&x, &g, bounds);
    }
    if !converged && pg < opts.pg_tol * f.abs().max(1.0) {
        converged = true;
    }
    OptimResult { x, f, iterations, converged, gradient_norm: Some(pg) }
}

/// Runs [`bounded_quasi_newton`] on a value-only objective with
/// finite-difference gradients.
pub fn bounded_quasi_newton_fd<F>(mut objective: F, start: &[f64], bounds: &Bounds, opts: QuasiNewtonOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    bounded_quasi_newton(
        |x: &[f64], g: &mut [f64]| {
            let f0 = objective(x);
            let fd = fd_gradient(&mut objective, x, f0, Some(bounds));
            g.copy_from_slice(&fd);
            f0
        },
        start,
        bounds,
        opts,
    )
}

/// Largest componentwise discrepancy `|g_analytic - g_fd| / max(1, |g_fd|)`
/// between an analytic gradient and central differences with step
/// `cbrt(eps) * max(1, |x_i|)`.
pub fn check_gradient<F>(mut objective: F, x: &[f64]) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut scratch = vec![0.0; x.len()];
    let f0 = objective(x, &mut g);
    let step = |v: f64| 6.0554544523933395e-6 * v.abs().max(1.0);
    let fd = fd_gradient_with(|p: &[f64]| objective(p, &mut scratch), x, f0, None, step);
    g.iter().zip(&fd).map(|(a, n)| (a - n).abs() / n.abs().max(1.0)).fold(0.0, f64::max)
}
