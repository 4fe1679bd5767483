//! Variable projection over the exponents `(alpha, beta)`.
//!
//! For fixed exponents the surface is linear in `(E, A, B)`, so the inner
//! problem is a three-column least-squares solve and the outer search runs
//! in two dimensions only.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{FitResult, Method, Normalization};
use crate::linsolve::{solve_nnls, solve_ols, DesignMatrix, LstsqSolution};
use crate::model::LossSurface;
use crate::optim::{
    bounded_quasi_newton, bounded_quasi_newton_fd, grid_search_axes, linspace, nelder_mead, Bounds, GradientMode,
    NelderMeadOptions, OptimResult, QuasiNewtonOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VpnlsVariant {
    /// Nelder-Mead on the NNLS-projected objective.
    NnlsNelderMead,
    /// Bounded quasi-Newton on the OLS-projected objective.
    #[default]
    OlsQuasiNewton,
    /// Best node of the fine grid, no refinement.
    GridOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpnlsConfig {
    pub variant: VpnlsVariant,
    pub gradient: GradientMode,
    pub normalization: Option<Normalization>,
    /// Points per dimension of the seeding grid.
    pub coarse_grid: usize,
    /// Points per dimension for `grid_only`.
    pub fine_grid: usize,
    pub alpha_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
}

impl Default for VpnlsConfig {
    fn default() -> Self {
        VpnlsConfig {
            variant: VpnlsVariant::OlsQuasiNewton,
            gradient: GradientMode::Analytic,
            normalization: None,
            coarse_grid: 32,
            fine_grid: 256,
            alpha_bounds: (1e-4, 1.5),
            beta_bounds: (1e-4, 1.5),
        }
    }
}

impl VpnlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_grid < 2 || self.fine_grid < 2 {
            return Err(Error::Config("VPNLS grids need at least 2 points per dimension".into()));
        }
        for (lo, hi) in [self.alpha_bounds, self.beta_bounds] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::Config(format!("invalid exponent bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Cell size of the fine grid along `(alpha, beta)`.
    pub fn fine_cell(&self) -> (f64, f64) {
        let k = (self.fine_grid - 1) as f64;
        ((self.alpha_bounds.1 - self.alpha_bounds.0) / k, (self.beta_bounds.1 - self.beta_bounds.0) / k)
    }
}

/// Design matrix with columns `[1, N^-alpha, D^-beta]`.
pub fn design(alpha: f64, beta: f64, data: &Dataset) -> DesignMatrix {
    let m = data.len();
    let mut x = DesignMatrix::zeros(m, 3);
    for i in 0..m {
        x.set(i, 0, 1.0);
        x.set(i, 1, (-alpha * data.ln_n[i]).exp());
        x.set(i, 2, (-beta * data.ln_d[i]).exp());
    }
    x
}

/// Inner NNLS solve at fixed exponents. Returns `(E, A, B)` and the RSS.
pub fn project_nnls(alpha: f64, beta: f64, data: &Dataset) -> Result<LstsqSolution> {
    match solve_nnls(&design(alpha, beta, data), &data.loss) {
        Ok(s) => Ok(s),
        Err(Error::NnlsNotConverged { best, .. }) => {
            let x = design(alpha, beta, data);
            let rss = x.rss(&best, &data.loss);
            Ok(LstsqSolution { coef: best, rank: 3, rank_deficient: false, rss })
        }
        Err(e) => Err(e),
    }
}

/// Residual sum of squares after eliminating `(E, A, B) >= 0` by NNLS.
pub fn vp_objective_nnls(alpha: f64, beta: f64, data: &Dataset) -> Result<f64> {
    Ok(project_nnls(alpha, beta, data)?.rss)
}

/// OLS-projected RSS and its gradient in `(alpha, beta)`.
///
/// By the envelope theorem the derivatives of the inner coefficients drop
/// out: `dRSS/dalpha = 2 A r^T (ln N * N^-alpha)` and likewise for `beta`.
pub fn vp_objective_ols_grad(alpha: f64, beta: f64, data: &Dataset) -> Result<(f64, [f64; 2])> {
    let x = design(alpha, beta, data);
    let sol = solve_ols(&x, &data.loss)?;
    let (e, a, b) = (sol.coef[0], sol.coef[1], sol.coef[2]);
    let mut f = 0.0;
    let mut ga = 0.0;
    let mut gb = 0.0;
    for i in 0..data.len() {
        let tn = x.get(i, 1);
        let td = x.get(i, 2);
        let r = data.loss[i] - e - a * tn - b * td;
        f += r * r;
        ga += r * data.ln_n[i] * tn;
        gb += r * data.ln_d[i] * td;
    }
    Ok((f, [2.0 * a * ga, 2.0 * b * gb]))
}

fn finite_or_inf(r: Result<f64>) -> f64 {
    match r {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Fits the surface by variable projection.
///
/// A `coarse_grid`² scan of the NNLS objective seeds the variant's local
/// search; `grid_only` instead returns the best node of the `fine_grid`² scan.
/// The reported `(E, A, B)` always come from a final NNLS solve, and the
/// result never scores worse than its seed node.
pub fn fit_vpnls(data: &Dataset, cfg: &VpnlsConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.len() < 4 {
        return Err(Error::InsufficientData(format!("VPNLS needs at least 4 points, got {}", data.len())));
    }
    if Dataset::distinct_count(&data.n) < 2 || Dataset::distinct_count(&data.d) < 2 {
        return Err(Error::Unidentifiable("exponent unidentifiable: N or D takes a single value".into()));
    }
    let owned;
    let data = match cfg.normalization {
        Some(nz) => {
            owned = data.normalized(nz.n_scale, nz.d_scale);
            &owned
        }
        None => data,
    };
    let bounds = Bounds::new(
        vec![cfg.alpha_bounds.0, cfg.beta_bounds.0],
        vec![cfg.alpha_bounds.1, cfg.beta_bounds.1],
    )?;
    let nnls = |x: &[f64]| finite_or_inf(vp_objective_nnls(x[0], x[1], data));
    let axes = |k: usize| {
        vec![linspace(cfg.alpha_bounds.0, cfg.alpha_bounds.1, k), linspace(cfg.beta_bounds.0, cfg.beta_bounds.1, k)]
    };

    let k = if cfg.variant == VpnlsVariant::GridOnly { cfg.fine_grid } else { cfg.coarse_grid };
    let seed = grid_search_axes(nnls, &axes(k))?;
    let (best, method): (OptimResult, Method) = match cfg.variant {
        VpnlsVariant::GridOnly => (seed.clone(), Method::VpnlsGrid),
        VpnlsVariant::NnlsNelderMead => {
            (nelder_mead(nnls, &seed.x, &bounds, NelderMeadOptions::default()), Method::VpnlsNelderMead)
        }
        VpnlsVariant::OlsQuasiNewton => {
            let opts = QuasiNewtonOptions::default();
            let r = match cfg.gradient {
                GradientMode::Analytic => bounded_quasi_newton(
                    |x, g| match vp_objective_ols_grad(x[0], x[1], data) {
                        Ok((f, gr)) => {
                            g.copy_from_slice(&gr);
                            f
                        }
                        Err(_) => f64::INFINITY,
                    },
                    &seed.x,
                    &bounds,
                    opts,
                ),
                GradientMode::FiniteDifference => bounded_quasi_newton_fd(
                    |x| vp_objective_ols_grad(x[0], x[1], data).map_or(f64::INFINITY, |v| v.0),
                    &seed.x,
                    &bounds,
                    opts,
                ),
            };
            (r, Method::VpnlsQuasiNewton)
        }
    };

    let mut x = best.x.clone();
    let mut sol = project_nnls(x[0], x[1], data)?;
    if !(sol.rss <= seed.f) {
        x = seed.x.clone();
        sol = project_nnls(x[0], x[1], data)?;
    }
    let fitted = LossSurface::new(sol.coef[0], sol.coef[1], sol.coef[2], x[0], x[1]);
    let surface = cfg.normalization.map_or(fitted, |nz| nz.to_natural(&fitted));
    Ok(FitResult::from_surface(
        method,
        surface,
        sol.rss,
        Some(sol.rss),
        best.iterations,
        best.converged,
        cfg.normalization,
    ))
}
