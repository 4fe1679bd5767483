//! The parabolic IsoFLOP pipeline: one parabola per budget in log10 space,
//! then power laws through the per-budget minima.
//!
//! Also hosts the vertex-shift oracle, which computes the displacement of
//! a fitted parabola's vertex from the true optimum directly from the surface
//! exponents and the sampling grid.

use serde::{Deserialize, Serialize};

use crate::data::{group_by_budget, Observation};
use crate::error::{Error, Result};
use crate::linsolve::{inverse_gram, solve_ols, DesignMatrix};
use crate::model::{Allocation, AllocationLaw};

/// The variable swept along an IsoFLOP curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `log10 N`
    Params,
    /// `log10 D`
    #[default]
    Tokens,
}

impl SweepAxis {
    pub fn position(&self, o: &Observation) -> f64 {
        match self {
            SweepAxis::Params => o.n.log10(),
            SweepAxis::Tokens => o.d.log10(),
        }
    }
}

/// Quadratic `loss = p x^2 + q x + r` in a log10 position `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// `-q / 2p`; `None` when the curvature is not positive.
    pub vertex: Option<f64>,
    pub axis: SweepAxis,
    /// Standard error of `p`; infinite with no residual degrees of freedom.
    pub p_stderr: f64,
    pub n_points: usize,
    pub rss: f64,
}

impl ParabolaFit {
    pub fn eval(&self, x: f64) -> f64 {
        (self.p * x + self.q) * x + self.r
    }
}

/// Least-squares parabola through `(position, loss)` points.
///
/// The regression runs on positions centred at their mean and the
/// coefficients are mapped back afterwards. Curvature within roundoff of zero
/// counts as non-positive.
pub fn fit_parabola(points: &[(f64, f64)], axis: SweepAxis) -> Result<ParabolaFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("parabola needs at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        let i = points.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite { index: i, what: "parabola point".into() });
    }
    let mean = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mut xm = DesignMatrix::zeros(n, 3);
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    for (i, (x, _)) in points.iter().enumerate() {
        let u = x - mean;
        xm.set(i, 0, 1.0);
        xm.set(i, 1, u);
        xm.set(i, 2, u * u);
    }
    let sol = solve_ols(&xm, &y)?;
    if sol.rank_deficient {
        return Err(Error::InsufficientData("parabola positions are not distinct".into()));
    }
    let (c0, c1, c2) = (sol.coef[0], sol.coef[1], sol.coef[2]);
    // back to raw coordinates: p u^2 + q' u + r', u = x - mean
    let p = c2;
    let q = c1 - 2.0 * c2 * mean;
    let r = c0 - c1 * mean + c2 * mean * mean;

    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), pt| (l.min(pt.0), h.max(pt.0)));
    let half_span = 0.5 * (hi - lo);
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let curvature_floor = 64.0 * f64::EPSILON * y_scale / (half_span * half_span);
    let vertex = if p > curvature_floor { Some(mean - c1 / (2.0 * c2)) } else { None };

    let dof = n - 3;
    let p_stderr = if dof == 0 {
        f64::INFINITY
    } else {
        let g = inverse_gram(&xm)?;
        (sol.rss / dof as f64 * g[8]).sqrt()
    };
    Ok(ParabolaFit { p, q, r, vertex, axis, p_stderr, n_points: n, rss: sol.rss })
}

/// `log10 value = slope * log10 C + intercept`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// The `(C, value)` optima the line was fit through.
    pub optima: Vec<(f64, f64)>,
}

/// OLS line of `log10 value` on `log10 C`.
pub fn fit_power_law(optima: &[(f64, f64)]) -> Result<PowerLawFit> {
    if optima.len() < 2 {
        return Err(Error::InsufficientData(format!("power law needs at least 2 budgets, got {}", optima.len())));
    }
    if let Some(i) = optima.iter().position(|(c, v)| !(*c > 0.0) || !(*v > 0.0) || !c.is_finite() || !v.is_finite()) {
        return Err(Error::Domain(format!("optimum {i} is not positive and finite")));
    }
    let xs: Vec<f64> = optima.iter().map(|(c, _)| c.log10()).collect();
    let ys: Vec<f64> = optima.iter().map(|(_, v)| v.log10()).collect();
    let ones = vec![1.0; xs.len()];
    let xm = DesignMatrix::from_columns(&[&ones, &xs])?;
    let sol = solve_ols(&xm, &ys)?;
    if sol.rank_deficient {
        return Err(Error::InsufficientData("power law needs at least 2 distinct budgets".into()));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - sol.rss / sst } else { 1.0 };
    Ok(PowerLawFit { slope: sol.coef[1], intercept: sol.coef[0], r_squared, optima: optima.to_vec() })
}

/// Parabola and implied optimum for one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetParabola {
    pub budget: f64,
    pub fit: ParabolaFit,
    pub optimum: Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approach2Result {
    pub law: AllocationLaw,
    pub n_fit: PowerLawFit,
    pub d_fit: PowerLawFit,
    pub budgets: Vec<BudgetParabola>,
    /// Budgets dropped from the regression, with the reason.
    pub excluded: Vec<(f64, String)>,
}

/// Runs the three-step pipeline on observations grouped by nominal budget.
///
/// Each budget's parabola is fit on `axis`; its vertex gives that variable's
/// optimum and the other follows from `C = 6 N D` at the nominal budget.
/// Budgets with too few points or non-positive curvature are excluded.
pub fn run_approach2(obs: &[Observation], axis: SweepAxis) -> Result<Approach2Result> {
    let mut budgets = Vec::new();
    let mut excluded = Vec::new();
    for (c, group) in group_by_budget(obs) {
        let pts: Vec<(f64, f64)> = group.iter().map(|o| (axis.position(o), o.loss)).collect();
        match fit_parabola(&pts, axis) {
            Ok(fit) => match fit.vertex {
                Some(v) => {
                    let optimum = match axis {
                        SweepAxis::Tokens => Allocation::from_tokens(c, 10f64.powf(v)),
                        SweepAxis::Params => Allocation::from_params(c, 10f64.powf(v)),
                    };
                    budgets.push(BudgetParabola { budget: c, fit, optimum });
                }
                None => excluded.push((c, "non-positive curvature".to_string())),
            },
            Err(e) => excluded.push((c, e.to_string())),
        }
    }
    if budgets.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} budget(s) with a valid parabola; at least 2 required",
            budgets.len()
        )));
    }
    let n_opt: Vec<(f64, f64)> = budgets.iter().map(|b| (b.budget, b.optimum.n)).collect();
    let d_opt: Vec<(f64, f64)> = budgets.iter().map(|b| (b.budget, b.optimum.d)).collect();
    let n_fit = fit_power_law(&n_opt)?;
    let d_fit = fit_power_law(&d_opt)?;
    let law = AllocationLaw { a: n_fit.slope, b: d_fit.slope, a0: n_fit.intercept, b0: d_fit.intercept };
    Ok(Approach2Result { law, n_fit, d_fit, budgets, excluded })
}

/// Vertex displacement of a parabola fit to a noise-free IsoFLOP curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexShift {
    /// Fitted vertex in `w = log10(N / N*)`.
    pub delta_w: f64,
    /// Multiplicative error of the `N*` intercept, `10^delta_w - 1`.
    pub intercept_error: f64,
}

impl VertexShift {
    /// Shift of the fitted vertex in `log10(D / D*)`.
    pub fn token_delta_w(&self) -> f64 {
        -self.delta_w
    }

    /// Multiplicative error of the `D*` intercept, `10^-delta_w - 1`.
    pub fn token_intercept_error(&self) -> f64 {
        10f64.powf(-self.delta_w) - 1.0
    }

    /// Signed error of the fitted log10 `D*` intercept relative to `|b0|`.
    pub fn token_log_intercept_relative_error(&self, b0: f64) -> f64 {
        self.token_delta_w() / b0.abs()
    }
}

/// Vertex shift for exponents `(alpha, beta)`, a grid spanning `width`
/// decades centred on the optimum, and `n` uniformly spaced points.
///
/// Along the constraint, with `w = log10(N / N*)`, the reducible loss is
/// proportional to `beta 10^(-alpha w) + alpha 10^(beta w)` once the
/// first-order condition `alpha A N*^-alpha = beta B D*^-beta` is used. The
/// result therefore depends on neither the budget nor `E`, `A`, `B`.
pub fn vertex_shift_oracle(alpha: f64, beta: f64, width: f64, n: usize) -> Result<VertexShift> {
    if !(width > 0.0) || n < 3 || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::Domain("need width > 0, n >= 3 and positive exponents".into()));
    }
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = -0.5 * width + width * i as f64 / (n - 1) as f64;
            (w, beta * 10f64.powf(-alpha * w) + alpha * 10f64.powf(beta * w))
        })
        .collect();
    let fit = fit_parabola(&pts, SweepAxis::Params)?;
    let delta_w = fit.vertex.ok_or_else(|| Error::Domain("IsoFLOP curve has no positive curvature".into()))?;
    Ok(VertexShift { delta_w, intercept_error: 10f64.powf(delta_w) - 1.0 })
}
