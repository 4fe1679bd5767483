//! Common result type for every estimator and a by-name dispatcher.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::approach2::{run_approach2, SweepAxis};
use crate::data::{Dataset, Observation};
use crate::direct::{fit_direct, DirectFitConfig, DirectVariant};
use crate::error::{Error, Result};
use crate::model::{AllocationLaw, LossSurface};
use crate::optim::GradientMode;
use crate::vpnls::{fit_vpnls, VpnlsConfig, VpnlsVariant};

/// Every fitting method the toolkit ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Approach2,
    DirectNaive,
    DirectMle,
    DirectLseLog,
    DirectLseLinear,
    VpnlsNelderMead,
    VpnlsQuasiNewton,
    VpnlsGrid,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Approach2,
        Method::DirectNaive,
        Method::DirectMle,
        Method::DirectLseLog,
        Method::DirectLseLinear,
        Method::VpnlsNelderMead,
        Method::VpnlsQuasiNewton,
        Method::VpnlsGrid,
    ];

    /// The five methods compared under noise: Approach 2, naive, MLE and
    /// log-loss direct fits, and gradient-based variable projection.
    pub const NOISY_COMPARISON: [Method; 5] =
        [Method::Approach2, Method::DirectNaive, Method::DirectMle, Method::DirectLseLog, Method::VpnlsQuasiNewton];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Approach2 => "approach2",
            Method::DirectNaive => "direct_naive",
            Method::DirectMle => "direct_mle",
            Method::DirectLseLog => "direct_lse_log",
            Method::DirectLseLinear => "direct_lse_linear",
            Method::VpnlsNelderMead => "vpnls_nelder_mead",
            Method::VpnlsQuasiNewton => "vpnls_quasi_newton",
            Method::VpnlsGrid => "vpnls_grid",
        }
    }

    /// Whether the method estimates the full surface.
    pub fn fits_surface(&self) -> bool {
        !matches!(self, Method::Approach2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let m = match key.as_str() {
            "approach2" | "a2" => Method::Approach2,
            "direct_naive" | "naive" => Method::DirectNaive,
            "direct_mle" | "mle" => Method::DirectMle,
            "direct_lse_log" | "lse" | "lse_log" => Method::DirectLseLog,
            "direct_lse_linear" | "lse_linear" => Method::DirectLseLinear,
            "vpnls_nelder_mead" | "vpnls_nnls" => Method::VpnlsNelderMead,
            "vpnls_quasi_newton" | "vpnls" | "vpnls_ols" => Method::VpnlsQuasiNewton,
            "vpnls_grid" | "grid_only" => Method::VpnlsGrid,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        };
        Ok(m)
    }
}

/// Input scaling `N / n_scale`, `D / d_scale` applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub n_scale: f64,
    pub d_scale: f64,
}

impl Normalization {
    /// `N / 1e6`, `D / 1e9`.
    pub const REAL_DATA: Normalization = Normalization { n_scale: 1e6, d_scale: 1e9 };

    /// Maps a surface fit on normalized inputs back to natural units.
    pub fn to_natural(&self, s: &LossSurface) -> LossSurface {
        LossSurface::new(s.e, s.a * self.n_scale.powf(s.alpha), s.b * self.d_scale.powf(s.beta), s.alpha, s.beta)
    }

    pub fn to_normalized(&self, s: &LossSurface) -> LossSurface {
        LossSurface::new(s.e, s.a / self.n_scale.powf(s.alpha), s.b / self.d_scale.powf(s.beta), s.alpha, s.beta)
    }
}

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    /// Recovered surface in natural units (surface-fitting methods only).
    pub surface: Option<LossSurface>,
    pub law: AllocationLaw,
    /// Final value of the method's own objective.
    pub objective: f64,
    /// Residual sum of squares of raw losses, where defined.
    pub rss: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub normalization: Option<Normalization>,
}

impl FitResult {
    /// The surface in the coordinates it was fit in.
    pub fn fit_space_surface(&self) -> Option<LossSurface> {
        match (self.surface, self.normalization) {
            (Some(s), Some(nz)) => Some(nz.to_normalized(&s)),
            (s, _) => s,
        }
    }

    /// Builds a result around a surface, deriving the allocation law from it.
    pub(crate) fn from_surface(
        method: Method,
        surface: LossSurface,
        objective: f64,
        rss: Option<f64>,
        iterations: usize,
        converged: bool,
        normalization: Option<Normalization>,
    ) -> FitResult {
        let law = surface.allocation_law().unwrap_or_else(|_| {
            let (a, b) = surface.exponents();
            AllocationLaw { a, b, a0: f64::NAN, b0: f64::NAN }
        });
        FitResult { method, surface: Some(surface), law, objective, rss, iterations, converged, normalization }
    }
}

/// Knobs shared by the by-name dispatcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub axis: SweepAxis,
    pub gradient: GradientMode,
    /// Seed for the naive direct fit's random start.
    pub seed: u64,
    pub normalization: Option<Normalization>,
    pub direct: DirectFitConfig,
    pub vpnls: VpnlsConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            axis: SweepAxis::Tokens,
            gradient: GradientMode::Analytic,
            seed: 0,
            normalization: None,
            direct: DirectFitConfig::default(),
            vpnls: VpnlsConfig::default(),
        }
    }
}

/// Fits `method` to observations.
pub fn fit_method(method: Method, obs: &[Observation], opts: &FitOptions) -> Result<FitResult> {
    if method == Method::Approach2 {
        let r = run_approach2(obs, opts.axis)?;
        let rss = r.budgets.iter().map(|b| b.fit.rss).sum();
        return Ok(FitResult {
            method,
            surface: None,
            law: r.law,
            objective: rss,
            rss: None,
            iterations: r.budgets.len(),
            converged: r.excluded.is_empty(),
            normalization: None,
        });
    }
    let data = Dataset::from_observations(obs)?;
    match method {
        Method::DirectNaive | Method::DirectMle | Method::DirectLseLog | Method::DirectLseLinear => {
            let variant = match method {
                Method::DirectNaive => DirectVariant::Naive,
                Method::DirectMle => DirectVariant::Mle,
                Method::DirectLseLog => DirectVariant::LseLog,
                _ => DirectVariant::LseLinear,
            };
            let cfg = DirectFitConfig {
                variant,
                gradient: opts.gradient,
                seed: opts.seed,
                normalization: opts.normalization,
                ..opts.direct.clone()
            };
            fit_direct(&data, &cfg)
        }
        _ => {
            let variant = match method {
                Method::VpnlsNelderMead => VpnlsVariant::NnlsNelderMead,
                Method::VpnlsGrid => VpnlsVariant::GridOnly,
                _ => VpnlsVariant::OlsQuasiNewton,
            };
            let cfg = VpnlsConfig {
                variant,
                gradient: opts.gradient,
                normalization: opts.normalization,
                ..opts.vpnls.clone()
            };
            fit_vpnls(&data, &cfg)
        }
    }
}
