//! Monte Carlo sweeps over synthetic IsoFLOP experiments.
//!
//! A sweep is the cross product of surfaces, grid widths, biases, noise
//! levels, budget counts, points per curve, realizations and methods. One
//! noisy experiment is drawn per realization and every method is fit to that
//! same draw. Rows come back in cell order regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_method, FitOptions, Method};
use crate::model::LossSurface;
use crate::rng::derive_seed;
use crate::simulate::{add_noise, build_experiment, log_uniform_budgets, BiasSpec, GridSpec, NoiseSpec};
use crate::stats::variance;

/// A grid width given by name (`XS`, `S`, `L`, `XL`) or by half factor `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridWidth {
    Named(String),
    Factor(f64),
}

impl GridWidth {
    pub fn spec(&self, n_points: usize) -> Result<GridSpec> {
        match self {
            GridWidth::Named(n) => GridSpec::named(n, n_points),
            GridWidth::Factor(k) => GridSpec::new(*k, n_points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Built-in surface names.
    pub surfaces: Vec<String>,
    pub grids: Vec<GridWidth>,
    pub biases: Vec<BiasSpec>,
    pub sigmas: Vec<f64>,
    pub budget_counts: Vec<usize>,
    pub points_per_curve: Vec<usize>,
    pub realizations: usize,
    pub methods: Vec<Method>,
    /// Lowest and highest budget; counts are spread log-uniformly between.
    pub budget_range: (f64, f64),
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig::exponent_inference()
    }
}

impl SweepConfig {
    /// Noisy exponent-inference comparison: asymmetric surface, drift to 3x,
    /// the L grid, five methods.
    pub fn exponent_inference() -> Self {
        SweepConfig {
            surfaces: vec!["asymmetric".into()],
            grids: vec![GridWidth::Named("L".into())],
            biases: vec![BiasSpec::Drift { end_factor: 3.0 }],
            sigmas: vec![0.05, 0.1, 0.2],
            budget_counts: vec![2, 3, 4],
            points_per_curve: vec![4, 8, 16, 32],
            realizations: 256,
            methods: Method::NOISY_COMPARISON.to_vec(),
            budget_range: (1e17, 1e21),
            seed: 0,
            fit: FitOptions::default(),
        }
    }

    /// Estimator variance under ideal conditions: symmetric surface,
    /// centred grids.
    pub fn data_efficiency() -> Self {
        SweepConfig {
            surfaces: vec!["symmetric".into()],
            grids: ["XS", "S", "L"].iter().map(|g| GridWidth::Named((*g).into())).collect(),
            biases: vec![BiasSpec::None],
            sigmas: vec![0.01, 0.02, 0.05],
            budget_counts: vec![3, 5, 7],
            points_per_curve: vec![21, 31, 41],
            realizations: 10,
            methods: vec![Method::Approach2, Method::DirectMle, Method::VpnlsQuasiNewton],
            budget_range: (1e17, 1e21),
            seed: 0,
            fit: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("surfaces", self.surfaces.is_empty()),
            ("grids", self.grids.is_empty()),
            ("biases", self.biases.is_empty()),
            ("sigmas", self.sigmas.is_empty()),
            ("budget_counts", self.budget_counts.is_empty()),
            ("points_per_curve", self.points_per_curve.is_empty()),
            ("methods", self.methods.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("sweep axis '{name}' is empty")));
        }
        if self.realizations == 0 {
            return Err(Error::Config("sweep needs at least one realization".into()));
        }
        for s in &self.surfaces {
            LossSurface::builtin(s).ok_or_else(|| Error::Config(format!("unknown surface '{s}'")))?;
        }
        for g in &self.grids {
            for &p in &self.points_per_curve {
                g.spec(p)?;
            }
        }
        for b in &self.biases {
            b.validate()?;
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("noise sigma must be non-negative, got {s}")));
        }
        for &c in &self.budget_counts {
            log_uniform_budgets(self.budget_range.0, self.budget_range.1, c)?;
        }
        Ok(())
    }

    /// Number of experiments drawn (every axis except methods).
    pub fn experiment_count(&self) -> usize {
        self.surfaces.len()
            * self.grids.len()
            * self.biases.len()
            * self.sigmas.len()
            * self.budget_counts.len()
            * self.points_per_curve.len()
            * self.realizations
    }

    pub fn row_count(&self) -> usize {
        self.experiment_count() * self.methods.len()
    }
}

/// One fit in a sweep. Errors are signed and relative (fractions, not %).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub surface: String,
    pub grid: String,
    pub bias_kind: String,
    pub bias_factor: f64,
    pub sigma: f64,
    pub n_budgets: usize,
    pub n_points: usize,
    pub realization: usize,
    pub method: Method,
    pub a_hat: f64,
    pub b_hat: f64,
    pub a_err_rel: f64,
    pub b_err_rel: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

struct Cell<'a> {
    surface: (&'a str, LossSurface),
    grid: GridSpec,
    bias: BiasSpec,
    sigma: f64,
    budgets: Vec<f64>,
    realization: usize,
    key: [u64; 7],
}

fn cells(cfg: &SweepConfig) -> Result<Vec<Cell<'_>>> {
    let mut out = Vec::with_capacity(cfg.experiment_count());
    for (si, s) in cfg.surfaces.iter().enumerate() {
        let surface = LossSurface::builtin(s).ok_or_else(|| Error::Config(format!("unknown surface '{s}'")))?;
        for (gi, g) in cfg.grids.iter().enumerate() {
            for (bi, bias) in cfg.biases.iter().enumerate() {
                for (ni, &sigma) in cfg.sigmas.iter().enumerate() {
                    for (ci, &count) in cfg.budget_counts.iter().enumerate() {
                        let budgets = log_uniform_budgets(cfg.budget_range.0, cfg.budget_range.1, count)?;
                        for (pi, &points) in cfg.points_per_curve.iter().enumerate() {
                            let grid = g.spec(points)?;
                            for r in 0..cfg.realizations {
                                let key = [si, gi, bi, ni, ci, pi, r].map(|v| v as u64);
                                out.push(Cell {
                                    surface: (s.as_str(), surface),
                                    grid: grid.clone(),
                                    bias: *bias,
                                    sigma,
                                    budgets: budgets.clone(),
                                    realization: r,
                                    key,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn run_cell(cell: &Cell<'_>, cfg: &SweepConfig) -> Vec<SweepRecord> {
    let (name, surface) = cell.surface;
    let truth = surface.exponents();
    let record = |method: Method, fit: Result<(f64, f64)>| {
        let (a_hat, b_hat, status) = match fit {
            Ok((a, b)) if a.is_finite() && b.is_finite() => (a, b, "ok".to_string()),
            Ok(_) => (f64::NAN, f64::NAN, "failed: non-finite exponents".to_string()),
            Err(e) => (f64::NAN, f64::NAN, format!("failed: {e}")),
        };
        SweepRecord {
            surface: name.to_string(),
            grid: cell.grid.name.clone(),
            bias_kind: cell.bias.kind().to_string(),
            bias_factor: cell.bias.factor(),
            sigma: cell.sigma,
            n_budgets: cell.budgets.len(),
            n_points: cell.grid.n_points,
            realization: cell.realization,
            method,
            a_hat,
            b_hat,
            a_err_rel: (a_hat - truth.0) / truth.0,
            b_err_rel: (b_hat - truth.1) / truth.1,
            status,
        }
    };
    let data = build_experiment(&surface, &cell.budgets, &cell.grid, cell.bias)
        .and_then(|e| add_noise(&e, NoiseSpec { sigma: cell.sigma, seed: derive_seed(cfg.seed, &cell.key) }));
    let points = match data {
        Ok(e) => e.points,
        Err(e) => {
            let msg = e.to_string();
            return cfg.methods.iter().map(|&m| record(m, Err(Error::Config(msg.clone())))).collect();
        }
    };
    let opts = FitOptions { seed: derive_seed(cfg.seed ^ 0x5eed, &cell.key), ..cfg.fit.clone() };
    cfg.methods
        .iter()
        .map(|&m| record(m, fit_method(m, &points, &opts).map(|f| (f.law.a, f.law.b))))
        .collect()
}

/// Runs every cell. Fit failures become `failed` rows; only an invalid
/// configuration is an error.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    run_sweep_with(cfg, |_| {})
}

/// As [`run_sweep`], calling `progress` with the number of rows finished
/// for each completed experiment.
pub fn run_sweep_with<F>(cfg: &SweepConfig, progress: F) -> Result<Vec<SweepRecord>>
where
    F: Fn(usize) + Sync,
{
    cfg.validate()?;
    let cells = cells(cfg)?;
    let rows: Vec<Vec<SweepRecord>> = cells
        .par_iter()
        .map(|c| {
            let r = run_cell(c, cfg);
            progress(r.len());
            r
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Runs the sweep `chunk` experiments at a time and hands each finished
/// chunk's rows to `sink` in cell order. Rows are identical to
/// [`run_sweep`]. An error from `sink` stops the sweep.
pub fn run_sweep_streaming<S>(cfg: &SweepConfig, chunk: usize, mut sink: S) -> Result<()>
where
    S: FnMut(&[SweepRecord]) -> Result<()>,
{
    cfg.validate()?;
    let cells = cells(cfg)?;
    for group in cells.chunks(chunk.max(1)) {
        let rows: Vec<SweepRecord> = group.par_iter().map(|c| run_cell(c, cfg)).collect::<Vec<_>>().concat();
        sink(&rows)?;
    }
    Ok(())
}

/// Per-method error summary over the successful rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub fits: usize,
    pub failed: usize,
    pub max_abs_a_err: f64,
    pub max_abs_b_err: f64,
    pub geomean_abs_a_err: f64,
    pub geomean_abs_b_err: f64,
    /// Variance of `b_hat` over all successful fits.
    pub b_variance: f64,
}

pub fn summarize(records: &[SweepRecord]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let rows: Vec<&SweepRecord> = records.iter().filter(|r| r.method == m).collect();
            let ok: Vec<&&SweepRecord> = rows.iter().filter(|r| r.is_ok()).collect();
            let a: Vec<f64> = ok.iter().map(|r| r.a_err_rel.abs()).collect();
            let b: Vec<f64> = ok.iter().map(|r| r.b_err_rel.abs()).collect();
            let b_hat: Vec<f64> = ok.iter().map(|r| r.b_hat).collect();
            MethodSummary {
                method: m,
                fits: ok.len(),
                failed: rows.len() - ok.len(),
                max_abs_a_err: a.iter().copied().fold(f64::NAN, f64::max),
                max_abs_b_err: b.iter().copied().fold(f64::NAN, f64::max),
                geomean_abs_a_err: geomean(&a),
                geomean_abs_b_err: geomean(&b),
                b_variance: if b_hat.len() > 1 { variance(&b_hat) } else { f64::NAN },
            }
        })
        .collect()
}

fn geomean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x.max(crate::metrics::GEOMEAN_FLOOR).ln()).sum::<f64>() / v.len() as f64).exp()
}
