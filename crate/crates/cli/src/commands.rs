//! Subcommand implementations.

use std::collections::BTreeMap;

use isoflop_core::data::group_by_budget;
use isoflop_core::direct::{lse_objective_grad, rss_objective_grad, LossScale, ResidualPenalty};
use isoflop_core::fit::fit_method;
use isoflop_core::ingest::{read_observations_path, write_observations, IngestOptions};
use isoflop_core::metrics::{bootstrap_ci, dcl, hessian_condition, residual_tests, HessianReport, ResidualTests};
use isoflop_core::optim::check_gradient;
use isoflop_core::qc::{run_qc, BudgetReport};
use isoflop_core::simulate::{add_noise, build_experiment, NoiseSpec};
use isoflop_core::sweep::{run_sweep_streaming, summarize, SweepRecord};
use isoflop_core::vpnls::vp_objective_ols_grad;
use isoflop_core::{Dataset, Error, FitResult, LossSurface, Method, Observation, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report::{envelope, fmt_sig, open_output, to_value, write_report, Table};

type ValueAndGradient<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

/// Experiments per streamed sweep chunk.
const SWEEP_CHUNK: usize = 64;

/// Where the fitted points came from.
#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub source: String,
    pub points: usize,
    /// Rows dropped by the budget filter.
    pub filtered: usize,
    /// Points removed by QC.
    pub qc_removed: usize,
}

struct Loaded {
    points: Vec<Observation>,
    summary: DataSummary,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let (points, source, filtered) = match (&cfg.input, cfg.surface()) {
        (Some(path), _) => {
            if cfg.sigma > 0.0 {
                return Err(Error::Config("sigma applies only to simulated data".into()));
            }
            let ing = read_observations_path(path, IngestOptions { max_budget: cfg.max_budget })?;
            (ing.points, path.display().to_string(), ing.filtered)
        }
        (None, Some(surface)) => (simulate(cfg, &surface)?, "simulated".to_string(), 0),
        (None, None) => return Err(Error::Config("give an input CSV or a surface to simulate".into())),
    };
    let (points, qc_removed) = if cfg.apply_qc {
        let out = run_qc(&points, &cfg.qc)?;
        let removed = points.len() - out.clean.len();
        (out.clean, removed)
    } else {
        (points, 0)
    };
    if points.is_empty() {
        return Err(Error::Data("no points left to fit".into()));
    }
    let summary = DataSummary { source, points: points.len(), filtered, qc_removed };
    Ok(Loaded { points, summary })
}

fn simulate(cfg: &RunConfig, surface: &LossSurface) -> Result<Vec<Observation>> {
    let exp = build_experiment(surface, &cfg.budgets_or_default(), &cfg.grid_spec()?, cfg.bias)?;
    let exp = if cfg.sigma > 0.0 { add_noise(&exp, NoiseSpec { sigma: cfg.sigma, seed: cfg.seed })? } else { exp };
    Ok(exp.points)
}

fn single_method(cfg: &RunConfig, default: Method) -> Result<Method> {
    match cfg.methods_or(&[default])[..] {
        [m] => Ok(m),
        _ => Err(Error::Config("this command takes exactly one method".into())),
    }
}

fn finish(command: &str, cfg: &RunConfig, data: Option<&DataSummary>, results: Vec<Value>) -> Result<()> {
    let mut report = envelope(command, cfg, results)?;
    if let Some(d) = data {
        report["data"] = to_value(d)?;
    }
    write_report(cfg.report.as_deref(), &report)
}

pub fn simulate_cmd(cfg: &RunConfig) -> Result<()> {
    if cfg.input.is_some() {
        return Err(Error::Config("simulate takes a surface, not an input file".into()));
    }
    let surface = cfg.surface().ok_or_else(|| Error::Config("simulate needs a surface".into()))?;
    let points = simulate(cfg, &surface)?;
    let path = cfg.table.as_deref();
    write_observations(open_output(path)?, &points)?;
    if cfg.report.is_some() {
        let results = vec![json!({
            "surface": to_value(&surface)?,
            "law": to_value(&surface.allocation_law()?)?,
            "budgets": cfg.budgets_or_default(),
            "grid": to_value(&cfg.grid_spec()?)?,
            "points": points.len(),
        })];
        finish("simulate", cfg, None, results)?;
    }
    Ok(())
}

pub fn fit_cmd(cfg: &RunConfig) -> Result<()> {
    let method = single_method(cfg, Method::VpnlsQuasiNewton)?;
    let data = load(cfg)?;
    let fit = fit_method(method, &data.points, &cfg.fit)?;
    finish("fit", cfg, Some(&data.summary), vec![to_value(&fit)?])
}

fn quantities(fit: &FitResult) -> Vec<(&'static str, f64)> {
    let mut q = vec![("a", fit.law.a), ("b", fit.law.b), ("a0", fit.law.a0), ("b0", fit.law.b0)];
    if let Some(s) = fit.surface {
        q.extend([("E", s.e), ("A", s.a), ("B", s.b), ("alpha", s.alpha), ("beta", s.beta)]);
    }
    q
}

fn truth_of(surface: &LossSurface, name: &str) -> Option<f64> {
    let law = surface.allocation_law().ok()?;
    Some(match name {
        "a" => law.a,
        "b" => law.b,
        "a0" => law.a0,
        "b0" => law.b0,
        "E" => surface.e,
        "A" => surface.a,
        "B" => surface.b,
        "alpha" => surface.alpha,
        "beta" => surface.beta,
        _ => return None,
    })
}

pub fn compare_cmd(cfg: &RunConfig) -> Result<()> {
    let methods = cfg.methods_or(&Method::NOISY_COMPARISON);
    let data = load(cfg)?;
    let truth = cfg.surface();
    let fits: Vec<(Method, Result<FitResult>)> =
        methods.iter().map(|&m| (m, fit_method(m, &data.points, &cfg.fit))).collect();
    if fits.iter().all(|(_, f)| f.is_err()) {
        let msgs: Vec<String> = fits.iter().map(|(m, f)| format!("{m}: {}", f.as_ref().unwrap_err())).collect();
        return Err(Error::Optimization(format!("every method failed ({})", msgs.join("; "))));
    }
    if let Some(path) = cfg.table.as_deref() {
        let mut t = Table::create(Some(path), &["method", "quantity", "estimate", "truth", "rel_error"])?;
        for (m, fit) in &fits {
            let Ok(fit) = fit else { continue };
            for (name, value) in quantities(fit) {
                let tv = truth.as_ref().and_then(|s| truth_of(s, name));
                let rel = tv.map_or(f64::NAN, |t| (value - t) / t);
                t.row([m.to_string(), name.to_string(), fmt_sig(value), tv.map_or(String::new(), fmt_sig), fmt_sig(rel)])?;
            }
        }
        t.flush()?;
    }
    let results = fits
        .iter()
        .map(|(m, f)| match f {
            Ok(fit) => to_value(fit),
            Err(e) => Ok(json!({ "method": m, "error": e.to_string() })),
        })
        .collect::<Result<Vec<_>>>()?;
    finish("compare", cfg, Some(&data.summary), results)
}

#[derive(Debug, Serialize)]
struct QcSummary {
    input_points: usize,
    clean_points: usize,
    statuses: BTreeMap<&'static str, usize>,
    budgets: Vec<BudgetReport>,
}

pub fn qc_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load(&RunConfig { apply_qc: false, ..cfg.clone() })?;
    let out = run_qc(&data.points, &cfg.qc)?;
    if let Some(path) = cfg.table.as_deref() {
        let mut t = Table::create(Some(path), &["budget_flops", "n_params", "d_tokens", "loss", "status"])?;
        for (p, s) in data.points.iter().zip(&out.statuses) {
            t.row([p.budget, p.n, p.d, p.loss].iter().map(|v| v.to_string()).chain([s.name().to_string()]))?;
        }
        t.flush()?;
    }
    let mut statuses = BTreeMap::new();
    for s in &out.statuses {
        *statuses.entry(s.name()).or_insert(0) += 1;
    }
    let summary =
        QcSummary { input_points: data.points.len(), clean_points: out.clean.len(), statuses, budgets: out.budgets };
    finish("qc", cfg, Some(&data.summary), vec![to_value(&summary)?])
}

pub fn dcl_cmd(cfg: &RunConfig) -> Result<()> {
    let c = cfg.budget.ok_or_else(|| Error::Config("dcl needs a budget".into()))?;
    let method = single_method(cfg, Method::Approach2)?;
    let data = load(cfg)?;
    let inferred = fit_method(method, &data.points, &cfg.fit)?;
    let (reference, reference_fit) = match cfg.surface() {
        Some(s) => (s, None),
        None => {
            let f = fit_method(cfg.reference_method, &data.points, &cfg.fit)?;
            let s = f.surface.ok_or_else(|| Error::Config(format!("{} does not fit a surface", f.method)))?;
            (s, Some(f))
        }
    };
    let mut report = dcl(&reference, &inferred.law, c, &cfg.cost)?;
    if cfg.bootstrap > 0 {
        let ci = bootstrap_ci(
            &data.points,
            |s| fit_method(method, s, &cfg.fit).and_then(|f| dcl(&reference, &f.law, c, &cfg.cost)).map(|r| r.dollars),
            0.9,
            cfg.bootstrap,
            cfg.seed,
        )?;
        report.ci90 = Some((ci.low, ci.high));
    }
    let mut results = vec![to_value(&report)?, to_value(&inferred)?];
    if let Some(f) = reference_fit {
        results.push(to_value(&f)?);
    }
    finish("dcl", cfg, Some(&data.summary), results)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let mut table = match cfg.table.as_deref() {
        Some(p) => Some(Table::create(
            Some(p),
            &[
                "surface",
                "grid",
                "bias_kind",
                "bias_factor",
                "sigma",
                "n_budgets",
                "n_points",
                "realization",
                "method",
                "a_hat",
                "b_hat",
                "a_err_rel",
                "b_err_rel",
                "status",
            ],
        )?),
        None => None,
    };
    let mut rows: Vec<SweepRecord> = Vec::with_capacity(sweep.row_count());
    run_sweep_streaming(&sweep, SWEEP_CHUNK, |chunk| {
        if let Some(t) = table.as_mut() {
            for r in chunk {
                t.row([
                    r.surface.clone(),
                    r.grid.clone(),
                    r.bias_kind.clone(),
                    fmt_sig(r.bias_factor),
                    fmt_sig(r.sigma),
                    r.n_budgets.to_string(),
                    r.n_points.to_string(),
                    r.realization.to_string(),
                    r.method.to_string(),
                    fmt_sig(r.a_hat),
                    fmt_sig(r.b_hat),
                    fmt_sig(r.a_err_rel),
                    fmt_sig(r.b_err_rel),
                    r.status.clone(),
                ])?;
            }
            // keep finished rows on disk if the run is interrupted
            t.flush()?;
        }
        rows.extend_from_slice(chunk);
        Ok(())
    })?;
    let results = summarize(&rows).iter().map(to_value).collect::<Result<Vec<_>>>()?;
    finish("sweep", &RunConfig { sweep: Some(sweep), ..cfg.clone() }, None, results)
}

#[derive(Debug, Serialize)]
struct GradientChecks {
    rss: f64,
    vpnls: f64,
    /// Absent when a coefficient is zero and its log is undefined.
    lse_log: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    method: Method,
    /// Fitted surface in the coordinates the diagnostics are computed in.
    surface: LossSurface,
    hessian_5d: HessianReport,
    hessian_vpnls: HessianReport,
    gradient_check: GradientChecks,
    residual_tests: ResidualTests,
}

pub fn diagnose_cmd(cfg: &RunConfig) -> Result<()> {
    let method = single_method(cfg, Method::VpnlsQuasiNewton)?;
    if !method.fits_surface() {
        return Err(Error::Config(format!("{method} does not fit a surface")));
    }
    let data = load(cfg)?;
    let fit = fit_method(method, &data.points, &cfg.fit)?;
    let natural = fit.surface.expect("surface-fitting method");
    let s = fit.fit_space_surface().expect("surface-fitting method");
    let raw = Dataset::from_observations(&data.points)?;
    let ds = match fit.normalization {
        Some(nz) => raw.normalized(nz.n_scale, nz.d_scale),
        None => raw,
    };
    let x = s.as_array();
    let rss = |p: &[f64]| rss_objective_grad(&[p[0], p[1], p[2], p[3], p[4]], &ds);
    let vp = |p: &[f64]| vp_objective_ols_grad(p[0], p[1], &ds);
    let hessian_5d = hessian_condition(|p| rss(p).map_or(f64::INFINITY, |r| r.0), &x, &[1.0, 1.0, 1.0, 1e-3, 1e-3])?;
    let hessian_vpnls = hessian_condition(|p| vp(p).map_or(f64::INFINITY, |r| r.0), &[s.alpha, s.beta], &[1e-3, 1e-3])?;
    let with_grad = |f: &ValueAndGradient, p: &[f64]| {
        check_gradient(
            |q, g| match f(q) {
                Ok((v, gr)) => {
                    g.copy_from_slice(&gr);
                    v
                }
                Err(_) => f64::NAN,
            },
            p,
        )
    };
    let lse_log = (s.e > 0.0 && s.a > 0.0 && s.b > 0.0).then(|| {
        with_grad(
            &|p| {
                lse_objective_grad(&[p[0], p[1], p[2], p[3], p[4]], &ds, ResidualPenalty::Mse, LossScale::Log)
                    .map(|(v, g)| (v, g.to_vec()))
            },
            &[s.e.ln(), s.a.ln(), s.b.ln(), s.alpha, s.beta],
        )
    });
    let gradient_check = GradientChecks {
        rss: with_grad(&|p| rss(p).map(|(v, g)| (v, g.to_vec())), &x),
        vpnls: with_grad(&|p| vp(p).map(|(v, g)| (v, g.to_vec())), &[s.alpha, s.beta]),
        lse_log,
    };
    let groups: Vec<Vec<f64>> = group_by_budget(&data.points)
        .iter()
        .map(|(_, g)| g.iter().map(|o| natural.eval_loss(o.n, o.d).map(|l| o.loss - l)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let diag = Diagnostics {
        method,
        surface: s,
        hessian_5d,
        hessian_vpnls,
        gradient_check,
        residual_tests: residual_tests(&groups)?,
    };
    finish("diagnose", cfg, Some(&data.summary), vec![to_value(&diag)?])
}
