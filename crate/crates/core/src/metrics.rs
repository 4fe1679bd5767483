//! Misallocation cost, error summaries, bootstrap intervals, residual tests
//! and Hessian conditioning.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{group_by_budget, Observation};
use crate::error::{Error, Result};
use crate::model::{AllocationLaw, LossSurface};
use crate::rng::keyed_rng;
use crate::stats::{kruskal_wallis, levene, quantile, TestOutcome};

/// Converts FLOPs to dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Model FLOPs utilization.
    pub mfu: f64,
    pub price_per_gpu_hour: f64,
    /// Peak throughput per GPU (FLOP/s).
    pub peak_flops_per_gpu: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { mfu: 0.5, price_per_gpu_hour: 2.0, peak_flops_per_gpu: 1.979e15 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mfu > 0.0 && self.mfu <= 1.0) {
            return Err(Error::Config(format!("mfu must be in (0, 1], got {}", self.mfu)));
        }
        if !(self.price_per_gpu_hour >= 0.0 && self.peak_flops_per_gpu > 0.0) {
            return Err(Error::Config("price must be non-negative and peak throughput positive".into()));
        }
        Ok(())
    }

    pub fn dollars(&self, flops: f64) -> f64 {
        flops / (self.mfu * self.peak_flops_per_gpu) / 3600.0 * self.price_per_gpu_hour
    }
}

/// Deadweight compute of following an inferred allocation law at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DclReport {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "N_inferred")]
    pub n_inferred: f64,
    #[serde(rename = "D_inferred")]
    pub d_inferred: f64,
    #[serde(rename = "N_opt")]
    pub n_opt: f64,
    #[serde(rename = "D_opt")]
    pub d_opt: f64,
    pub loss_inferred: f64,
    pub loss_opt: f64,
    /// `loss_inferred - loss_opt` (nats).
    pub loss_penalty: f64,
    /// Smallest budget reaching `loss_inferred` under optimal allocation.
    #[serde(rename = "C_eq")]
    pub c_eq: f64,
    /// `C - C_eq` (FLOPs).
    pub dcl: f64,
    /// `dcl / C`.
    pub dcl_pct: f64,
    pub dollars: f64,
    /// Optional 90% interval on `dollars`.
    pub ci90: Option<(f64, f64)>,
}

/// Relative loss penalty below which the inferred allocation counts as optimal.
const DCL_SNAP: f64 = 1e-13;

/// Deadweight compute loss at budget `c` when `D = 10^b0 C^b` is used on a
/// world described by `reference`.
pub fn dcl(reference: &LossSurface, inferred: &AllocationLaw, c: f64, cost: &CostModel) -> Result<DclReport> {
    cost.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("budget must be positive, got {c}")));
    }
    if !(inferred.b.is_finite() && inferred.b0.is_finite()) {
        return Err(Error::Domain("inferred law has non-finite token exponent or intercept".into()));
    }
    let (opt, loss_opt) = reference.optimal_point(c)?;
    let d_inferred = 10f64.powf(inferred.b0 + inferred.b * c.log10());
    let n_inferred = c / (6.0 * d_inferred);
    let loss_inferred = reference.eval_loss(n_inferred, d_inferred)?;
    let penalty = loss_inferred - loss_opt;
    if penalty < -1e-12 * loss_opt {
        return Err(Error::InconsistentReference(format!(
            "loss at inferred allocation ({loss_inferred}) is below the reference optimum ({loss_opt})"
        )));
    }
    let c_eq = if penalty <= DCL_SNAP * loss_opt { c } else { reference.invert_optimal_loss(loss_inferred)?.min(c) };
    let waste = c - c_eq;
    Ok(DclReport {
        c,
        n_inferred,
        d_inferred,
        n_opt: opt.n,
        d_opt: opt.d,
        loss_inferred,
        loss_opt,
        loss_penalty: penalty.max(0.0),
        c_eq,
        dcl: waste,
        dcl_pct: waste / c,
        dollars: cost.dollars(waste),
        ci90: None,
    })
}

/// Signed relative error of the inferred `D*` at `c_target`.
pub fn extrapolation_error(truth: &LossSurface, inferred: &AllocationLaw, c_target: f64) -> Result<f64> {
    let d_true = truth.allocation_law()?.d_opt(c_target);
    Ok((inferred.d_opt(c_target) - d_true) / d_true)
}

/// Floor applied to `|error|` before taking logs.
pub const GEOMEAN_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub geomean_abs: f64,
    pub max_abs: f64,
    pub min_abs: f64,
    /// Sample variance of the signed values.
    pub variance: f64,
    pub count: usize,
}

pub fn error_stats(values: &[f64]) -> Result<ErrorStats> {
    if values.is_empty() {
        return Err(Error::InsufficientData("error statistics need at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite error value".into()));
    }
    let logs: f64 = values.iter().map(|v| v.abs().max(GEOMEAN_FLOOR).ln()).sum();
    Ok(ErrorStats {
        geomean_abs: (logs / values.len() as f64).exp(),
        max_abs: values.iter().fold(0.0, |m, v| m.max(v.abs())),
        min_abs: values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
        variance: crate::stats::variance(values),
        count: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub replicates: usize,
    pub failed: usize,
}

/// Stratified percentile bootstrap.
///
/// Each replicate resamples points with replacement within every budget,
/// then evaluates `statistic` on the resample. Replicate `r` draws budget
/// `j` from the stream keyed on `(seed, r, j)`. Failed replicates are dropped;
/// more than half failing is an error.
pub fn bootstrap_ci<F>(points: &[Observation], statistic: F, level: f64, n_boot: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[Observation]) -> Result<f64> + Sync,
{
    if !(level > 0.0 && level < 1.0) || n_boot == 0 {
        return Err(Error::Config(format!("invalid bootstrap level {level} or replicate count {n_boot}")));
    }
    let groups = group_by_budget(points);
    if groups.iter().any(|(_, g)| g.len() < 2) {
        return Err(Error::InsufficientData("bootstrap needs at least 2 points per budget".into()));
    }
    let values: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut sample = Vec::with_capacity(points.len());
            for (j, (_, g)) in groups.iter().enumerate() {
                let mut rng = keyed_rng(seed, &[r as u64, j as u64]);
                for _ in 0..g.len() {
                    sample.push(g[rng.random_range(0..g.len())]);
                }
            }
            statistic(&sample).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = n_boot - ok.len();
    if 2 * failed > n_boot {
        return Err(Error::Optimization(format!("{failed} of {n_boot} bootstrap replicates failed")));
    }
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi { low: quantile(&ok, tail), high: quantile(&ok, 1.0 - tail), level, replicates: ok.len(), failed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualTests {
    pub kruskal_wallis: TestOutcome,
    pub levene: TestOutcome,
}

/// Location (Kruskal-Wallis) and spread (Brown-Forsythe) homogeneity of
/// residuals across budgets.
pub fn residual_tests(groups: &[Vec<f64>]) -> Result<ResidualTests> {
    Ok(ResidualTests { kruskal_wallis: kruskal_wallis(groups)?, levene: levene(groups)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub kappa: f64,
    /// Row-major, symmetrized.
    pub hessian: Vec<f64>,
}

/// Central-difference Hessian with step `1e-4 * scale[i]` per coordinate and
/// its eigen-decomposition.
pub fn hessian_condition<F>(mut f: F, x: &[f64], scale: &[f64]) -> Result<HessianReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    if scale.len() != n || n == 0 {
        return Err(Error::Domain("scale must match the point's dimension".into()));
    }
    let h: Vec<f64> = scale.iter().map(|s| 1e-4 * s.abs().max(f64::MIN_POSITIVE)).collect();
    let f0 = f(x);
    let mut p = x.to_vec();
    let mut eval = |p: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, s) in moves {
            p[i] = x[i] + s * h[i];
        }
        let v = f(p);
        for &(i, _) in moves {
            p[i] = x[i];
        }
        v
    };
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        let fp = eval(&mut p, &[(i, 1.0)]);
        let fm = eval(&mut p, &[(i, -1.0)]);
        hess[i * n + i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&mut p, &[(i, 1.0), (j, 1.0)]);
            let fpm = eval(&mut p, &[(i, 1.0), (j, -1.0)]);
            let fmp = eval(&mut p, &[(i, -1.0), (j, 1.0)]);
            let fmm = eval(&mut p, &[(i, -1.0), (j, -1.0)]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    if let Some(k) = hess.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: k, what: "Hessian entry".into() });
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &hess));
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let kappa = eigenvalues[n - 1] / eigenvalues[0];
    Ok(HessianReport { eigenvalues, kappa, hessian: hess })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_law_has_no_waste() {
        for s in [LossSurface::SYMMETRIC, LossSurface::CHINCHILLA, LossSurface::ASYMMETRIC] {
            let r = dcl(&s, &s.allocation_law().unwrap(), 5.8e23, &CostModel::default()).unwrap();
            assert_eq!(r.dcl, 0.0);
            assert_eq!(r.dollars, 0.0);
        }
    }

    #[test]
    fn doubled_tokens_on_symmetric_surface() {
        // oracle: bisection on L_opt, 0.13740346900 (mpmath, 30 digits)
        let s = LossSurface::SYMMETRIC;
        let mut law = s.allocation_law().unwrap();
        law.b0 += 2f64.log10();
        let r = dcl(&s, &law, 6e18, &CostModel::default()).unwrap();
        assert!((r.d_inferred / 2e9 - 1.0).abs() < 1e-12);
        assert!((r.dcl_pct - 0.1374034690).abs() < 1e-8, "{}", r.dcl_pct);
        assert!(r.dcl >= 0.0 && r.dcl <= r.c);
    }

    #[test]
    fn dollar_back_calculation() {
        let dollars = CostModel::default().dollars(0.065 * 3.8e25);
        assert!((dollars - 1.387e6).abs() < 1e3, "{dollars}");
    }

    #[test]
    fn cost_scaling_leaves_flops_alone() {
        let s = LossSurface::CHINCHILLA;
        let mut law = s.allocation_law().unwrap();
        law.b0 -= 0.1;
        let a = dcl(&s, &law, 1e22, &CostModel::default()).unwrap();
        let pricier = CostModel { price_per_gpu_hour: 6.0, ..CostModel::default() };
        let b = dcl(&s, &law, 1e22, &pricier).unwrap();
        assert_eq!(a.dcl, b.dcl);
        assert!((b.dollars / a.dollars - 3.0).abs() < 1e-12);
    }

    #[test]
    fn foreign_law_costs_compute_and_degenerate_reference_fails() {
        let s = LossSurface::CHINCHILLA;
        let other = LossSurface::ASYMMETRIC.allocation_law().unwrap();
        let r = dcl(&s, &other, 1e21, &CostModel::default()).unwrap();
        assert!(r.dcl > 0.0 && r.c_eq < r.c && r.loss_penalty > 0.0);
        let mut degenerate = s;
        degenerate.a = 0.0;
        assert!(dcl(&degenerate, &other, 1e21, &CostModel::default()).is_err());
    }

    #[test]
    fn true_law_extrapolates_exactly() {
        let s = LossSurface::ASYMMETRIC;
        let law = s.allocation_law().unwrap();
        for c in [1e18, 1e22, 1e24, 1e26] {
            assert!(extrapolation_error(&s, &law, c).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn error_stats_examples() {
        let s = error_stats(&[0.01, 1.0]).unwrap();
        assert!((s.geomean_abs - 0.1).abs() < 1e-15);
        let z = error_stats(&[0.0, 0.0]).unwrap();
        assert!((z.geomean_abs / GEOMEAN_FLOOR - 1.0).abs() < 1e-12);
        assert_eq!(z.variance, 0.0);
        assert!(error_stats(&[]).is_err());
    }

    fn obs(budget: f64, loss: f64) -> Observation {
        Observation { budget, n: 1.0, d: budget / 6.0, loss }
    }

    #[test]
    fn bootstrap_degenerate_is_zero_width() {
        let pts: Vec<Observation> = (0..6).map(|i| obs(if i < 3 { 6.0 } else { 60.0 }, 2.0)).collect();
        let mean = |p: &[Observation]| Ok(p.iter().map(|o| o.loss).sum::<f64>() / p.len() as f64);
        let ci = bootstrap_ci(&pts, mean, 0.9, 200, 1).unwrap();
        assert_eq!(ci.low, ci.high);
    }

    #[test]
    fn bootstrap_is_deterministic_and_drops_failures() {
        let pts: Vec<Observation> = (0..20).map(|i| obs(6.0, i as f64)).collect();
        let mean = |p: &[Observation]| Ok(p.iter().map(|o| o.loss).sum::<f64>() / p.len() as f64);
        let a = bootstrap_ci(&pts, mean, 0.9, 300, 5).unwrap();
        let b = bootstrap_ci(&pts, mean, 0.9, 300, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.low < 9.5 && a.high > 9.5);
        let flaky = |p: &[Observation]| if p[0].loss < 5.0 { Err(Error::Optimization("x".into())) } else { Ok(1.0) };
        let r = bootstrap_ci(&pts, flaky, 0.9, 300, 5).unwrap();
        assert!(r.failed > 0 && r.replicates + r.failed == 300);
        let always = |_: &[Observation]| -> Result<f64> { Err(Error::Optimization("x".into())) };
        assert!(bootstrap_ci(&pts, always, 0.9, 50, 5).is_err());
    }

    #[test]
    fn hessian_of_bowl() {
        let r = hessian_condition(|x| x[0] * x[0] + x[1] * x[1], &[0.3, -0.2], &[1.0, 1.0]).unwrap();
        for e in &r.eigenvalues {
            assert!((e - 2.0).abs() < 1e-6);
        }
        assert!((r.kappa - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_of_ill_conditioned_quadratic() {
        let r = hessian_condition(|x| 1e6 * x[0] * x[0] + 1e-2 * x[1] * x[1] + x[0] * x[1], &[0.0, 0.0], &[1.0, 1.0])
            .unwrap();
        // exact eigenvalues of [[2e6, 1], [1, 2e-2]]
        let want_min = 0.02 - 1.0 / (2e6 - 0.02);
        assert!((r.eigenvalues[0] / want_min - 1.0).abs() < 1e-4, "{:?}", r.eigenvalues);
        assert!((r.eigenvalues[1] / 2e6 - 1.0).abs() < 1e-8);
    }
}
