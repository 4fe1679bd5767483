//! Quality control for real IsoFLOP data.
//!
//! Stages run in a fixed order: duplicate removal and the minimum-points
//! check, the off-centre window followed by leave-one-out Akima outliers,
//! the curvature significance check, and a final minimum-points check.
//! Nothing is modified; every input point and budget ends with exactly one
//! status.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::approach2::{fit_parabola, SweepAxis};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::stats::{scaled_mad, t_critical, Akima};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcConfig {
    /// Near-duplicate bin width in log10 of the swept variable.
    pub near_dup_tol: f64,
    pub min_points: usize,
    pub off_center_multiplier: f64,
    /// Cutoff on `|residual| / scaled MAD` for spline outliers.
    pub mad_threshold: f64,
    /// Confidence level of the curvature interval.
    pub curvature_ci: f64,
    /// Variable the curves are binned and fit along.
    pub axis: SweepAxis,
    /// Repeat the window and spline stages until they flag nothing new.
    pub until_stable: bool,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            near_dup_tol: 0.01,
            min_points: 6,
            off_center_multiplier: 2.5,
            mad_threshold: 5.0,
            curvature_ci: 0.95,
            axis: SweepAxis::Params,
            until_stable: true,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.near_dup_tol, self.off_center_multiplier, self.mad_threshold];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.min_points == 0 {
            return Err(Error::Config("QC tolerances, multiplier, threshold and min_points must be positive".into()));
        }
        if !(self.curvature_ci > 0.0 && self.curvature_ci < 1.0) {
            return Err(Error::Config(format!("curvature_ci must be in (0, 1), got {}", self.curvature_ci)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Clean,
    DupRemoved,
    NearDupRemoved,
    OffCenter,
    SplineOutlier,
    /// Survived the point filters but its budget was removed.
    BudgetRemoved,
}

impl PointStatus {
    pub fn name(&self) -> &'static str {
        match self {
            PointStatus::Clean => "clean",
            PointStatus::DupRemoved => "dup_removed",
            PointStatus::NearDupRemoved => "near_dup_removed",
            PointStatus::OffCenter => "off_center",
            PointStatus::SplineOutlier => "spline_outlier",
            PointStatus::BudgetRemoved => "budget_removed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStatus {
    Kept,
    TooFewPoints,
    NegativeCurvature,
    WeakCurvature,
}

/// Per-budget outcome with removal counts per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub budget: f64,
    pub status: BudgetStatus,
    pub input_points: usize,
    pub dup_removed: usize,
    pub near_dup_removed: usize,
    pub off_center: usize,
    pub spline_outlier: usize,
    pub clean_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcOutcome {
    /// Surviving points in input order.
    pub clean: Vec<Observation>,
    /// One status per input point, aligned with the input.
    pub statuses: Vec<PointStatus>,
    /// Budgets ascending.
    pub budgets: Vec<BudgetReport>,
}

/// Preference among duplicates: implied compute closest to the nominal
/// budget, then lower loss, then a total order on the values themselves.
fn preferred(a: &Observation, b: &Observation) -> Ordering {
    let gap = |o: &Observation| (o.implied_compute() - o.budget).abs();
    gap(a)
        .total_cmp(&gap(b))
        .then(a.loss.total_cmp(&b.loss))
        .then(a.n.total_cmp(&b.n))
        .then(a.d.total_cmp(&b.d))
}

/// Index of the preferred member of `members` (indices into `points`).
fn keep_one(points: &[Observation], members: &[usize]) -> usize {
    *members.iter().min_by(|&&i, &&j| preferred(&points[i], &points[j]).then(i.cmp(&j))).expect("non-empty")
}

/// Duplicate and near-duplicate removal within one budget. `idx` are the
/// budget's point indices; statuses are written for removed points.
fn dedup_budget(points: &[Observation], idx: &[usize], cfg: &QcConfig, status: &mut [PointStatus]) {
    let pos = |i: usize| cfg.axis.position(&points[i]);
    let mut sorted = idx.to_vec();
    sorted.sort_by(|&i, &j| pos(i).total_cmp(&pos(j)).then(preferred(&points[i], &points[j])).then(i.cmp(&j)));
    // exact duplicates of the swept variable
    let mut survivors = Vec::new();
    let mut k = 0;
    while k < sorted.len() {
        let mut e = k;
        let raw = |i: usize| match cfg.axis {
            SweepAxis::Params => points[i].n,
            SweepAxis::Tokens => points[i].d,
        };
        while e + 1 < sorted.len() && raw(sorted[e + 1]) == raw(sorted[k]) {
            e += 1;
        }
        let keep = keep_one(points, &sorted[k..=e]);
        for &i in &sorted[k..=e] {
            if i != keep {
                status[i] = PointStatus::DupRemoved;
            }
        }
        survivors.push(keep);
        k = e + 1;
    }
    // greedy bins anchored at the first point of each bin
    let mut k = 0;
    while k < survivors.len() {
        let anchor = pos(survivors[k]);
        let mut e = k;
        while e + 1 < survivors.len() && pos(survivors[e + 1]) - anchor < cfg.near_dup_tol {
            e += 1;
        }
        let keep = keep_one(points, &survivors[k..=e]);
        for &i in &survivors[k..=e] {
            if i != keep {
                status[i] = PointStatus::NearDupRemoved;
            }
        }
        k = e + 1;
    }
}

/// Duplicate removal and the minimum-points check. Returns point statuses
/// (aligned with input) and the budgets left with too few points.
pub fn pre_qc(points: &[Observation], cfg: &QcConfig) -> (Vec<PointStatus>, Vec<f64>) {
    let mut status = vec![PointStatus::Clean; points.len()];
    let mut removed = Vec::new();
    for (budget, idx) in budget_indices(points) {
        dedup_budget(points, &idx, cfg, &mut status);
        if idx.iter().filter(|&&i| status[i] == PointStatus::Clean).count() < cfg.min_points {
            removed.push(budget);
        }
    }
    (status, removed)
}

/// Points outside `[m - c d, m + c d]`, where `m` is the parabola vertex,
/// `d` its distance to the nearer edge and `c` the multiplier. `None` when
/// the parabola has no valid vertex.
pub fn off_center_filter(points: &[Observation], cfg: &QcConfig) -> Option<Vec<bool>> {
    let pts: Vec<(f64, f64)> = points.iter().map(|o| (cfg.axis.position(o), o.loss)).collect();
    let m = fit_parabola(&pts, cfg.axis).ok()?.vertex?;
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    let d = (m - lo).min(hi - m);
    let half = cfg.off_center_multiplier * d;
    Some(pts.iter().map(|(x, _)| *x < m - half || *x > m + half).collect())
}

/// Leave-one-out Akima residuals, in input order. `None` with fewer than 5
/// points or repeated positions.
pub fn loo_spline_residuals(points: &[Observation], axis: SweepAxis) -> Option<Vec<f64>> {
    let n = points.len();
    if n < 5 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| axis.position(&points[i]).total_cmp(&axis.position(&points[j])));
    let xs: Vec<f64> = order.iter().map(|&i| axis.position(&points[i])).collect();
    let ys: Vec<f64> = order.iter().map(|&i| points[i].loss).collect();
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return None;
    }
    let mut res = vec![0.0; n];
    for k in 0..n {
        let x: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| *v).collect();
        let y: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| *v).collect();
        let s = Akima::new(&x, &y).ok()?;
        res[order[k]] = ys[k] - s.eval(xs[k]);
    }
    Some(res)
}

/// Flags points whose leave-one-out residual exceeds `mad_threshold` scaled
/// MADs. Skipped (nothing flagged) below 5 points or when the MAD is zero.
pub fn akima_outliers(points: &[Observation], cfg: &QcConfig) -> Vec<bool> {
    let Some(res) = loo_spline_residuals(points, cfg.axis) else {
        return vec![false; points.len()];
    };
    let mad = scaled_mad(&res);
    if !(mad > 0.0) {
        return vec![false; points.len()];
    }
    res.iter().map(|r| r.abs() / mad > cfg.mad_threshold).collect()
}

/// Curvature significance: negative when the fitted curvature is not
/// positive, weak when its two-sided interval contains zero or there are no
/// residual degrees of freedom.
pub fn weak_curvature_filter(points: &[Observation], cfg: &QcConfig) -> BudgetStatus {
    let pts: Vec<(f64, f64)> = points.iter().map(|o| (cfg.axis.position(o), o.loss)).collect();
    let Ok(fit) = fit_parabola(&pts, cfg.axis) else {
        return BudgetStatus::TooFewPoints;
    };
    if fit.vertex.is_none() || fit.p <= 0.0 {
        return BudgetStatus::NegativeCurvature;
    }
    if fit.n_points <= 3 {
        return BudgetStatus::WeakCurvature;
    }
    let Ok(t) = t_critical((fit.n_points - 3) as f64, cfg.curvature_ci) else {
        return BudgetStatus::WeakCurvature;
    };
    if fit.p - t * fit.p_stderr <= 0.0 {
        BudgetStatus::WeakCurvature
    } else {
        BudgetStatus::Kept
    }
}

fn budget_indices(points: &[Observation]) -> Vec<(f64, Vec<usize>)> {
    let mut budgets: Vec<f64> = points.iter().map(|o| o.budget).collect();
    budgets.sort_by(|a, b| a.total_cmp(b));
    budgets.dedup();
    budgets.into_iter().map(|c| (c, (0..points.len()).filter(|&i| points[i].budget == c).collect())).collect()
}

/// Runs every stage and returns the surviving points with the full trail.
pub fn run_qc(points: &[Observation], cfg: &QcConfig) -> Result<QcOutcome> {
    cfg.validate()?;
    let mut status = vec![PointStatus::Clean; points.len()];
    let mut reports = Vec::new();
    for (budget, idx) in budget_indices(points) {
        dedup_budget(points, &idx, cfg, &mut status);
        let clean = |status: &[PointStatus]| -> Vec<usize> {
            idx.iter().copied().filter(|&i| status[i] == PointStatus::Clean).collect()
        };
        let mut budget_status;
        if clean(&status).len() < cfg.min_points {
            budget_status = BudgetStatus::TooFewPoints;
        } else {
            // off-centre window, then the spline on what the window kept
            loop {
                let mut changed = false;
                let live = clean(&status);
                let obs: Vec<Observation> = live.iter().map(|&i| points[i]).collect();
                if let Some(off) = off_center_filter(&obs, cfg) {
                    for (k, &i) in live.iter().enumerate() {
                        if off[k] {
                            status[i] = PointStatus::OffCenter;
                            changed = true;
                        }
                    }
                }
                let live = clean(&status);
                let obs: Vec<Observation> = live.iter().map(|&i| points[i]).collect();
                for (k, flagged) in akima_outliers(&obs, cfg).into_iter().enumerate() {
                    if flagged {
                        status[live[k]] = PointStatus::SplineOutlier;
                        changed = true;
                    }
                }
                if !changed || !cfg.until_stable {
                    break;
                }
            }
            let live = clean(&status);
            let obs: Vec<Observation> = live.iter().map(|&i| points[i]).collect();
            budget_status = if obs.len() < 3 { BudgetStatus::TooFewPoints } else { weak_curvature_filter(&obs, cfg) };
            if budget_status == BudgetStatus::Kept && live.len() < cfg.min_points {
                budget_status = BudgetStatus::TooFewPoints;
            }
        }
        let count = |status: &[PointStatus], s: PointStatus| idx.iter().filter(|&&i| status[i] == s).count();
        let mut report = BudgetReport {
            budget,
            status: budget_status,
            input_points: idx.len(),
            dup_removed: count(&status, PointStatus::DupRemoved),
            near_dup_removed: count(&status, PointStatus::NearDupRemoved),
            off_center: count(&status, PointStatus::OffCenter),
            spline_outlier: count(&status, PointStatus::SplineOutlier),
            clean_points: 0,
        };
        if budget_status != BudgetStatus::Kept {
            for &i in &idx {
                if status[i] == PointStatus::Clean {
                    status[i] = PointStatus::BudgetRemoved;
                }
            }
        }
        report.clean_points = count(&status, PointStatus::Clean);
        reports.push(report);
    }
    let clean = points.iter().zip(&status).filter(|(_, s)| **s == PointStatus::Clean).map(|(o, _)| *o).collect();
    Ok(QcOutcome { clean, statuses: status, budgets: reports })
}
