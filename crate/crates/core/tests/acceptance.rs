//! Acceptance suite. Prints one line per criterion and a summary. With
//! `ISOFLOP_ACCEPTANCE_STRICT` set, any failing criterion makes the run exit
//! non-zero.
//!
//! Real-data criteria read CSVs named by `ISOFLOP_CHINCHILLA_CSV` and
//! `ISOFLOP_LLAMA3_CSV`; without them those checks are reported as SKIP.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use isoflop_core::approach2::{run_approach2, vertex_shift_oracle, SweepAxis};
use isoflop_core::direct::{lse_objective_grad, rss_objective_grad, LossScale, ResidualPenalty};
use isoflop_core::fit::{fit_method, FitOptions, Normalization};
use isoflop_core::ingest::{read_observations_path, IngestOptions};
use isoflop_core::metrics::{dcl, extrapolation_error, hessian_condition, CostModel};
use isoflop_core::optim::{check_gradient, GradientMode};
use isoflop_core::qc::{run_qc, PointStatus, QcConfig};
use isoflop_core::rng::keyed_rng;
use isoflop_core::simulate::{add_noise, build_experiment, standard_budgets, BiasSpec, GridSpec, NoiseSpec};
use isoflop_core::stats::{kruskal_wallis, levene, median, variance};
use isoflop_core::sweep::{run_sweep, summarize, SweepConfig};
use isoflop_core::vpnls::{vp_objective_ols_grad, VpnlsConfig};
use isoflop_core::{Dataset, LossSurface, Method, Observation};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn experiment(surface: &LossSurface, grid: &GridSpec, bias: BiasSpec) -> Vec<Observation> {
    build_experiment(surface, &standard_budgets(), grid, bias).unwrap().points
}

fn grid(name: &str) -> GridSpec {
    GridSpec::named(name, 15).unwrap()
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn symmetric_recovery() -> Outcome {
    let t = Instant::now();
    let pts = experiment(&LossSurface::SYMMETRIC, &grid("XL"), BiasSpec::None);
    let law = run_approach2(&pts, SweepAxis::Tokens).unwrap().law;
    let elapsed = t.elapsed();
    let b_err = (law.b - 0.5).abs() / 0.5;
    let ok = b_err <= 1e-9 && (law.b0 - -0.389076).abs() <= 1e-6 && elapsed < Duration::from_secs(1);
    verdict(ok, format!("b rel err {b_err:.2e}, b0 {:.7}, {elapsed:.2?}", law.b0))
}

fn asymmetric_intercepts() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (s, b_true, b0_hat, b0_true, err) in [
        (LossSurface::CHINCHILLA, 0.548387, -0.578092, -0.555357, -4.1),
        (LossSurface::ASYMMETRIC, 0.750000, -1.459957, -1.345791, -8.5),
    ] {
        let law = run_approach2(&experiment(&s, &grid("XL"), BiasSpec::None), SweepAxis::Tokens).unwrap().law;
        let truth = s.allocation_law().unwrap();
        let rel = pct((law.b0 - truth.b0) / truth.b0.abs());
        ok &= (law.b - b_true).abs() <= 1e-6
            && (law.b0 - b0_hat).abs() <= 5e-4
            && (rel - err).abs() <= 0.1
            && (truth.b0 - b0_true).abs() <= 1e-4;
        detail.push(format!("b {:.6} b0 {:.6} (true {:.6}, {rel:+.2}%)", law.b, law.b0, truth.b0));
    }
    verdict(ok, detail.join("; "))
}

fn vertex_shift() -> Outcome {
    let chin = LossSurface::CHINCHILLA;
    let b0 = chin.allocation_law().unwrap().b0;
    let narrow = vertex_shift_oracle(0.34, 0.28, 0.60, 15).unwrap();
    let wide = vertex_shift_oracle(0.34, 0.28, 2.41, 15).unwrap();
    let e_narrow = pct(narrow.token_log_intercept_relative_error(b0)).abs();
    let e_wide = pct(wide.token_log_intercept_relative_error(b0)).abs();
    let sym = vertex_shift_oracle(0.31, 0.31, 2.41, 15).unwrap().delta_w.abs();

    // shift is the same at every budget and for rescaled coefficients
    let mut spread: f64 = 0.0;
    for s in [chin, LossSurface::new(1.69, 3.0 * 406.4, 0.5 * 410.7, 0.34, 0.28)] {
        let g = GridSpec::new(10f64.powf(2.41 / 2.0), 15).unwrap();
        let law = s.allocation_law().unwrap();
        let r = run_approach2(&experiment(&s, &g, BiasSpec::None), SweepAxis::Tokens).unwrap();
        for bp in &r.budgets {
            let dw = bp.fit.vertex.unwrap() - law.d_opt(bp.budget).log10();
            spread = spread.max((dw - wide.token_delta_w()).abs());
        }
    }
    // the extrapolation error is the intercept shift carried to any budget
    let g = GridSpec::new(10f64.powf(2.41 / 2.0), 15).unwrap();
    let law = run_approach2(&experiment(&chin, &g, BiasSpec::None), SweepAxis::Tokens).unwrap().law;
    let extrap = extrapolation_error(&chin, &law, 1e24).unwrap();
    let consistent = (extrap - (10f64.powf(wide.token_delta_w()) - 1.0)).abs() < 1e-9;

    let ok = (e_narrow - 0.3).abs() <= 0.05 && (e_wide - 4.1).abs() <= 0.1 && sym <= 1e-12 && spread <= 1e-12 && consistent;
    verdict(
        ok,
        format!(
            "|err| {e_narrow:.3}% at W=0.60, {e_wide:.3}% at W=2.41; symmetric dw {sym:.1e}; budget/rescale spread {spread:.1e}; D* error {:.3}%",
            pct(extrap)
        ),
    )
}

fn extrapolation() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (s, xs, xl, tol) in [
        (LossSurface::CHINCHILLA, -0.3, -5.1, 0.2),
        (LossSurface::ASYMMETRIC, -1.7, -23.0, 0.5),
        (LossSurface::SYMMETRIC, 0.0, 0.0, 1e-4),
    ] {
        let errs: Vec<f64> = ["XS", "S", "L", "XL"]
            .iter()
            .map(|g| {
                let law = run_approach2(&experiment(&s, &grid(g), BiasSpec::None), SweepAxis::Tokens).unwrap().law;
                pct(extrapolation_error(&s, &law, 1e24).unwrap())
            })
            .collect();
        ok &= (errs[0] - xs).abs() <= tol && (errs[3] - xl).abs() <= tol;
        if xs == 0.0 {
            ok &= errs.iter().all(|e| e.abs() <= 1e-4);
        }
        detail.push(format!("{:.3}% .. {:.3}%", errs[0], errs[3]));
    }
    verdict(ok, format!("chinchilla {}; asymmetric {}; symmetric {}", detail[0], detail[1], detail[2]))
}

fn off_center() -> Outcome {
    let sym = LossSurface::SYMMETRIC;
    let truth = sym.allocation_law().unwrap();
    let mut ok = true;
    let mut intercepts = Vec::new();
    let mut exp_err: f64 = 0.0;
    for g in ["XS", "S", "L", "XL"] {
        let law = run_approach2(&experiment(&sym, &grid(g), BiasSpec::Constant { factor: 3.0 }), SweepAxis::Tokens).unwrap().law;
        exp_err = exp_err.max((law.b - truth.b).abs() / truth.b).max((law.a - truth.a).abs() / truth.a);
        intercepts.push(law.b0 - truth.b0);
    }
    ok &= exp_err <= 1e-9;
    ok &= intercepts.iter().all(|d| *d > 0.0) && intercepts.windows(2).all(|w| w[1] < w[0]);

    let drift = run_approach2(&experiment(&sym, &grid("L"), BiasSpec::Drift { end_factor: 3.0 }), SweepAxis::Tokens)
        .unwrap()
        .law;
    let drift_err = (drift.b - truth.b).abs() / truth.b;
    ok &= drift_err > 1e-6;

    let asym = LossSurface::ASYMMETRIC;
    let worst = ["XS", "S", "L", "XL"]
        .iter()
        .map(|g| {
            let law =
                run_approach2(&experiment(&asym, &grid(g), BiasSpec::Drift { end_factor: 3.0 }), SweepAxis::Tokens).unwrap().law;
            pct(extrapolation_error(&asym, &law, 1e24).unwrap())
        })
        .fold(0.0, |m: f64, e| if e.abs() > m.abs() { e } else { m });
    ok &= (worst - 35.0).abs() <= 2.0;
    verdict(
        ok,
        format!(
            "constant(3) exponent err {exp_err:.1e}, intercept shifts {:?}; drift(3) b err {:.3}%; compounding worst {worst:+.2}%",
            intercepts.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            pct(drift_err)
        ),
    )
}

fn recovery_ranges() -> Vec<f64> {
    let (lo, hi) = (2f64.ln(), 16f64.ln());
    (0..20).map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp()).collect()
}

fn max_param_error(method: Method, opts: &FitOptions) -> (f64, f64, Duration) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_exp: f64 = 0.0;
    for s in [LossSurface::SYMMETRIC, LossSurface::CHINCHILLA, LossSurface::ASYMMETRIC] {
        for k in recovery_ranges() {
            let pts = experiment(&s, &GridSpec::new(k, 15).unwrap(), BiasSpec::None);
            let fit = fit_method(method, &pts, opts).unwrap();
            let got = fit.surface.unwrap().as_array();
            for (i, (g, w)) in got.iter().zip(s.as_array()).enumerate() {
                let e = ((g - w) / w).abs();
                worst = worst.max(e);
                if i >= 3 {
                    worst_exp = worst_exp.max((g - w).abs());
                }
            }
        }
    }
    (pct(worst), worst_exp, t.elapsed())
}

fn parameter_recovery() -> Outcome {
    let analytic = FitOptions::default();
    let fd = FitOptions { gradient: GradientMode::FiniteDifference, ..FitOptions::default() };
    let limit = Duration::from_secs(120);
    let mut ok = true;
    let mut detail = Vec::new();
    for (method, opts, tol, label) in [
        (Method::VpnlsQuasiNewton, &analytic, 1e-7, "vpnls L-BFGS"),
        (Method::VpnlsNelderMead, &analytic, 1e-7, "vpnls NM"),
        (Method::DirectMle, &analytic, 1e-4, "direct analytic"),
        (Method::DirectMle, &fd, 1e-2, "direct fd"),
    ] {
        let (err, _, t) = max_param_error(method, opts);
        ok &= err <= tol && t < limit;
        detail.push(format!("{label} {err:.1e}% ({t:.1?})"));
    }
    let (half_a, half_b) = {
        let (ca, cb) = VpnlsConfig::default().fine_cell();
        (ca / 2.0, cb / 2.0)
    };
    let (_, exp_err, t) = max_param_error(Method::VpnlsGrid, &analytic);
    ok &= exp_err <= half_a.max(half_b) && t < limit;
    detail.push(format!("grid max |exponent err| {exp_err:.1e} vs half-cell {:.1e} ({t:.1?})", half_a.max(half_b)));
    verdict(ok, detail.join("; "))
}

fn conditioning() -> Outcome {
    let s = LossSurface::ASYMMETRIC;
    let data = Dataset::from_observations(&experiment(&s, &grid("L"), BiasSpec::None)).unwrap();
    let p = s.as_array();
    let full = hessian_condition(
        |x| rss_objective_grad(&[x[0], x[1], x[2], x[3], x[4]], &data).map(|r| r.0).unwrap_or(f64::INFINITY),
        &p,
        &[1.0, 1.0, 1.0, 1e-3, 1e-3],
    )
    .unwrap();
    let vp = hessian_condition(
        |x| vp_objective_ols_grad(x[0], x[1], &data).map(|r| r.0).unwrap_or(f64::INFINITY),
        &[s.alpha, s.beta],
        &[1e-3, 1e-3],
    )
    .unwrap();
    let lo = full.eigenvalues[0];
    let hi = *full.eigenvalues.last().unwrap();
    let decade = |x: f64, r: f64| (x / r).log10().abs() <= 1.0;
    let ok = (1e10..=1e13).contains(&full.kappa)
        && (2.0..=100.0).contains(&vp.kappa)
        && decade(lo, 8e-6)
        && decade(hi, 3e6);
    verdict(ok, format!("kappa 5D {:.3e} (eig {lo:.2e} .. {hi:.2e}); kappa 2D {:.2}", full.kappa, vp.kappa))
}

fn noisy_sweep() -> Outcome {
    let cfg = SweepConfig::exponent_inference();
    let t = Instant::now();
    let rows = run_sweep(&cfg).unwrap();
    let elapsed = t.elapsed();
    // realizations are keyed by position, so a shorter run reproduces a prefix
    let subset: Vec<_> = rows.iter().filter(|r| r.realization < 4).cloned().collect();
    let again = run_sweep(&SweepConfig { realizations: 4, ..cfg.clone() }).unwrap();
    let deterministic = format!("{again:?}") == format!("{subset:?}");
    let summary = summarize(&rows);
    let max_a = |m: Method| summary.iter().find(|s| s.method == m).map(|s| s.max_abs_a_err).unwrap();
    let order = [Method::Approach2, Method::DirectNaive, Method::DirectMle, Method::DirectLseLog, Method::VpnlsQuasiNewton];
    let maxes: Vec<f64> = order.iter().map(|m| max_a(*m)).collect();
    let ordered = maxes.windows(2).all(|w| w[0] > w[1]);
    let ok = rows.len() == 46_080
        && deterministic
        && elapsed < Duration::from_secs(1800)
        && ordered
        && maxes[0] >= 1.0
        && maxes[4] <= 0.6;
    let listing: Vec<String> = order.iter().zip(&maxes).map(|(m, v)| format!("{m} {:.1}%", pct(*v))).collect();
    verdict(
        ok,
        format!("{} rows in {elapsed:.1?}; max |a err|: {}; ordered {ordered}", rows.len(), listing.join(", ")),
    )
}

fn data_efficiency() -> Outcome {
    let rows = run_sweep(&SweepConfig::data_efficiency()).unwrap();
    let var = |m: Method| {
        let b: Vec<f64> = rows.iter().filter(|r| r.method == m && r.is_ok()).map(|r| r.b_hat).collect();
        variance(&b)
    };
    let (a2, vp, mle) = (var(Method::Approach2), var(Method::VpnlsQuasiNewton), var(Method::DirectMle));
    let (r1, r2) = (a2 / vp, vp / mle);
    verdict(
        (4.0..=16.0).contains(&r1) && (0.5..=2.0).contains(&r2),
        format!("Var(A2)/Var(VPNLS) {r1:.2}; Var(VPNLS)/Var(MLE) {r2:.4}"),
    )
}

fn gradients() -> Outcome {
    let data = Dataset::from_observations(&experiment(&LossSurface::CHINCHILLA, &grid("L"), BiasSpec::None)).unwrap();
    let mut rng = keyed_rng(10, &[]);
    let (mut vp, mut rss, mut lse) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (al, be) = (rng.random_range(0.1..0.8), rng.random_range(0.1..0.8));
        vp = vp.max(check_gradient(
            |x, g| {
                let (f, gr) = vp_objective_ols_grad(x[0], x[1], &data).unwrap();
                g.copy_from_slice(&gr);
                f
            },
            &[al, be],
        ));
        let p = [rng.random_range(1.0..3.0), rng.random_range(50.0..1000.0), rng.random_range(50.0..1000.0), al, be];
        rss = rss.max(check_gradient(
            |x, g| {
                let (f, gr) = rss_objective_grad(&[x[0], x[1], x[2], x[3], x[4]], &data).unwrap();
                g.copy_from_slice(&gr);
                f
            },
            &p,
        ));
        let q = [p[0].ln(), p[1].ln(), p[2].ln(), al, be];
        lse = lse.max(check_gradient(
            |x, g| {
                let (f, gr) =
                    lse_objective_grad(&[x[0], x[1], x[2], x[3], x[4]], &data, ResidualPenalty::Mse, LossScale::Log).unwrap();
                g.copy_from_slice(&gr);
                f
            },
            &q,
        ));
    }
    verdict(vp <= 1e-6 && rss <= 1e-6 && lse <= 1e-6, format!("max discrepancy vpnls {vp:.1e}, rss {rss:.1e}, lse_log {lse:.1e}"))
}

fn env_csv(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.exists())
}

fn validation_fit() -> Outcome {
    let Some(path) = env_csv("ISOFLOP_CHINCHILLA_CSV") else {
        return Outcome::Skip("set ISOFLOP_CHINCHILLA_CSV to the 217-point Chinchilla extraction".into());
    };
    let pts = read_observations_path(&path, IngestOptions { max_budget: Some(1e21) }).unwrap().points;
    let opts = FitOptions { normalization: Some(Normalization::REAL_DATA), ..FitOptions::default() };
    let row = |m: Method| {
        let f = fit_method(m, &pts, &opts).unwrap();
        Normalization::REAL_DATA.to_normalized(&f.surface.unwrap()).as_array()
    };
    let vp = row(Method::VpnlsQuasiNewton);
    let log = row(Method::DirectLseLog);
    let lin = row(Method::DirectLseLinear);
    let close = |a: &[f64; 5], b: &[f64; 5]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-3);
    let ok = pts.len() == 217
        && close(&vp, &[1.9051, 4.0005, 1.0509, 0.3511, 0.4587])
        && close(&log, &[1.8926, 4.0146, 1.0571, 0.3522, 0.4430])
        && close(&lin, &vp);
    verdict(ok, format!("{} points; vpnls {vp:.4?}; lse_log {log:.4?}; lse_linear {lin:.4?}", pts.len()))
}

fn noisy_chinchilla(seed: u64) -> Vec<Observation> {
    let e = build_experiment(&LossSurface::CHINCHILLA, &standard_budgets(), &grid("L"), BiasSpec::Drift { end_factor: 3.0 })
        .unwrap();
    add_noise(&e, NoiseSpec { sigma: 0.01, seed }).unwrap().points
}

fn qc_pipeline() -> Outcome {
    let cfg = QcConfig::default();
    let key = |o: &Observation| (o.budget.to_bits(), o.n.to_bits());
    let (mut idempotent, mut complete, mut invariant) = (true, true, true);
    for seed in 0..50 {
        let pts = noisy_chinchilla(seed);
        let out = run_qc(&pts, &cfg).unwrap();
        complete &= out.statuses.len() == pts.len()
            && out.statuses.iter().filter(|s| **s == PointStatus::Clean).count() == out.clean.len()
            && out.budgets.iter().map(|b| b.input_points).sum::<usize>() == pts.len();
        let again = run_qc(&out.clean, &cfg).unwrap();
        idempotent &= again.clean == out.clean && again.statuses.iter().all(|s| *s == PointStatus::Clean);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut keyed_rng(seed, &[99]));
        let mut a = out.clean.clone();
        let mut b = run_qc(&shuffled, &cfg).unwrap().clean;
        a.sort_by_key(key);
        b.sort_by_key(key);
        invariant &= a == b;
    }
    let synthetic = format!("idempotent {idempotent}, complete {complete}, permutation-invariant {invariant} (50 seeds)");
    let mut ok = idempotent && complete && invariant;
    let mut detail = vec![synthetic];

    let chin = env_csv("ISOFLOP_CHINCHILLA_CSV");
    let llama = env_csv("ISOFLOP_LLAMA3_CSV");
    let cost = CostModel::default();
    let opts = FitOptions { normalization: Some(Normalization::REAL_DATA), ..FitOptions::default() };
    let qc_params = QcConfig { axis: SweepAxis::Params, ..QcConfig::default() };
    if let Some(path) = &chin {
        let pts = read_observations_path(path, IngestOptions::default()).unwrap().points;
        let reference = fit_method(Method::DirectLseLog, &pts, &opts).unwrap().surface.unwrap();
        let raw = run_approach2(&pts, SweepAxis::Params).unwrap().law;
        let clean = run_qc(&pts, &qc_params).unwrap().clean;
        let filtered = run_approach2(&clean, SweepAxis::Params).unwrap().law;
        let d0 = dcl(&reference, &raw, 5.8e23, &cost).unwrap().dcl_pct;
        let d1 = dcl(&reference, &filtered, 5.8e23, &cost).unwrap().dcl_pct;
        ok &= (d0 - 37.9).abs() <= 2.0 && (d1 - 12.5).abs() <= 2.0;
        detail.push(format!("chinchilla DCL {d0:.1}% -> {d1:.1}%"));
    }
    if let Some(path) = &llama {
        let pts = read_observations_path(path, IngestOptions::default()).unwrap().points;
        let reference = fit_method(Method::DirectLseLog, &pts, &opts).unwrap().surface.unwrap();
        let law = run_approach2(&pts, SweepAxis::Params).unwrap().law;
        let r = dcl(&reference, &law, 3.8e25, &cost).unwrap();
        ok &= (law.b - 0.537).abs() <= 1e-3 && (r.dcl_pct - 6.5).abs() <= 1.0 && (r.dollars / 1.4e6 - 1.0).abs() <= 0.15;
        detail.push(format!("llama3 b {:.4}, DCL {:.2}%, ${:.3}M", law.b, r.dcl_pct, r.dollars / 1e6));
    }
    if chin.is_none() || llama.is_none() {
        detail.push("real-data parts skipped without ISOFLOP_CHINCHILLA_CSV / ISOFLOP_LLAMA3_CSV".into());
    }
    verdict(ok, detail.join("; "))
}

fn permutation_p(groups: &[Vec<f64>], stat: fn(&[Vec<f64>]) -> f64, draws: usize, seed: u64) -> f64 {
    let observed = stat(groups);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut pooled: Vec<f64> = groups.concat();
    let mut rng = keyed_rng(seed, &[]);
    let mut hits = 0usize;
    for _ in 0..draws {
        pooled.shuffle(&mut rng);
        let mut at = 0;
        let perm: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| {
                let g = pooled[at..at + n].to_vec();
                at += n;
                g
            })
            .collect();
        if stat(&perm) >= observed - 1e-12 * observed.abs() {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

fn anova_f(groups: &[Vec<f64>]) -> f64 {
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let (mut between, mut within) = (0.0, 0.0);
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    (between / (groups.len() - 1) as f64) / (within / (n - groups.len()) as f64)
}

/// Levene permutation oracle: shuffle absolute deviations from group medians.
fn deviation_permutation_p(groups: &[Vec<f64>], draws: usize, seed: u64) -> f64 {
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    permutation_p(&z, anova_f, draws, seed)
}

fn statistical_tests() -> Outcome {
    let draws = 20_000;
    let mut rng = keyed_rng(13, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut sample = |n: usize, shift: f64, scale: f64| -> Vec<f64> {
        (0..n).map(|_| shift + scale * normal.sample(&mut rng)).collect()
    };
    let location = vec![sample(40, 0.0, 1.0), sample(40, 0.35, 1.0), sample(40, 0.5, 1.0)];
    let spread = vec![sample(40, 0.0, 1.0), sample(40, 0.0, 1.3), sample(40, 0.0, 1.6)];
    let kw = |g: &[Vec<f64>]| kruskal_wallis(g).unwrap().statistic;
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, p, oracle) in [
        ("kruskal", kruskal_wallis(&location).unwrap().p_value, permutation_p(&location, kw, draws, 17)),
        ("levene", levene(&spread).unwrap().p_value, deviation_permutation_p(&spread, draws, 19)),
    ] {
        let se = (oracle * (1.0 - oracle) / draws as f64).sqrt().max(1.0 / draws as f64);
        ok &= (p - oracle).abs() <= 4.0 * se;
        detail.push(format!("{name} p {p:.4} vs oracle {oracle:.4} (4se {:.4})", 4.0 * se));
    }
    let same = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
    let flat = vec![vec![2.0; 4]; 3];
    for g in [&same, &flat] {
        ok &= kruskal_wallis(g).unwrap().p_value == 1.0 && levene(g).unwrap().p_value == 1.0;
    }
    detail.push("identical groups p = 1".into());
    verdict(ok, detail.join("; "))
}

fn main() {
    let checks: [(u32, &str, Check); 13] = [
        (1, "symmetric recovery", symmetric_recovery),
        (2, "asymmetric intercept bias", asymmetric_intercepts),
        (3, "vertex-shift oracle", vertex_shift),
        (4, "extrapolation errors", extrapolation),
        (5, "off-center bias", off_center),
        (6, "parameter recovery", parameter_recovery),
        (7, "conditioning", conditioning),
        (8, "noisy exponent inference", noisy_sweep),
        (9, "data efficiency", data_efficiency),
        (10, "gradient correctness", gradients),
        (11, "validation fit (real data)", validation_fit),
        (12, "qc pipeline", qc_pipeline),
        (13, "statistical tests", statistical_tests),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for (n, name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || n.to_string() == *f) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => {
                skipped += 1;
                ("SKIP", d)
            }
        };
        println!("{tag} criterion {n:>2} {name} [{:.1?}]: {detail}", t.elapsed());
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 && std::env::var_os("ISOFLOP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
