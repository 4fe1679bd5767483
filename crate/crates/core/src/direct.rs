//! Direct five-parameter surface fits.
//!
//! Three formulations are provided:
//! - RSS on raw losses over natural parameters `(E, A, B, alpha, beta)`;
//! - the log-sum-exp reparameterization over `(e, a, b, alpha, beta)` with
//!   `E = exp(e)`, `A = exp(a)`, `B = exp(b)`, scored either on log losses
//!   (the canonical formulation) or on raw losses;
//! - an optional Huber penalty on the same residuals.
//!
//! The reparameterization uses natural logarithms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{FitResult, Method, Normalization};
use crate::model::LossSurface;
use crate::optim::{bounded_quasi_newton, bounded_quasi_newton_fd, Bounds, GradientMode, OptimResult, QuasiNewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectVariant {
    /// One random start, natural parameters, RSS.
    Naive,
    /// Grid start, natural parameters, RSS.
    #[default]
    Mle,
    /// Grid start, log-sum-exp parameters, residuals on log loss.
    LseLog,
    /// Grid start, log-sum-exp parameters, residuals on raw loss.
    LseLinear,
}

/// Penalty applied to residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResidualPenalty {
    #[default]
    Mse,
    /// `r^2 / 2` for `|r| <= delta`, `delta (|r| - delta / 2)` beyond.
    Huber { delta: f64 },
}

impl ResidualPenalty {
    pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

    #[inline]
    fn value_and_slope(&self, r: f64) -> (f64, f64) {
        match *self {
            ResidualPenalty::Mse => (r * r, 2.0 * r),
            ResidualPenalty::Huber { delta } => {
                if r.abs() <= delta {
                    (0.5 * r * r, r)
                } else {
                    (delta * (r.abs() - 0.5 * delta), delta * r.signum())
                }
            }
        }
    }
}

/// Which losses the log-sum-exp objective compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    Log,
    Linear,
}

/// Initialization grid for the five parameters (natural units; the
/// log-sum-exp variants use the logs of `e`, `a`, `b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectGrid {
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for DirectGrid {
    fn default() -> Self {
        DirectGrid {
            e: vec![0.5, 1.0, 2.0, 4.0],
            a: vec![1.0, 10.0, 100.0, 1000.0],
            b: vec![1.0, 10.0, 100.0, 1000.0],
            alpha: vec![0.1, 0.3, 0.5, 0.7],
            beta: vec![0.1, 0.3, 0.5, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectFitConfig {
    pub variant: DirectVariant,
    pub penalty: ResidualPenalty,
    pub gradient: GradientMode,
    /// Seed for the naive variant's random start.
    pub seed: u64,
    pub grid: DirectGrid,
    /// Bounds on `(alpha, beta)`; `E, A, B` are bounded below by 0 (natural
    /// variants) or unbounded (log-sum-exp variants).
    pub exponent_bounds: (f64, f64),
    /// Number of best grid nodes used as local starting points.
    pub starts: usize,
    pub normalization: Option<Normalization>,
    pub max_iter: usize,
}

impl Default for DirectFitConfig {
    fn default() -> Self {
        DirectFitConfig {
            variant: DirectVariant::Mle,
            penalty: ResidualPenalty::Mse,
            gradient: GradientMode::Analytic,
            seed: 0,
            grid: DirectGrid::default(),
            exponent_bounds: (1e-4, 1.5),
            starts: 1,
            normalization: None,
            max_iter: QuasiNewtonOptions::default().max_iter,
        }
    }
}

/// `(RSS, gradient)` of the raw-loss residual sum of squares at natural
/// parameters `[E, A, B, alpha, beta]`.
pub fn rss_objective_grad(params: &[f64; 5], data: &Dataset) -> Result<(f64, [f64; 5])> {
    let mut g = [0.0; 5];
    let f = rss_into(params, data, &mut g);
    if f.is_finite() && g.iter().all(|v| v.is_finite()) {
        return Ok((f, g));
    }
    // locate the offending datum
    let [e, a, b, al, be] = *params;
    for i in 0..data.len() {
        let tn = (-al * data.ln_n[i]).exp();
        let td = (-be * data.ln_d[i]).exp();
        let pred = e + a * tn + b * td;
        if !(pred.is_finite() && (a * data.ln_n[i] * tn).is_finite() && (b * data.ln_d[i] * td).is_finite()) {
            return Err(Error::NonFinite { index: i, what: "prediction or gradient term".into() });
        }
    }
    Err(Error::NonFinite { index: 0, what: "RSS overflow".into() })
}

#[inline]
fn rss_into(params: &[f64], data: &Dataset, g: &mut [f64]) -> f64 {
    let (e, a, b, al, be) = (params[0], params[1], params[2], params[3], params[4]);
    let mut f = 0.0;
    let mut ge = 0.0;
    let mut ga = 0.0;
    let mut gb = 0.0;
    let mut gal = 0.0;
    let mut gbe = 0.0;
    for i in 0..data.len() {
        let tn = (-al * data.ln_n[i]).exp();
        let td = (-be * data.ln_d[i]).exp();
        let r = data.loss[i] - (e + a * tn + b * td);
        f += r * r;
        ge += r;
        ga += r * tn;
        gb += r * td;
        gal += r * data.ln_n[i] * tn;
        gbe += r * data.ln_d[i] * td;
    }
    g[0] = -2.0 * ge;
    g[1] = -2.0 * ga;
    g[2] = -2.0 * gb;
    g[3] = 2.0 * a * gal;
    g[4] = 2.0 * b * gbe;
    f
}

/// Log-sum-exp objective and gradient at `[e, a, b, alpha, beta]`.
///
/// `log L_hat = logsumexp(e, a - alpha ln N, b - beta ln D)`, evaluated with
/// the max-subtraction trick. With [`LossScale::Log`] residuals are
/// `ln L - log L_hat`; with [`LossScale::Linear`] they are `L - L_hat`.
pub fn lse_objective_grad(
    params: &[f64; 5],
    data: &Dataset,
    penalty: ResidualPenalty,
    scale: LossScale,
) -> Result<(f64, [f64; 5])> {
    if scale == LossScale::Log {
        if let Some(i) = data.loss.iter().position(|l| !(*l > 0.0)) {
            return Err(Error::Domain(format!("loss at datum {i} is not positive; log undefined")));
        }
    }
    let mut g = [0.0; 5];
    let f = lse_into(params, data, penalty, scale, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: 0, what: "log-sum-exp objective".into() });
    }
    Ok((f, g))
}

/// `logsumexp` of three terms and their softmax weights.
#[inline]
pub fn logsumexp3(t: [f64; 3]) -> (f64, [f64; 3]) {
    let m = t[0].max(t[1]).max(t[2]);
    let w = [(t[0] - m).exp(), (t[1] - m).exp(), (t[2] - m).exp()];
    let s = w[0] + w[1] + w[2];
    (m + s.ln(), [w[0] / s, w[1] / s, w[2] / s])
}

#[inline]
fn lse_into(params: &[f64], data: &Dataset, penalty: ResidualPenalty, scale: LossScale, g: &mut [f64]) -> f64 {
    let (e, a, b, al, be) = (params[0], params[1], params[2], params[3], params[4]);
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut f = 0.0;
    for i in 0..data.len() {
        let (lse, w) = logsumexp3([e, a - al * data.ln_n[i], b - be * data.ln_d[i]]);
        // d(objective)/d(lse)
        let (rho, dlse) = match scale {
            LossScale::Log => {
                let (rho, slope) = penalty.value_and_slope(data.loss[i].ln() - lse);
                (rho, -slope)
            }
            LossScale::Linear => {
                let pred = lse.exp();
                let (rho, slope) = penalty.value_and_slope(data.loss[i] - pred);
                (rho, -slope * pred)
            }
        };
        f += rho;
        g[0] += dlse * w[0];
        g[1] += dlse * w[1];
        g[2] += dlse * w[2];
        g[3] -= dlse * w[1] * data.ln_n[i];
        g[4] -= dlse * w[2] * data.ln_d[i];
    }
    f
}

/// Raw-loss RSS of a surface on a dataset.
pub fn surface_rss(s: &LossSurface, data: &Dataset) -> f64 {
    let mut g = [0.0; 5];
    rss_into(&s.as_array(), data, &mut g)
}

fn naive_start(seed: u64, bounds: (f64, f64)) -> [f64; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: f64 = rng.random_range(0.0..1.0);
    let beta: f64 = rng.random_range(0.0..1.0);
    let e: f64 = rng.random_range(0.0..5.0);
    let a = 10f64.powf(rng.random_range(-2.0..3.0));
    let b = 10f64.powf(rng.random_range(-2.0..3.0));
    [e, a, b, alpha.clamp(bounds.0, bounds.1), beta.clamp(bounds.0, bounds.1)]
}

/// Best `k` nodes of the 5-D initialization grid, in (value, lexicographic index) order.
fn grid_seeds(data: &Dataset, cfg: &DirectFitConfig, lse: Option<LossScale>, k: usize) -> Vec<([f64; 5], f64)> {
    let gr = &cfg.grid;
    let tn: Vec<Vec<f64>> = gr.alpha.iter().map(|al| data.ln_n.iter().map(|l| (-al * l).exp()).collect()).collect();
    let td: Vec<Vec<f64>> = gr.beta.iter().map(|be| data.ln_d.iter().map(|l| (-be * l).exp()).collect()).collect();
    let log_loss: Vec<f64> = data.loss.iter().map(|l| l.ln()).collect();
    let mut nodes: Vec<([f64; 5], f64)> = Vec::with_capacity(gr.e.len() * gr.a.len() * gr.b.len() * 16);
    for &e in &gr.e {
        for &a in &gr.a {
            for &b in &gr.b {
                for (ia, &al) in gr.alpha.iter().enumerate() {
                    for (ib, &be) in gr.beta.iter().enumerate() {
                        let mut f = 0.0;
                        for i in 0..data.len() {
                            let pred = e + a * tn[ia][i] + b * td[ib][i];
                            let r = match lse {
                                Some(LossScale::Log) => log_loss[i] - pred.ln(),
                                _ => data.loss[i] - pred,
                            };
                            f += cfg_penalty(cfg, lse.is_some()).value_and_slope(r).0;
                        }
                        let p = match lse {
                            Some(_) => [e.ln(), a.ln(), b.ln(), al, be],
                            None => [e, a, b, al, be],
                        };
                        nodes.push((p, if f.is_finite() { f } else { f64::INFINITY }));
                    }
                }
            }
        }
    }
    // stable sort keeps lexicographic order among ties
    nodes.sort_by(|x, y| x.1.total_cmp(&y.1));
    nodes.truncate(k.max(1));
    nodes
}

fn cfg_penalty(cfg: &DirectFitConfig, lse: bool) -> ResidualPenalty {
    if lse {
        cfg.penalty
    } else {
        ResidualPenalty::Mse
    }
}

/// Fits all five surface parameters directly.
///
/// `naive` runs one local search from a seeded random start; the other
/// variants score the initialization grid and refine the best `starts` nodes
/// with the bounded quasi-Newton method. Returned parameters are in natural
/// units of the input data.
pub fn fit_direct(data: &Dataset, cfg: &DirectFitConfig) -> Result<FitResult> {
    if data.len() < 5 {
        return Err(Error::InsufficientData(format!("direct fit needs at least 5 points, got {}", data.len())));
    }
    if matches!(cfg.penalty, ResidualPenalty::Huber { .. }) && !matches!(cfg.variant, DirectVariant::LseLog | DirectVariant::LseLinear) {
        return Err(Error::Config("Huber penalty is only available with the log-sum-exp variants".into()));
    }
    let owned;
    let data = match cfg.normalization {
        Some(nz) => {
            owned = data.normalized(nz.n_scale, nz.d_scale);
            &owned
        }
        None => data,
    };
    let (lo, hi) = cfg.exponent_bounds;
    let lse = match cfg.variant {
        DirectVariant::LseLog => Some(LossScale::Log),
        DirectVariant::LseLinear => Some(LossScale::Linear),
        _ => None,
    };
    if lse == Some(LossScale::Log) {
        if let Some(i) = data.loss.iter().position(|l| !(*l > 0.0)) {
            return Err(Error::Domain(format!("loss at datum {i} is not positive; log undefined")));
        }
    }
    let bounds = match lse {
        Some(_) => Bounds::new(
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, lo, lo],
            vec![f64::INFINITY, f64::INFINITY, f64::INFINITY, hi, hi],
        )?,
        None => Bounds::new(vec![0.0, 0.0, 0.0, lo, lo], vec![f64::INFINITY, f64::INFINITY, f64::INFINITY, hi, hi])?,
    };
    let starts: Vec<[f64; 5]> = match cfg.variant {
        DirectVariant::Naive => vec![naive_start(cfg.seed, cfg.exponent_bounds)],
        _ => grid_seeds(data, cfg, lse, cfg.starts).into_iter().map(|(p, _)| p).collect(),
    };
    let opts = QuasiNewtonOptions { max_iter: cfg.max_iter, ..QuasiNewtonOptions::default() };
    let penalty = cfg.penalty;

    let run = |start: &[f64; 5]| -> OptimResult {
        match (lse, cfg.gradient) {
            (None, GradientMode::Analytic) => {
                bounded_quasi_newton(|x, g| rss_into(x, data, g), start, &bounds, opts)
            }
            (None, GradientMode::FiniteDifference) => {
                let mut g = [0.0; 5];
                bounded_quasi_newton_fd(|x| rss_into(x, data, &mut g), start, &bounds, opts)
            }
            (Some(scale), GradientMode::Analytic) => {
                bounded_quasi_newton(|x, g| lse_into(x, data, penalty, scale, g), start, &bounds, opts)
            }
            (Some(scale), GradientMode::FiniteDifference) => {
                let mut g = [0.0; 5];
                bounded_quasi_newton_fd(|x| lse_into(x, data, penalty, scale, &mut g), start, &bounds, opts)
            }
        }
    };
    let mut best: Option<OptimResult> = None;
    for s in &starts {
        let r = run(s);
        if r.f.is_finite() && best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::Optimization("objective non-finite at every start".into()))?;
    let p = &best.x;
    let fitted = match lse {
        Some(_) => LossSurface::new(p[0].exp(), p[1].exp(), p[2].exp(), p[3], p[4]),
        None => LossSurface::new(p[0], p[1], p[2], p[3], p[4]),
    };
    let rss = surface_rss(&fitted, data);
    let surface = cfg.normalization.map_or(fitted, |nz| nz.to_natural(&fitted));
    let method = match cfg.variant {
        DirectVariant::Naive => Method::DirectNaive,
        DirectVariant::Mle => Method::DirectMle,
        DirectVariant::LseLog => Method::DirectLseLog,
        DirectVariant::LseLinear => Method::DirectLseLinear,
    };
    Ok(FitResult::from_surface(method, surface, best.f, Some(rss), best.iterations, best.converged, cfg.normalization))
}
