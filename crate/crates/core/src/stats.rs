//! Small statistics kit: robust scale, Akima interpolation, rank and
//! variance-homogeneity tests, and Student-t quantiles.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

/// Gaussian consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (denominator `n - 1`); 0 for fewer than two values.
pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median absolute deviation scaled by [`MAD_SCALE`].
pub fn scaled_mad(v: &[f64]) -> f64 {
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    MAD_SCALE * median(&dev)
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted data.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Two-sided Student-t critical value `t_{df, 1 - (1 - level) / 2}`.
pub fn t_critical(df: f64, level: f64) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(format!("t distribution: {e}")))?;
    Ok(t.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Akima spline through strictly increasing knots.
///
/// Outside the knot range the spline continues linearly along the end
/// tangent.
#[derive(Debug, Clone)]
pub struct Akima {
    x: Vec<f64>,
    y: Vec<f64>,
    t: Vec<f64>,
}

impl Akima {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InsufficientData("Akima spline needs at least 2 matching knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("Akima knots must be strictly increasing".into()));
        }
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            return Ok(Akima { x: x.to_vec(), y: y.to_vec(), t: vec![s, s] });
        }
        // secant slopes with two ghost slopes on each side: m[k + 2] = slope of segment k
        let mut m = vec![0.0; n + 3];
        for k in 0..n - 1 {
            m[k + 2] = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
        }
        m[1] = 2.0 * m[2] - m[3];
        m[0] = 2.0 * m[1] - m[2];
        m[n + 1] = 2.0 * m[n] - m[n - 1];
        m[n + 2] = 2.0 * m[n + 1] - m[n];
        let t = (0..n)
            .map(|i| {
                let w1 = (m[i + 3] - m[i + 2]).abs();
                let w2 = (m[i + 1] - m[i]).abs();
                if w1 + w2 == 0.0 {
                    0.5 * (m[i + 1] + m[i + 2])
                } else {
                    (w1 * m[i + 1] + w2 * m[i + 2]) / (w1 + w2)
                }
            })
            .collect();
        Ok(Akima { x: x.to_vec(), y: y.to_vec(), t })
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let n = self.x.len();
        if xq <= self.x[0] {
            return self.y[0] + self.t[0] * (xq - self.x[0]);
        }
        if xq >= self.x[n - 1] {
            return self.y[n - 1] + self.t[n - 1] * (xq - self.x[n - 1]);
        }
        let k = self.x.partition_point(|v| *v <= xq) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (self.y[k + 1] - self.y[k]) / h;
        let u = xq - self.x[k];
        let c2 = (3.0 * s - 2.0 * self.t[k] - self.t[k + 1]) / h;
        let c3 = (self.t[k] + self.t[k + 1] - 2.0 * s) / (h * h);
        self.y[k] + u * (self.t[k] + u * (c2 + u * c3))
    }
}

/// Test statistic and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

fn check_groups(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InsufficientData("need at least 2 groups of at least 2 values".into()));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in test input".into()));
    }
    Ok(())
}

/// Average ranks (1-based) of pooled values, with the tie term `sum(t^3 - t)`.
fn pooled_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H test with tie correction; chi-square p-value.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestOutcome> {
    check_groups(groups)?;
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = pooled_ranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(TestOutcome { statistic: 0.0, p_value: 1.0 });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let chi = ChiSquared::new((groups.len() - 1) as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(TestOutcome { statistic: h, p_value: chi.sf(h) })
}

/// Levene's test in the Brown-Forsythe form (deviations from group medians);
/// F p-value.
pub fn levene(groups: &[Vec<f64>]) -> Result<TestOutcome> {
    check_groups(groups)?;
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    let k = z.len() as f64;
    let n: f64 = z.iter().map(|g| g.len() as f64).sum();
    let grand = z.iter().flatten().sum::<f64>() / n;
    let means: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let between: f64 = z.iter().zip(&means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let within: f64 = z.iter().zip(&means).map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sum();
    let scale = z.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if within <= 1e-28 * scale * scale * n || within == 0.0 {
        let p = if between <= 1e-28 * scale * scale * n { 1.0 } else { 0.0 };
        return Ok(TestOutcome { statistic: if p == 1.0 { 0.0 } else { f64::INFINITY }, p_value: p });
    }
    let w = (n - k) / (k - 1.0) * between / within;
    let f = FisherSnedecor::new(k - 1.0, n - k).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(TestOutcome { statistic: w, p_value: f.sf(w) })
}
