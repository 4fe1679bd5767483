//! Observed `(N, D, loss)` triples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training run: parameters, tokens and final loss, tagged with its
/// nominal compute budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Nominal budget the run belongs to (FLOPs).
    pub budget: f64,
    pub n: f64,
    pub d: f64,
    pub loss: f64,
}

impl Observation {
    /// Compute implied by the run, `6 N D`.
    pub fn implied_compute(&self) -> f64 {
        6.0 * self.n * self.d
    }
}

/// Column-oriented view of observations with cached natural logs, used by
/// the surface-fitting objectives.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub n: Vec<f64>,
    pub d: Vec<f64>,
    pub loss: Vec<f64>,
    pub ln_n: Vec<f64>,
    pub ln_d: Vec<f64>,
}

impl Dataset {
    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let mut ds = Dataset::default();
        for (i, o) in obs.iter().enumerate() {
            if !(o.n > 0.0 && o.d > 0.0) || !o.n.is_finite() || !o.d.is_finite() || !o.loss.is_finite() {
                return Err(Error::NonFinite { index: i, what: format!("invalid observation {o:?}") });
            }
            ds.n.push(o.n);
            ds.d.push(o.d);
            ds.loss.push(o.loss);
            ds.ln_n.push(o.n.ln());
            ds.ln_d.push(o.d.ln());
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// Rescales inputs to `N / n_scale` and `D / d_scale`.
    pub fn normalized(&self, n_scale: f64, d_scale: f64) -> Dataset {
        let n: Vec<f64> = self.n.iter().map(|v| v / n_scale).collect();
        let d: Vec<f64> = self.d.iter().map(|v| v / d_scale).collect();
        Dataset {
            ln_n: n.iter().map(|v| v.ln()).collect(),
            ln_d: d.iter().map(|v| v.ln()).collect(),
            n,
            d,
            loss: self.loss.clone(),
        }
    }

    pub(crate) fn distinct_count(values: &[f64]) -> usize {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
        v.len()
    }
}

/// Groups observations by exact nominal budget, budgets ascending. Order
/// within a group follows input order.
pub fn group_by_budget(obs: &[Observation]) -> Vec<(f64, Vec<Observation>)> {
    let mut budgets: Vec<f64> = obs.iter().map(|o| o.budget).collect();
    budgets.sort_by(|a, b| a.total_cmp(b));
    budgets.dedup();
    budgets
        .into_iter()
        .map(|c| (c, obs.iter().filter(|o| o.budget == c).copied().collect()))
        .collect()
}
