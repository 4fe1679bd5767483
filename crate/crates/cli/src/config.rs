//! Declarative run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use isoflop_core::approach2::SweepAxis;
use isoflop_core::fit::{FitOptions, Normalization};
use isoflop_core::metrics::CostModel;
use isoflop_core::optim::GradientMode;
use isoflop_core::qc::QcConfig;
use isoflop_core::simulate::{standard_budgets, BiasSpec, GridSpec};
use isoflop_core::sweep::{GridWidth, SweepConfig};
use isoflop_core::{Error, LossSurface, Method, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Observations CSV; when absent the data are simulated from `surface`.
    pub input: Option<PathBuf>,
    /// Keep only rows with budget strictly below this value.
    pub max_budget: Option<f64>,
    /// Built-in surface name.
    pub surface: Option<String>,
    /// Explicit surface; takes precedence over `surface`.
    pub surface_params: Option<LossSurface>,
    pub budgets: Option<Vec<f64>>,
    pub grid: GridWidth,
    pub n_points: usize,
    pub bias: BiasSpec,
    pub sigma: f64,
    pub seed: u64,
    /// Empty means the command's default.
    pub methods: Vec<Method>,
    /// Run QC and fit only the clean points.
    pub apply_qc: bool,
    /// Budget the DCL is evaluated at.
    pub budget: Option<f64>,
    /// Fit providing the DCL reference when no surface is given.
    pub reference_method: Method,
    /// Bootstrap replicates for the DCL interval; 0 disables it.
    pub bootstrap: usize,
    /// `exponent_inference` or `data_efficiency`.
    pub preset: Option<String>,
    pub sweep: Option<SweepConfig>,
    pub fit: FitOptions,
    pub qc: QcConfig,
    pub cost: CostModel,
    /// JSON report path; stdout when absent.
    pub report: Option<PathBuf>,
    /// CSV table path.
    pub table: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            max_budget: None,
            surface: None,
            surface_params: None,
            budgets: None,
            grid: GridWidth::Named("L".into()),
            n_points: 15,
            bias: BiasSpec::None,
            sigma: 0.0,
            seed: 0,
            methods: Vec::new(),
            apply_qc: false,
            budget: None,
            reference_method: Method::DirectLseLog,
            bootstrap: 0,
            preset: None,
            sweep: None,
            fit: FitOptions::default(),
            qc: QcConfig::default(),
            cost: CostModel::default(),
            report: None,
            table: None,
            threads: None,
        }
    }
}

/// Flags mirroring the configuration keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Observations CSV
    #[arg(long, global = true, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Drop rows whose budget is not below this value
    #[arg(long, global = true, value_name = "FLOPS")]
    pub max_budget: Option<f64>,
    /// Built-in surface: symmetric, chinchilla or asymmetric
    #[arg(long, global = true)]
    pub surface: Option<String>,
    /// Explicit surface as E,A,B,alpha,beta
    #[arg(long, global = true, value_delimiter = ',', num_args = 5, value_name = "E,A,B,ALPHA,BETA")]
    pub surface_params: Option<Vec<f64>>,
    /// Compute budgets, comma separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "FLOPS")]
    pub budgets: Option<Vec<f64>>,
    /// Grid name (XS, S, L, XL) or half-width factor
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub n_points: Option<usize>,
    /// none, constant:F or drift:F
    #[arg(long, global = true)]
    pub bias: Option<String>,
    /// Standard deviation of additive loss noise
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fitting methods, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Fit only points that pass QC
    #[arg(long, global = true)]
    pub apply_qc: bool,
    /// Budget for the DCL report
    #[arg(long, global = true, value_name = "FLOPS")]
    pub budget: Option<f64>,
    #[arg(long, global = true)]
    pub reference_method: Option<String>,
    /// Bootstrap replicates for the DCL interval
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    /// Sweep preset: exponent_inference or data_efficiency
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Realizations per sweep cell
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    /// Variable the IsoFLOP curves are fit along: tokens or params
    #[arg(long, global = true)]
    pub axis: Option<String>,
    /// Gradient mode: analytic or finite_difference
    #[arg(long, global = true)]
    pub gradient: Option<String>,
    /// Fit on N/1e6 and D/1e9
    #[arg(long, global = true)]
    pub normalize: bool,
    #[arg(long, global = true)]
    pub mfu: Option<f64>,
    #[arg(long, global = true)]
    pub price_per_gpu_hour: Option<f64>,
    #[arg(long, global = true)]
    pub peak_flops_per_gpu: Option<f64>,
    /// JSON report path (stdout when absent)
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// CSV table path
    #[arg(long, global = true, value_name = "PATH")]
    pub table: Option<PathBuf>,
    /// Worker thread cap
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

fn parse_keyword<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_ascii_lowercase().replace('-', "_")))
        .map_err(|_| Error::Config(format!("invalid {what} '{value}'")))
}

pub fn parse_grid(value: &str) -> GridWidth {
    match value.parse::<f64>() {
        Ok(k) => GridWidth::Factor(k),
        Err(_) => GridWidth::Named(value.to_string()),
    }
}

pub fn parse_bias(value: &str) -> Result<BiasSpec> {
    let (kind, factor) = match value.split_once(':') {
        Some((k, f)) => {
            let f = f.parse::<f64>().map_err(|_| Error::Config(format!("invalid bias factor in '{value}'")))?;
            (k, Some(f))
        }
        None => (value, None),
    };
    let bias = match (kind.to_ascii_lowercase().as_str(), factor) {
        ("none", None) => BiasSpec::None,
        ("constant", Some(factor)) => BiasSpec::Constant { factor },
        ("drift", Some(end_factor)) => BiasSpec::Drift { end_factor },
        _ => return Err(Error::Config(format!("invalid bias '{value}' (expected none, constant:F or drift:F)"))),
    };
    bias.validate()?;
    Ok(bias)
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Overrides {
    /// Loads the config file, if any, and applies every flag on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = Some(v.clone());
                }
            )*};
        }
        set!(input, max_budget, surface, budgets, budget, report, table, threads);
        if let Some(p) = &self.surface_params {
            cfg.surface_params = Some(LossSurface::new(p[0], p[1], p[2], p[3], p[4]));
        }
        if let Some(g) = &self.grid {
            cfg.grid = parse_grid(g);
        }
        if let Some(n) = self.n_points {
            cfg.n_points = n;
        }
        if let Some(b) = &self.bias {
            cfg.bias = parse_bias(b)?;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(ms) = &self.methods {
            cfg.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        cfg.apply_qc |= self.apply_qc;
        if let Some(m) = &self.reference_method {
            cfg.reference_method = m.parse()?;
        }
        if let Some(b) = self.bootstrap {
            cfg.bootstrap = b;
        }
        if let Some(a) = &self.axis {
            let axis: SweepAxis = parse_keyword("axis", a)?;
            cfg.fit.axis = axis;
            cfg.qc.axis = axis;
        }
        if let Some(g) = &self.gradient {
            let g: GradientMode = parse_keyword("gradient mode", g)?;
            cfg.fit.gradient = g;
        }
        if self.normalize {
            cfg.fit.normalization = Some(Normalization::REAL_DATA);
        }
        if let Some(v) = self.mfu {
            cfg.cost.mfu = v;
        }
        if let Some(v) = self.price_per_gpu_hour {
            cfg.cost.price_per_gpu_hour = v;
        }
        if let Some(v) = self.peak_flops_per_gpu {
            cfg.cost.peak_flops_per_gpu = v;
        }
        if cfg.preset.is_some() && cfg.sweep.is_some() {
            return Err(Error::Config("give either `preset` or a [sweep] table, not both".into()));
        }
        if let Some(p) = self.preset.as_ref().or(cfg.preset.as_ref()) {
            cfg.sweep = Some(preset(p)?);
        }
        // the resolved config carries the expanded table, not the name
        cfg.preset = None;
        if let Some(r) = self.realizations {
            cfg.sweep.get_or_insert_with(SweepConfig::default).realizations = r;
        }
        cfg.fit.seed = cfg.seed;
        if let Some(s) = &mut cfg.sweep {
            s.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn preset(name: &str) -> Result<SweepConfig> {
    match name.to_ascii_lowercase().replace('-', "_").as_str() {
        "exponent_inference" => Ok(SweepConfig::exponent_inference()),
        "data_efficiency" => Ok(SweepConfig::data_efficiency()),
        _ => Err(Error::Config(format!("unknown preset '{name}' (expected exponent_inference or data_efficiency)"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.surface {
            if LossSurface::builtin(s).is_none() {
                return Err(Error::Config(format!(
                    "unknown surface '{s}' (expected one of {})",
                    LossSurface::BUILTIN_NAMES.join(", ")
                )));
            }
        }
        if let Some(s) = &self.surface_params {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(b) = &self.budgets {
            if b.is_empty() || b.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(Error::Config("budgets must be a non-empty list of positive numbers".into()));
            }
        }
        self.grid_spec()?;
        self.bias.validate()?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if let Some(c) = self.budget {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("budget must be positive, got {c}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        self.qc.validate()?;
        self.cost.validate()?;
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        self.grid.spec(self.n_points)
    }

    pub fn budgets_or_default(&self) -> Vec<f64> {
        self.budgets.clone().unwrap_or_else(standard_budgets)
    }

    /// The configured surface, explicit parameters first.
    pub fn surface(&self) -> Option<LossSurface> {
        self.surface_params.or_else(|| self.surface.as_deref().and_then(LossSurface::builtin))
    }

    pub fn methods_or(&self, default: &[Method]) -> Vec<Method> {
        if self.methods.is_empty() {
            default.to_vec()
        } else {
            self.methods.clone()
        }
    }
}
