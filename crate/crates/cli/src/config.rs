//! Run configuration, read from TOML. Unknown keys are rejected and every
//! key is optional:
//!
//! ```toml
//! seed = 1
//! deterministic = false
//! method = "slmm"                 # unmix
//! methods = ["kmeans", "nmf", "lmm", "slmm"]   # compare
//! realizations = 20
//! n_factors = 4
//! log_every = 0
//! out_dir = "."
//! # slice = 8                     # eval maps, default: middle slice
//! nmf_tol = 1e-3
//! nmf_max_iters = 1000
//!
//! [hyperparameters]
//! alpha = 0.01
//! beta = 0.01
//! lambda = 0.02
//! epsilon = 1e-3
//! max_iters = 500
//! gamma = 0.99
//!
//! [phantom]
//! dims = [32, 32, 16]
//! snr_db = 15.0                   # or "inf"
//! fwhm_mm = 4.4
//! # ... see `PhantomConfig`
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use slmm_core::eval::{ExperimentConfig, Method};
use slmm_core::phantom::PhantomConfig;
use slmm_core::Hyperparameters;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Leave wall-clock measurements out of every output file.
    pub deterministic: bool,
    pub method: Method,
    pub methods: Vec<Method>,
    pub realizations: usize,
    pub n_factors: usize,
    pub log_every: usize,
    pub out_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
    pub nmf_tol: f64,
    pub nmf_max_iters: usize,
    pub hyperparameters: Hyperparameters,
    pub phantom: PhantomConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        RunConfig {
            seed: 1,
            deterministic: false,
            method: Method::Slmm,
            methods: exp.methods,
            realizations: exp.realizations,
            n_factors: 4,
            log_every: 0,
            out_dir: ".".into(),
            slice: None,
            nmf_tol: exp.nmf_tol,
            nmf_max_iters: exp.nmf_max_iters,
            hyperparameters: exp.hyperparameters,
            phantom: exp.phantom,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is representable in JSON")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| CliError::Data(format!("embedded config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: slmm_core::Error| CliError::Usage(e.to_string());
        self.hyperparameters.validate().map_err(usage)?;
        self.phantom.validate().map_err(usage)?;
        if self.methods.is_empty() {
            return Err(CliError::Usage("methods: need at least one".into()));
        }
        if self.realizations == 0 {
            return Err(CliError::Usage("realizations: need at least one".into()));
        }
        if self.n_factors == 0 {
            return Err(CliError::Usage("n_factors: need at least one".into()));
        }
        if !(self.nmf_tol > 0.0) {
            return Err(CliError::Usage("nmf_tol: must be > 0".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            phantom: self.phantom.clone(),
            hyperparameters: self.hyperparameters,
            methods: self.methods.clone(),
            realizations: self.realizations,
            nmf_tol: self.nmf_tol,
            nmf_max_iters: self.nmf_max_iters,
        }
    }
}

/// Parses `--snr`: a number of dB or `inf`.
pub fn parse_snr(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(v) if v == f64::INFINITY => Ok(None),
        _ => Err(CliError::Usage(format!("--snr: expected a number of dB or `inf`, got `{s}`"))),
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    Method::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown method `{s}` (expected one of slmm, lmm, nmf, kmeans)"))
    })
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub methods: Vec<Method>,
    pub snr_db: Option<Option<f64>>,
    pub out_dir: Option<String>,
    pub realizations: Option<usize>,
    pub log_every: Option<usize>,
    pub slice: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.deterministic |= self.deterministic;
        if let Some(&m) = self.methods.first() {
            cfg.method = m;
            cfg.methods = self.methods.clone();
        }
        if let Some(snr) = self.snr_db {
            cfg.phantom.snr_db = snr;
        }
        if let Some(out) = &self.out_dir {
            cfg.out_dir = out.clone();
        }
        if let Some(r) = self.realizations {
            cfg.realizations = r;
        }
        if let Some(n) = self.log_every {
            cfg.log_every = n;
        }
        if self.slice.is_some() {
            cfg.slice = self.slice;
        }
        cfg.validate()
    }
}
