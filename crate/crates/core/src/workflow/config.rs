//! Pipeline configuration (TOML).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::estimate::{FitConfig, Structure};
use crate::model::Dims;

/// Surrogate model dimensions shared by the LTI and LPV stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_x: usize,
    pub n_p: usize,
    pub hidden: Vec<usize>,
    /// Fix the feedthrough `D` to zero.
    pub d_zero: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_x: 6,
            n_p: 1,
            hidden: vec![3, 3],
            d_zero: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtiConfig {
    /// Noise covariance is `sigma_e_scale * I`; it only rescales the cost of
    /// the maximum-likelihood fit.
    pub sigma_e_scale: f64,
    pub fit: FitConfig,
}

impl Default for LtiConfig {
    fn default() -> Self {
        let mut fit = FitConfig::lti_default();
        fit.lbfgs.max_iterations = 2000;
        Self { sigma_e_scale: 1.0, fit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpvConfig {
    /// Prior variance of the `M_0` entries around the LTI estimate.
    pub m0_prior_var: f64,
    /// Prior variance of every other parameter (zero mean).
    pub prior_var: f64,
    /// Noise covariance `sigma_e_scale * I` on normalized outputs.
    pub sigma_e_scale: f64,
    pub fit: FitConfig,
}

impl Default for LpvConfig {
    fn default() -> Self {
        Self {
            m0_prior_var: 0.25,
            prior_var: 10.0,
            sigma_e_scale: 100.0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Bounds are `mean +- n_sigma * sd`.
    pub n_sigma: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { n_sigma: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub benchmark: BenchmarkConfig,
    pub model: ModelConfig,
    pub lti: LtiConfig,
    pub lpv: LpvConfig,
    pub predict: PredictConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // tagged enums are replaced whole so stale variant fields vanish
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl PipelineConfig {
    /// Parses `text` as overrides of [`PipelineConfig::default`]: tables are
    /// merged key by key, so a partial `[lti.fit]` keeps the LTI defaults
    /// for everything it does not mention.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        if self.model.n_x == 0 {
            return Err(Error::Config("n_x must be at least 1".into()));
        }
        if self.model.n_p > 0 && self.model.hidden.iter().any(|h| *h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        positive(self.lti.sigma_e_scale, "lti.sigma_e_scale")?;
        positive(self.lpv.sigma_e_scale, "lpv.sigma_e_scale")?;
        positive(self.lpv.m0_prior_var, "lpv.m0_prior_var")?;
        positive(self.lpv.prior_var, "lpv.prior_var")?;
        positive(self.predict.n_sigma, "predict.n_sigma")?;
        self.lti.fit.validate()?;
        self.lpv.fit.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization, so formatting and
    /// comments in the source file do not affect it.
    pub fn digest(&self) -> Result<String> {
        let canonical = self.to_toml()?;
        let hash = Sha256::digest(canonical.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn lpv_structure(&self, n_u: usize, n_y: usize) -> Structure {
        Structure {
            dims: Dims::new(self.model.n_x, n_u, n_y, self.model.n_p),
            hidden: if self.model.n_p == 0 { Vec::new() } else { self.model.hidden.clone() },
            d_zero: self.model.d_zero,
        }
    }

    pub fn lti_structure(&self, n_u: usize, n_y: usize) -> Structure {
        Structure {
            d_zero: self.model.d_zero,
            ..Structure::lti(self.model.n_x, n_u, n_y)
        }
    }
}
