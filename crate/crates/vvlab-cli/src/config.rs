//! Run configuration: JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vvlab::problem::FieldSpec;

/// Default `ε` list for subcommands that need one when neither config nor flags give it.
pub const EXAMPLE_EPS: [f64; 3] = [0.08, 0.04, 0.02];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Modules {
    #[serde(default = "yes")]
    pub weyl: bool,
    #[serde(default = "yes")]
    pub gaps: bool,
    #[serde(default = "yes")]
    pub localization: bool,
}

fn yes() -> bool {
    true
}

impl Default for Modules {
    fn default() -> Self {
        Self { weyl: true, gaps: true, localization: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub eps_list: Option<Vec<f64>>,
    /// Horizon `T`; defaults depend on the subcommand.
    #[serde(default)]
    pub t: Option<f64>,
    /// Horizon as a multiple of `T₁₆` (control) when `t` is absent.
    #[serde(default)]
    pub t_over_t16: Option<f64>,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub n_trunc: Option<usize>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default = "default_ppe")]
    pub points_per_eps: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub modules: Modules,
    #[serde(default = "default_modes")]
    pub localization_modes: Vec<usize>,
    #[serde(default = "default_k_start")]
    pub k_start: usize,
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
    #[serde(default)]
    pub with_t15: bool,
    #[serde(default = "default_target")]
    pub target_residual: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_m() -> f64 {
    0.5
}
fn default_theta() -> f64 {
    0.5
}
fn default_ppe() -> f64 {
    40.0
}
fn default_seed() -> u64 {
    2024
}
fn default_modes() -> Vec<usize> {
    vec![0, 3, 10]
}
fn default_k_start() -> usize {
    8
}
fn default_k_cap() -> usize {
    64
}
fn default_target() -> f64 {
    vvlab::moment::DEFAULT_TARGET_RESIDUAL
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config")
    }
}

/// Configuration failure; always exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}:{e}", path.display())))
    }

    /// Parses JSON; errors carry `line:column: message`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("{}:{}: {e}", e.line(), e.column())))
    }

    /// Field from `preset` or `field`; a preset flag takes precedence.
    pub fn field_spec(&self) -> Result<FieldSpec, ConfigError> {
        match (&self.preset, &self.field) {
            (Some(name), _) => FieldSpec::preset(name).ok_or_else(|| ConfigError(format!("unknown preset `{name}`"))),
            (None, Some(f)) => Ok(f.clone()),
            (None, None) => Err(ConfigError("no field: set `field` or `preset`".into())),
        }
    }

    pub fn eps(&self) -> Result<Vec<f64>, ConfigError> {
        let list = self.eps_list.clone().ok_or_else(|| ConfigError("missing eps_list (config key or --eps)".into()))?;
        if list.is_empty() || list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(ConfigError(format!("eps_list must hold positive values, got {list:?}")));
        }
        Ok(list)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.m) {
            return Err(ConfigError(format!("m = {} not in [0, 1)", self.m)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ConfigError(format!("theta = {} not in (0, 1)", self.theta)));
        }
        if !(self.points_per_eps > 0.0) {
            return Err(ConfigError("points_per_eps must be positive".into()));
        }
        if let Some(t) = self.t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError(format!("t = {t} must be positive")));
            }
        }
        if self.k_start == 0 || self.k_cap < self.k_start {
            return Err(ConfigError(format!("need 1 ≤ k_start ≤ k_cap, got {} and {}", self.k_start, self.k_cap)));
        }
        Ok(())
    }
}

/// Parses `0.08,0.04` into a list.
pub fn parse_eps_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| ConfigError(format!("--eps entry `{p}`: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.m, 0.5);
        assert_eq!(c.seed, 2024);
        assert!(c.modules.weyl && c.modules.localization);
        assert!(c.eps().is_err());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = RunConfig::parse("{\n  \"m\": 0.5,\n  oops\n}").unwrap_err();
        assert!(err.0.starts_with("3:3:"), "{}", err.0);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn eps_flag_parsing() {
        assert_eq!(parse_eps_list("0.08, 0.04").unwrap(), vec![0.08, 0.04]);
        assert!(parse_eps_list("0.08,x").is_err());
    }

    #[test]
    fn preset_overrides_field() {
        let c = RunConfig::parse(r#"{"preset": "flat", "field": {"kind": "example", "M": 1, "a": 2, "sign": "minus", "L": 2}}"#).unwrap();
        assert_eq!(c.field_spec().unwrap(), FieldSpec::preset("flat").unwrap());
    }
}
