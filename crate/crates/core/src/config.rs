//! Declarative experiment configuration (a single JSON document).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{CsvSchema, SplitSpec, SyntheticMarketConfig};
use crate::error::{Error, Result};
use crate::evaluation::{FairnessMeasure, R2Scale, DEFAULT_LOG_RANGE};
use crate::gbm::GbmConfig;
use crate::segmentation::{preset, SegmentationScheme, SmoothingMethod, SmoothingSpec, DEFAULT_MU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMarketConfig>,
    #[serde(default)]
    pub splits: SplitsConfig,
    #[serde(default)]
    pub gbm: GbmConfig,
    /// Name of the model that relative unfairness is measured against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_windows")]
    pub validation_windows: usize,
    /// Records dated at or after this period form the assessment set. When
    /// absent, synthetic data uses its roll period and CSV data uses the
    /// unsold rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment_period: Option<i64>,
    /// Refit on train + test before assessing.
    #[serde(default = "default_true")]
    pub refit_full: bool,
}

fn default_train_fraction() -> f64 {
    SplitSpec::default().train_fraction
}
fn default_windows() -> usize {
    SplitSpec::default().validation_windows
}
fn default_true() -> bool {
    true
}

impl Default for SplitsConfig {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            validation_windows: default_windows(),
            assessment_period: None,
            refit_full: true,
        }
    }
}

impl SplitsConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_windows: self.validation_windows,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(rename = "K", alias = "k", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Either the interior thresholds or the full list including 0 and 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    /// Built-in segmentation (`k3-default`, `k5-default`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "default_method")]
    pub smoothing: SmoothingMethod,
    #[serde(default)]
    pub params: SmoothingParams,
}

fn default_method() -> SmoothingMethod {
    SmoothingMethod::Unsmoothed
}

/// A model entry with its segmentation and smoothing fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub name: String,
    pub scheme: SegmentationScheme,
    pub spec: SmoothingSpec,
}

impl ModelConfig {
    pub fn resolve(&self, path: &str) -> Result<ResolvedModel> {
        let preset = match &self.preset {
            Some(name) => Some(
                preset(name).ok_or_else(|| Error::config(format!("{path}.preset"), format!("unknown preset `{name}`")))?,
            ),
            None => None,
        };
        let scheme = match (&self.eta, &preset) {
            (Some(eta), _) => {
                let full = if eta.first() == Some(&0.0) && eta.last() == Some(&1.0) && eta.len() >= 2 {
                    eta.clone()
                } else {
                    let mut v = vec![0.0];
                    v.extend(eta);
                    v.push(1.0);
                    v
                };
                SegmentationScheme::new(full).map_err(|e| Error::config(format!("{path}.eta"), e.to_string()))?
            }
            (None, Some(p)) => p.scheme.clone(),
            (None, None) => match self.k {
                Some(1) | None => SegmentationScheme::single(),
                Some(k) => {
                    return Err(Error::config(
                        format!("{path}.eta"),
                        format!("K = {k} needs eta or a preset"),
                    ))
                }
            },
        };
        if let Some(k) = self.k {
            if k != scheme.num_segments() {
                return Err(Error::config(
                    format!("{path}.K"),
                    format!("K = {k} but eta describes {} segments", scheme.num_segments()),
                ));
            }
        }
        let lambda = self
            .params
            .lambda
            .clone()
            .or_else(|| preset.as_ref().map(|p| p.lambda.clone()))
            .unwrap_or_default();
        let gamma = self
            .params
            .gamma
            .clone()
            .or_else(|| preset.as_ref().map(|p| p.gamma.clone()))
            .unwrap_or_default();
        let spec = SmoothingSpec {
            method: self.smoothing,
            lambda: if self.smoothing == SmoothingMethod::Quantile { lambda } else { Vec::new() },
            gamma: if self.smoothing == SmoothingMethod::Quantile { gamma } else { Vec::new() },
            mu: self.params.mu.unwrap_or(DEFAULT_MU),
        };
        spec.validate(&scheme)
            .map_err(|e| Error::config(format!("{path}.params"), e.to_string()))?;
        Ok(ResolvedModel {
            name: self.name.clone(),
            scheme,
            spec,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_alpha_values")]
    pub alpha_values: Vec<f64>,
}

fn default_n_values() -> Vec<usize> {
    vec![2, 3]
}
fn default_alpha_values() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 5.0]
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_values: default_n_values(),
            alpha_values: default_alpha_values(),
        }
    }
}

/// A fairness figure chosen for the Pareto axis, written `grp:<n>` or
/// `dev:<alpha>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSelector {
    pub measure: FairnessMeasure,
    pub param: f64,
}

impl std::str::FromStr for MetricSelector {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `grp:<n>` or `dev:<alpha>`, got `{s}`"))?;
        let param: f64 = param.parse().map_err(|_| format!("bad parameter in `{s}`"))?;
        let measure = match kind {
            "grp" => FairnessMeasure::Group,
            "dev" => FairnessMeasure::Deviation,
            _ => return Err(format!("unknown fairness measure `{kind}`")),
        };
        Ok(Self { measure, param })
    }
}

impl std::fmt::Display for MetricSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.measure {
            FairnessMeasure::Group => write!(f, "grp:{}", self.param),
            FairnessMeasure::Deviation => write!(f, "dev:{}", self.param),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_log_range")]
    pub log_range: (f64, f64),
    #[serde(default = "default_num_bins")]
    pub num_bins: usize,
    #[serde(default)]
    pub r2_scale: R2Scale,
    /// `assessment` or `test`.
    #[serde(default = "default_split")]
    pub fairness_split: String,
    /// R² split used as the Pareto accuracy axis.
    #[serde(default = "default_split")]
    pub pareto_split: String,
    #[serde(default = "default_pareto_metric")]
    pub pareto_metric: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_log_range() -> (f64, f64) {
    DEFAULT_LOG_RANGE
}
fn default_num_bins() -> usize {
    14
}
fn default_split() -> String {
    "assessment".into()
}
fn default_pareto_metric() -> String {
    "grp:2".into()
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            log_range: default_log_range(),
            num_bins: default_num_bins(),
            r2_scale: R2Scale::Raw,
            fairness_split: default_split(),
            pareto_split: default_split(),
            pareto_metric: default_pareto_metric(),
        }
    }
}

impl ReportConfig {
    pub fn pareto_selector(&self) -> Result<MetricSelector> {
        self.pareto_metric
            .parse()
            .map_err(|m: String| Error::config("report.pareto_metric", m))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(data) = &mut cfg.data {
            if data.path.is_relative() {
                if let Some(dir) = path.parent() {
                    data.path = dir.join(&data.path);
                }
            }
        }
        Ok(cfg)
    }

    /// Overrides every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.synthetic {
            s.seed = seed;
        }
        self.gbm.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("data", "give either `data` or `synthetic`, not both")),
            (None, None) => return Err(Error::config(".", "one of `data` or `synthetic` is required")),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            s.validate().map_err(|e| Error::config("synthetic", e.to_string()))?;
        }
        self.splits
            .split_spec()
            .validate()
            .map_err(|e| Error::config("splits", e.to_string()))?;
        self.gbm.validate().map_err(|e| Error::config("gbm", e.to_string()))?;
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let path = format!("models[{i}]");
            if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name.contains(',') {
                return Err(Error::config(format!("{path}.name"), format!("invalid model name `{}`", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::config(format!("{path}.name"), format!("duplicate model name `{}`", m.name)));
            }
            m.resolve(&path)?;
        }
        if let Some(b) = &self.baseline {
            if !names.contains(b.as_str()) {
                return Err(Error::config("baseline", format!("no model named `{b}`")));
            }
        }
        if self.metrics.n_values.iter().any(|&n| n < 2) {
            return Err(Error::config("metrics.n_values", "group counts must be at least 2"));
        }
        if self.metrics.alpha_values.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::config("metrics.alpha_values", "alpha values must be nonnegative"));
        }
        let r = &self.report;
        if r.num_bins < 2 {
            return Err(Error::config("report.num_bins", "need at least 2 bins"));
        }
        if !(r.log_range.0 < r.log_range.1) {
            return Err(Error::config("report.log_range", "lower bound must be below upper bound"));
        }
        for (key, split) in [("report.fairness_split", &r.fairness_split), ("report.pareto_split", &r.pareto_split)] {
            if !["train", "test", "assessment"].contains(&split.as_str()) {
                return Err(Error::config(key, format!("unknown split `{split}`")));
            }
        }
        if r.fairness_split == "train" {
            return Err(Error::config("report.fairness_split", "fairness is measured on `test` or `assessment`"));
        }
        let sel = r.pareto_selector()?;
        let known = match sel.measure {
            FairnessMeasure::Group => self.metrics.n_values.iter().any(|&n| n as f64 == sel.param),
            FairnessMeasure::Deviation => self.metrics.alpha_values.contains(&sel.param),
        };
        if !known {
            return Err(Error::config(
                "report.pareto_metric",
                format!("`{}` is not among the configured metrics", r.pareto_metric),
            ));
        }
        Ok(())
    }

    pub fn resolved_models(&self) -> Result<Vec<ResolvedModel>> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| m.resolve(&format!("models[{i}]")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "synthetic": {"num_properties": 100, "feature_dim": 2, "noise_scale": 0.1, "regressivity_strength": 0.4},
        "models": [{"name": "original", "K": 1}]
    }"#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.metrics.n_values, vec![2, 3]);
        assert_eq!(c.metrics.alpha_values, vec![0.0, 1.0, 2.0, 5.0]);
        assert_eq!(c.report.log_range, (9.0, 16.0));
        assert_eq!(c.splits.train_fraction, 0.9);
        let m = &c.resolved_models().unwrap()[0];
        assert_eq!(m.scheme.num_segments(), 1);
    }

    #[test]
    fn type_errors_carry_key_path() {
        let text = MINIMAL.replace(r#""K": 1"#, r#""K": "three""#);
        match ExperimentConfig::from_json(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "models[0].K"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_carry_key_path() {
        let text = MINIMAL.replace(
            r#"{"name": "original", "K": 1}"#,
            r#"{"name": "a", "K": 3, "eta": [0.5, 0.2]}"#,
        );
        match ExperimentConfig::from_json(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "models[0].eta"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace(r#""models""#, r#""baseline": "nope", "models""#);
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn presets_and_explicit_eta_agree() {
        let text = MINIMAL.replace(
            r#"{"name": "original", "K": 1}"#,
            r#"{"name": "a", "K": 5, "preset": "k5-default", "smoothing": "quantile"},
               {"name": "b", "K": 5, "eta": [0.2, 0.35, 0.7, 0.9], "smoothing": "quantile",
                "params": {"lambda": [0.15, 0.03, 0.1, 0.1], "gamma": [0.3, 0.5, 0.73, 1]}},
               {"name": "c", "K": 5, "eta": [0, 0.2, 0.35, 0.7, 0.9, 1], "smoothing": "distance_score", "params": {"mu": 10}}"#,
        );
        let c = ExperimentConfig::from_json(&text).unwrap();
        let m = c.resolved_models().unwrap();
        assert_eq!(m[0].scheme, m[1].scheme);
        assert_eq!(m[0].spec, m[1].spec);
        assert_eq!(m[2].scheme, m[0].scheme);
    }

    #[test]
    fn metric_selector_parsing() {
        let s: MetricSelector = "dev:2".parse().unwrap();
        assert_eq!(s.measure, FairnessMeasure::Deviation);
        assert_eq!(s.to_string(), "dev:2");
        assert!("foo:1".parse::<MetricSelector>().is_err());
        let text = MINIMAL.replace(r#""models""#, r#""report": {"pareto_metric": "grp:7"}, "models""#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
