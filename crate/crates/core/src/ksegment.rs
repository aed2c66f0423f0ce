//! The K-segment ensemble: one boosted-tree submodel per prior-assessment
//! quantile segment, combined at prediction time by a smoothing rule.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PropertyRecord, QuantileIndex};
use crate::error::{Error, Result};
use crate::gbm::{self, GbmConfig, GbmModel};
use crate::segmentation::{assign_segment, weights, SegmentationScheme, SmoothingSpec, WeightVector};

pub const KSEGMENT_FORMAT_VERSION: &str = "ksegment/1";

#[derive(Debug, Clone, PartialEq)]
pub struct KSegmentModel {
    scheme: SegmentationScheme,
    spec: SmoothingSpec,
    submodels: Vec<GbmModel>,
    prior_index: QuantileIndex,
    feature_dim: usize,
}

impl KSegmentModel {
    pub fn from_parts(
        scheme: SegmentationScheme,
        spec: SmoothingSpec,
        submodels: Vec<GbmModel>,
        prior_index: QuantileIndex,
    ) -> Result<Self> {
        spec.validate(&scheme)?;
        if submodels.len() != scheme.num_segments() {
            return Err(Error::Training(format!(
                "{} submodels for {} segments",
                submodels.len(),
                scheme.num_segments()
            )));
        }
        let feature_dim = submodels[0].feature_dim;
        if submodels.iter().any(|m| m.feature_dim != feature_dim) {
            return Err(Error::Training("submodels disagree on feature dimension".into()));
        }
        Ok(Self {
            scheme,
            spec,
            submodels,
            prior_index,
            feature_dim,
        })
    }

    pub fn scheme(&self) -> &SegmentationScheme {
        &self.scheme
    }

    pub fn spec(&self) -> &SmoothingSpec {
        &self.spec
    }

    pub fn submodels(&self) -> &[GbmModel] {
        &self.submodels
    }

    pub fn prior_index(&self) -> &QuantileIndex {
        &self.prior_index
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_segments(&self) -> usize {
        self.submodels.len()
    }

    /// Same ensemble under a different combination rule. Submodels are shared
    /// because training never depends on the smoothing rule.
    pub fn with_spec(&self, spec: SmoothingSpec) -> Result<Self> {
        spec.validate(&self.scheme)?;
        Ok(Self {
            spec,
            ..self.clone()
        })
    }

    /// Quantile of a prior assessment within the training population.
    pub fn quantile(&self, prior_assessment: f64) -> f64 {
        self.prior_index.quantile_of(prior_assessment)
    }

    pub fn weights_at(&self, y: f64) -> Result<WeightVector> {
        weights(&self.scheme, &self.spec, y)
    }

    /// Combined prediction for given features at an explicit quantile.
    pub fn assess_at(&self, features: &[f64], y: f64) -> Result<f64> {
        if features.len() != self.feature_dim {
            return Err(Error::Prediction(format!(
                "expected {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        let w = self.weights_at(y)?;
        let mut value = 0.0;
        for (wk, model) in w.as_slice().iter().zip(&self.submodels) {
            if *wk > 0.0 {
                value += wk * model.predict(features)?;
            }
        }
        Ok(value)
    }

    pub fn assess(&self, record: &PropertyRecord) -> Result<f64> {
        self.assess_at(&record.features, self.quantile(record.prior_assessment))
    }

    pub fn assess_all(&self, records: &[PropertyRecord]) -> Result<Vec<f64>> {
        records.iter().map(|r| self.assess(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            version: KSEGMENT_FORMAT_VERSION.into(),
            scheme: self.scheme.clone(),
            spec: self.spec.clone(),
            feature_dim: self.feature_dim,
            prior_index: self.prior_index.sorted_values().to_vec(),
            submodels: self
                .submodels
                .iter()
                .map(GbmModel::to_json_value)
                .collect::<Result<_>>()?,
        };
        serde_json::to_string(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.version != KSEGMENT_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported ensemble version `{}` (expected `{KSEGMENT_FORMAT_VERSION}`)",
                doc.version
            )));
        }
        let submodels = doc
            .submodels
            .into_iter()
            .map(GbmModel::from_json_value)
            .collect::<Result<Vec<_>>>()?;
        let prior_index =
            QuantileIndex::from_sorted(doc.prior_index).map_err(|e| Error::Serialization(e.to_string()))?;
        let model = Self::from_parts(doc.scheme, doc.spec, submodels, prior_index)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        if model.feature_dim != doc.feature_dim {
            return Err(Error::Serialization("feature_dim does not match submodels".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: String,
    scheme: SegmentationScheme,
    spec: SmoothingSpec,
    feature_dim: usize,
    prior_index: Vec<f64>,
    submodels: Vec<serde_json::Value>,
}

/// Hard segment assignment of each training record, using a quantile index
/// over the records' own prior assessments.
pub fn segment_populations(
    train: &[PropertyRecord],
    scheme: &SegmentationScheme,
) -> Result<(QuantileIndex, Vec<Vec<usize>>)> {
    let priors: Vec<f64> = train.iter().map(|r| r.prior_assessment).collect();
    let index = QuantileIndex::new(&priors).map_err(|e| Error::Training(e.to_string()))?;
    let mut groups = vec![Vec::new(); scheme.num_segments()];
    for (i, r) in train.iter().enumerate() {
        let k = assign_segment(scheme, index.quantile_of(r.prior_assessment))?;
        groups[k - 1].push(i);
    }
    Ok((index, groups))
}

pub fn train_ksegment(
    train: &[PropertyRecord],
    scheme: &SegmentationScheme,
    spec: &SmoothingSpec,
    config: &GbmConfig,
) -> Result<KSegmentModel> {
    let configs = vec![config.clone(); scheme.num_segments()];
    train_ksegment_with(train, scheme, spec, &configs)
}

/// Trains with one booster configuration per segment.
pub fn train_ksegment_with(
    train: &[PropertyRecord],
    scheme: &SegmentationScheme,
    spec: &SmoothingSpec,
    configs: &[GbmConfig],
) -> Result<KSegmentModel> {
    spec.validate(scheme)?;
    if configs.len() != scheme.num_segments() {
        return Err(Error::Training(format!(
            "{} booster configs for {} segments",
            configs.len(),
            scheme.num_segments()
        )));
    }
    if let Some(i) = train.iter().position(|r| r.sale_price.is_none()) {
        return Err(Error::Training(format!("training record {i} has no sale price")));
    }
    let (prior_index, groups) = segment_populations(train, scheme)?;
    for (k, members) in groups.iter().enumerate() {
        let needed = configs[k].min_samples_leaf.max(2);
        if members.len() < needed {
            let (lo, hi) = scheme.interval(k + 1);
            return Err(Error::Training(format!(
                "segment {} covering quantiles [{lo}, {hi}] has {} training records, needs {needed}",
                k + 1,
                members.len()
            )));
        }
    }

    let submodels = groups
        .par_iter()
        .zip(configs.par_iter())
        .map(|(members, cfg)| {
            let features: Vec<&[f64]> = members.iter().map(|&i| train[i].features.as_slice()).collect();
            let targets: Vec<f64> = members.iter().map(|&i| train[i].sale_price.unwrap()).collect();
            gbm::fit(&features, &targets, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    KSegmentModel::from_parts(scheme.clone(), spec.clone(), submodels, prior_index)
}
