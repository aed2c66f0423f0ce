//! Quantile segmentation and the rules that blend submodels near segment
//! boundaries.
//!
//! Segments are `[eta[k-1], eta[k]]` over the prior-assessment quantile.
//! Four combination rules are supported: hard assignment, a sigmoid blend
//! between adjacent submodels, and two exponential score weightings
//! normalized over all submodels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default score sharpness.
pub const DEFAULT_MU: f64 = 10.0;

/// Logistic function.
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct SegmentationScheme {
    eta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    eta: Vec<f64>,
}

impl TryFrom<SchemeRepr> for SegmentationScheme {
    type Error = Error;
    fn try_from(r: SchemeRepr) -> Result<Self> {
        Self::new(r.eta)
    }
}

impl From<SegmentationScheme> for SchemeRepr {
    fn from(s: SegmentationScheme) -> Self {
        SchemeRepr { eta: s.eta }
    }
}

impl SegmentationScheme {
    /// `eta` is the full boundary list `0 = eta[0] < ... < eta[K] = 1`.
    /// `K = 1` is accepted and describes the unsegmented model.
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.len() < 2 {
            return Err(Error::Domain("eta needs at least the two endpoints 0 and 1".into()));
        }
        if eta[0] != 0.0 || *eta.last().unwrap() != 1.0 {
            return Err(Error::Domain(format!("eta must start at 0 and end at 1, got {eta:?}")));
        }
        if eta.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain(format!("eta must be strictly increasing, got {eta:?}")));
        }
        Ok(Self { eta })
    }

    /// Builds the scheme from the interior thresholds `eta[1..K]`.
    pub fn from_interior(interior: &[f64]) -> Result<Self> {
        let mut eta = Vec::with_capacity(interior.len() + 2);
        eta.push(0.0);
        eta.extend_from_slice(interior);
        eta.push(1.0);
        Self::new(eta)
    }

    pub fn single() -> Self {
        Self { eta: vec![0.0, 1.0] }
    }

    pub fn num_segments(&self) -> usize {
        self.eta.len() - 1
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Closed interval of segment `k` (1-based).
    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.eta[k - 1], self.eta[k])
    }

    fn width(&self, k: usize) -> f64 {
        self.eta[k] - self.eta[k - 1]
    }
}

fn check_unit(y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile {y} lies outside [0, 1]")))
    }
}

/// 1-based segment of `y`. A point on an interior boundary `eta[k]` belongs to
/// segment `k + 1`; `y = 1` belongs to the last segment.
pub fn assign_segment(scheme: &SegmentationScheme, y: f64) -> Result<usize> {
    check_unit(y)?;
    let k = scheme.num_segments();
    // Number of interior boundaries <= y.
    let passed = scheme.eta[1..k].partition_point(|&b| b <= y);
    Ok(passed + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMethod {
    Unsmoothed,
    Quantile,
    MidpointScore,
    DistanceScore,
}

impl SmoothingMethod {
    pub const ALL: [SmoothingMethod; 4] = [
        SmoothingMethod::Unsmoothed,
        SmoothingMethod::Quantile,
        SmoothingMethod::MidpointScore,
        SmoothingMethod::DistanceScore,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            SmoothingMethod::Unsmoothed => "unsm",
            SmoothingMethod::Quantile => "q",
            SmoothingMethod::MidpointScore => "m-s",
            SmoothingMethod::DistanceScore => "d-s",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub method: SmoothingMethod,
    /// Blend widths below each interior boundary (quantile method).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    /// Blend end points above each interior boundary (quantile method).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

impl SmoothingSpec {
    pub fn unsmoothed() -> Self {
        Self {
            method: SmoothingMethod::Unsmoothed,
            lambda: Vec::new(),
            gamma: Vec::new(),
            mu: DEFAULT_MU,
        }
    }

    pub fn quantile(lambda: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self {
            method: SmoothingMethod::Quantile,
            lambda,
            gamma,
            mu: DEFAULT_MU,
        }
    }

    pub fn midpoint(mu: f64) -> Self {
        Self {
            method: SmoothingMethod::MidpointScore,
            lambda: Vec::new(),
            gamma: Vec::new(),
            mu,
        }
    }

    pub fn distance(mu: f64) -> Self {
        Self {
            method: SmoothingMethod::DistanceScore,
            lambda: Vec::new(),
            gamma: Vec::new(),
            mu,
        }
    }

    /// Checks the parameters against a scheme.
    ///
    /// For the quantile method every blend window `[eta_k - lambda_k, gamma_k)`
    /// must sit inside `[eta_{k-1}, eta_{k+1}]`, and consecutive windows must
    /// not overlap.
    pub fn validate(&self, scheme: &SegmentationScheme) -> Result<()> {
        match self.method {
            SmoothingMethod::Unsmoothed => Ok(()),
            SmoothingMethod::MidpointScore | SmoothingMethod::DistanceScore => {
                if self.mu > 0.0 && self.mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("mu must be positive, got {}", self.mu)))
                }
            }
            SmoothingMethod::Quantile => {
                let inner = scheme.num_segments() - 1;
                if self.lambda.len() != inner || self.gamma.len() != inner {
                    return Err(Error::Domain(format!(
                        "quantile smoothing needs {inner} lambda and gamma values, got {} and {}",
                        self.lambda.len(),
                        self.gamma.len()
                    )));
                }
                let eta = scheme.eta();
                let mut prev_end = 0.0;
                for k in 1..=inner {
                    let (l, g) = (self.lambda[k - 1], self.gamma[k - 1]);
                    let start = eta[k] - l;
                    if !(l > 0.0) {
                        return Err(Error::Domain(format!("lambda_{k} must be positive, got {l}")));
                    }
                    if start < eta[k - 1] {
                        return Err(Error::Domain(format!(
                            "lambda_{k} = {l} reaches below eta_{} = {}",
                            k - 1,
                            eta[k - 1]
                        )));
                    }
                    if !(eta[k] < g && g <= eta[k + 1]) {
                        return Err(Error::Domain(format!(
                            "gamma_{k} = {g} must lie in ({}, {}]",
                            eta[k],
                            eta[k + 1]
                        )));
                    }
                    if start < prev_end {
                        return Err(Error::Domain(format!(
                            "blend window {k} starts at {start}, before window {} ends at {prev_end}",
                            k - 1
                        )));
                    }
                    prev_end = g;
                }
                Ok(())
            }
        }
    }
}

/// The sigmoid blend `g_k`, decreasing from `sigmoid(5)` at
/// `eta_k - lambda_k` to `sigmoid(-5)` at `gamma_k`.
pub fn sigmoid_blend(scheme: &SegmentationScheme, spec: &SmoothingSpec, k: usize, y: f64) -> Result<f64> {
    if spec.method != SmoothingMethod::Quantile {
        return Err(Error::Domain("sigmoid blend requires the quantile method".into()));
    }
    if k == 0 || k >= scheme.num_segments() {
        return Err(Error::Domain(format!(
            "boundary index {k} outside 1..{}",
            scheme.num_segments() - 1
        )));
    }
    let (lambda, gamma) = (spec.lambda[k - 1], spec.gamma[k - 1]);
    let start = scheme.eta[k] - lambda;
    if !(start <= y && y <= gamma) {
        return Err(Error::Domain(format!("y = {y} outside blend domain [{start}, {gamma}]")));
    }
    Ok(blend_value(scheme.eta[k], lambda, gamma, y))
}

fn blend_value(eta_k: f64, lambda: f64, gamma: f64, y: f64) -> f64 {
    sigmoid(-10.0 / (gamma - eta_k + lambda) * (y - gamma) - 5.0)
}

/// Exponential scores against each segment's midpoint.
pub fn midpoint_scores(scheme: &SegmentationScheme, mu: f64, y: f64) -> Result<Vec<f64>> {
    check_unit(y)?;
    Ok((1..=scheme.num_segments())
        .map(|k| {
            let (lo, hi) = scheme.interval(k);
            let mid = (lo + hi) / 2.0;
            (-(mu / scheme.width(k)) * (y - mid).abs()).exp()
        })
        .collect())
}

/// Exponential scores against each closed segment; 1 inside the segment.
pub fn distance_scores(scheme: &SegmentationScheme, mu: f64, y: f64) -> Result<Vec<f64>> {
    check_unit(y)?;
    Ok((1..=scheme.num_segments())
        .map(|k| {
            let (lo, hi) = scheme.interval(k);
            let dist = if y < lo {
                lo - y
            } else if y > hi {
                y - hi
            } else {
                0.0
            };
            (-(mu / scheme.width(k)) * dist).exp()
        })
        .collect())
}

/// Nonnegative submodel weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    fn one_hot(k: usize, len: usize) -> Self {
        let mut w = vec![0.0; len];
        w[k - 1] = 1.0;
        Self(w)
    }

    fn normalized(scores: Vec<f64>) -> Self {
        let total: f64 = scores.iter().sum();
        Self(scores.into_iter().map(|s| s / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// 1-based index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate() {
            if w > self.0[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Submodel weights at quantile `y`.
///
/// The quantile method blends submodels `k` and `k + 1` on
/// `[eta_k - lambda_k, gamma_k)` with `g_k` and `1 - g_k`, and uses a single
/// submodel everywhere else.
pub fn weights(scheme: &SegmentationScheme, spec: &SmoothingSpec, y: f64) -> Result<WeightVector> {
    check_unit(y)?;
    let k = scheme.num_segments();
    match spec.method {
        SmoothingMethod::Unsmoothed => Ok(WeightVector::one_hot(assign_segment(scheme, y)?, k)),
        SmoothingMethod::MidpointScore => Ok(WeightVector::normalized(midpoint_scores(scheme, spec.mu, y)?)),
        SmoothingMethod::DistanceScore => Ok(WeightVector::normalized(distance_scores(scheme, spec.mu, y)?)),
        SmoothingMethod::Quantile => {
            let mut pure = 1;
            for b in 1..k {
                let (lambda, gamma) = (spec.lambda[b - 1], spec.gamma[b - 1]);
                let start = scheme.eta[b] - lambda;
                if y < start {
                    break;
                }
                if y < gamma {
                    let g = blend_value(scheme.eta[b], lambda, gamma, y);
                    let mut w = vec![0.0; k];
                    w[b - 1] = g;
                    w[b] = 1.0 - g;
                    return Ok(WeightVector(w));
                }
                pure = b + 1;
            }
            Ok(WeightVector::one_hot(pure, k))
        }
    }
}

/// A named segmentation together with the quantile-method parameters that
/// ship with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub scheme: SegmentationScheme,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Preset {
    pub fn spec(&self, method: SmoothingMethod) -> SmoothingSpec {
        SmoothingSpec {
            method,
            lambda: self.lambda.clone(),
            gamma: self.gamma.clone(),
            mu: DEFAULT_MU,
        }
    }
}

/// Three segments at quantiles 0.1 and 0.9.
pub fn k3_default() -> Preset {
    Preset {
        name: "k3-default",
        scheme: SegmentationScheme::from_interior(&[0.1, 0.9]).unwrap(),
        lambda: vec![0.1, 0.1],
        gamma: vec![0.2, 1.0],
    }
}

/// Five segments at quantiles 0.2, 0.35, 0.7 and 0.9.
pub fn k5_default() -> Preset {
    Preset {
        name: "k5-default",
        scheme: SegmentationScheme::from_interior(&[0.2, 0.35, 0.7, 0.9]).unwrap(),
        lambda: vec![0.15, 0.03, 0.1, 0.1],
        gamma: vec![0.3, 0.5, 0.73, 1.0],
    }
}

/// Five segments at 0.1, 0.35, 0.7 and 0.95, used to illustrate the score
/// weightings. Carries no quantile-method parameters.
pub fn k5_illustration() -> SegmentationScheme {
    SegmentationScheme::from_interior(&[0.1, 0.35, 0.7, 0.95]).unwrap()
}

pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "k3-default" => Some(k3_default()),
        "k5-default" => Some(k5_default()),
        _ => None,
    }
}
