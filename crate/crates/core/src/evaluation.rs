//! Accuracy, regressivity trends and the accuracy–fairness frontier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::RatioSample;
use crate::segmentation::{SegmentationScheme, SmoothingSpec};

/// Default log-price analysis window.
pub const DEFAULT_LOG_RANGE: (f64, f64) = (9.0, 16.0);

/// Rounds to 10 significant digits, the precision used in reports.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x + 0.0;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(Error::UndefinedVariance(format!(
            "need equal non-empty inputs, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 || truths.iter().all(|&t| t == truths[0]) {
        return Err(Error::UndefinedVariance("all truths are identical".into()));
    }
    let ss_res: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendBin {
    pub bin_center_logprice: f64,
    /// Absent for empty bins.
    pub median_ratio: Option<f64>,
    pub count: usize,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median ratio in equal-width bins of log sale price over `[lo, hi]`;
/// samples outside the window are dropped.
pub fn trend_bins(samples: &[RatioSample], num_bins: usize, log_range: (f64, f64)) -> Result<Vec<TrendBin>> {
    let (lo, hi) = log_range;
    if num_bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {num_bins}")));
    }
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty log range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / num_bins as f64;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); num_bins];
    for s in samples {
        let lx = s.sale_price.ln();
        if !(lo..=hi).contains(&lx) {
            continue;
        }
        let b = (((lx - lo) / width) as usize).min(num_bins - 1);
        bins[b].push(s.ratio);
    }
    Ok(bins
        .iter_mut()
        .enumerate()
        .map(|(b, ratios)| TrendBin {
            bin_center_logprice: lo + width * (b as f64 + 0.5),
            count: ratios.len(),
            median_ratio: median(ratios),
        })
        .collect())
}

/// Largest minus smallest median over bins holding at least `min_count`
/// samples (`min_count = 1` covers every occupied bin).
pub fn trend_spread(bins: &[TrendBin], min_count: usize) -> Option<f64> {
    let medians: Vec<f64> = bins
        .iter()
        .filter(|b| b.count >= min_count.max(1))
        .filter_map(|b| b.median_ratio)
        .collect();
    if medians.is_empty() {
        return None;
    }
    let max = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = medians.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

// ---------------------------------------------------------------------------
// Pareto analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub model: String,
    pub accuracy: f64,
    /// Nonpositive; larger is fairer.
    pub fairness: f64,
}

/// Indices into the input points, ordered by increasing accuracy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParetoFrontier {
    pub non_dominated: Vec<usize>,
    pub hull: Vec<usize>,
}

/// `q` weakly dominates `p` in both coordinates and strictly in one.
pub fn dominates(q: &ParetoPoint, p: &ParetoPoint) -> bool {
    q.accuracy >= p.accuracy && q.fairness >= p.fairness && (q.accuracy > p.accuracy || q.fairness > p.fairness)
}

fn cross(o: &ParetoPoint, a: &ParetoPoint, b: &ParetoPoint) -> f64 {
    (a.accuracy - o.accuracy) * (b.fairness - o.fairness) - (a.fairness - o.fairness) * (b.accuracy - o.accuracy)
}

/// Non-dominated points (both objectives maximized) and the vertices of their
/// upper-right convex hull. Collinear interior points are not hull vertices;
/// coincident points appear once in the hull.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Result<ParetoFrontier> {
    if let Some(p) = points.iter().find(|p| !(p.accuracy.is_finite() && p.fairness.is_finite())) {
        return Err(Error::Domain(format!("non-finite Pareto point for `{}`", p.model)));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .accuracy
            .total_cmp(&points[a].accuracy)
            .then(points[b].fairness.total_cmp(&points[a].fairness))
            .then(a.cmp(&b))
    });

    let mut non_dominated = Vec::new();
    let mut best_higher = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let acc = points[order[start]].accuracy;
        let end = start + order[start..].iter().take_while(|&&i| points[i].accuracy == acc).count();
        let group_max = points[order[start]].fairness;
        for &i in &order[start..end] {
            let f = points[i].fairness;
            if f == group_max && f > best_higher {
                non_dominated.push(i);
            }
        }
        best_higher = best_higher.max(group_max);
        start = end;
    }
    non_dominated.sort_by(|&a, &b| points[a].accuracy.total_cmp(&points[b].accuracy).then(a.cmp(&b)));

    let mut hull: Vec<usize> = Vec::new();
    for &i in &non_dominated {
        if let Some(&last) = hull.last() {
            if points[last].accuracy == points[i].accuracy && points[last].fairness == points[i].fairness {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if cross(&points[o], &points[a], &points[i]) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    Ok(ParetoFrontier { non_dominated, hull })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum R2Scale {
    #[default]
    Raw,
    Log,
}

pub fn r_squared_on(scale: R2Scale, predictions: &[f64], truths: &[f64]) -> Result<f64> {
    match scale {
        R2Scale::Raw => r_squared(predictions, truths),
        R2Scale::Log => {
            let p: Vec<f64> = predictions.iter().map(|v| v.ln()).collect();
            let t: Vec<f64> = truths.iter().map(|v| v.ln()).collect();
            r_squared(&p, &t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SplitR2 {
    pub train: Option<f64>,
    pub test: Option<f64>,
    pub assessment: Option<f64>,
}

impl SplitR2 {
    pub fn get(&self, split: &str) -> Option<f64> {
        match split {
            "train" => self.train,
            "test" => self.test,
            "assessment" => self.assessment,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMeasure {
    Group,
    Deviation,
}

/// One fairness figure: raw score and, when a baseline is declared, the ratio
/// to the baseline's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRecord {
    pub metric: FairnessMeasure,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    pub raw: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ru: Option<f64>,
}

impl FairnessRecord {
    pub fn label(&self) -> String {
        match self.metric {
            FairnessMeasure::Group => format!("F_grp(n={})", self.n.unwrap_or_default()),
            FairnessMeasure::Deviation => format!("F_dev(alpha={})", self.alpha.unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessBlock {
    pub split: String,
    pub num_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<String>,
    pub measures: Vec<FairnessRecord>,
}

impl FairnessBlock {
    pub fn find(&self, metric: FairnessMeasure, param: f64) -> Option<&FairnessRecord> {
        self.measures.iter().find(|r| {
            r.metric == metric
                && match metric {
                    FairnessMeasure::Group => r.n.map(|n| n as f64) == Some(param),
                    FairnessMeasure::Deviation => r.alpha == Some(param),
                }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: String,
    pub num_segments: usize,
    pub scheme: SegmentationScheme,
    pub smoothing: SmoothingSpec,
    pub data_seed: Option<u64>,
    pub gbm_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: ReportMetadata,
    pub r2_scale: R2Scale,
    pub r_squared: SplitR2,
    pub fairness: FairnessBlock,
    pub trend: Vec<TrendBin>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(a: f64, f: f64) -> ParetoPoint {
        ParetoPoint {
            model: format!("{a}/{f}"),
            accuracy: a,
            fairness: f,
        }
    }

    fn sample(price: f64, ratio: f64) -> RatioSample {
        RatioSample {
            sale_price: price,
            sale_quantile: 0.5,
            assessed_value: price * ratio,
            ratio,
        }
    }

    #[test]
    fn r_squared_cases() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0; 3], &t).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &t).unwrap(), 0.5);
        assert!(matches!(r_squared(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedVariance(_))));
        assert!(r_squared(&[], &[]).is_err());
        assert!(r_squared(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn round_sig_keeps_ten_digits() {
        assert_eq!(round_sig(0.123456789012345), 0.1234567890);
        assert_eq!(round_sig(-225094.61234567), -225094.6123);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(-0.0).is_sign_positive());
    }

    #[test]
    fn trend_bins_cases() {
        let flat: Vec<_> = (0..50).map(|i| sample((10.0 + i as f64 * 0.1).exp(), 1.0)).collect();
        let bins = trend_bins(&flat, 7, DEFAULT_LOG_RANGE).unwrap();
        assert_eq!(bins.len(), 7);
        assert!(bins.iter().filter(|b| b.count > 0).all(|b| b.median_ratio == Some(1.0)));
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 50);

        let outside = trend_bins(&[sample(8f64.exp(), 1.0)], 7, DEFAULT_LOG_RANGE).unwrap();
        assert!(outside.iter().all(|b| b.count == 0 && b.median_ratio.is_none()));

        let pair = trend_bins(&[sample(12f64.exp(), 0.8), sample(12.1f64.exp(), 1.2)], 7, DEFAULT_LOG_RANGE).unwrap();
        let occupied: Vec<_> = pair.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].median_ratio, Some(1.0));
        assert_eq!(occupied[0].bin_center_logprice, 12.5);

        assert!(trend_bins(&flat, 1, DEFAULT_LOG_RANGE).is_err());
        assert!(trend_bins(&flat, 4, (3.0, 3.0)).is_err());
    }

    #[test]
    fn trend_spread_respects_support() {
        let bin = |median: Option<f64>, count| TrendBin {
            bin_center_logprice: 0.0,
            median_ratio: median,
            count,
        };
        let bins = [bin(None, 0), bin(Some(2.0), 1), bin(Some(1.2), 30), bin(Some(0.7), 40)];
        assert_eq!(trend_spread(&bins, 0), Some(1.3));
        assert_eq!(trend_spread(&bins, 1), Some(1.3));
        assert!((trend_spread(&bins, 10).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(trend_spread(&bins, 100), None);
    }

    #[test]
    fn pareto_examples() {
        let f = pareto_frontier(&[pt(0.8, -0.5), pt(0.7, -0.6)]).unwrap();
        assert_eq!(f.non_dominated, vec![0]);
        assert_eq!(f.hull, vec![0]);

        let line = [pt(0.1, -0.1), pt(0.2, -0.2), pt(0.3, -0.3)];
        let f = pareto_frontier(&line).unwrap();
        assert_eq!(f.non_dominated, vec![0, 1, 2]);
        assert_eq!(f.hull, vec![0, 2]);

        let f = pareto_frontier(&[pt(0.5, -1.0)]).unwrap();
        assert_eq!((f.non_dominated, f.hull), (vec![0], vec![0]));
    }

    #[test]
    fn pareto_ties_and_duplicates() {
        let f = pareto_frontier(&[pt(0.5, -1.0), pt(0.5, -1.0), pt(0.5, -2.0)]).unwrap();
        assert_eq!(f.non_dominated, vec![0, 1]);
        assert_eq!(f.hull, vec![0]);
        // Concave bend: the middle point lies below the chord.
        let f = pareto_frontier(&[pt(0.0, 0.0), pt(0.5, -0.9), pt(1.0, -1.0)]).unwrap();
        assert_eq!(f.non_dominated, vec![0, 1, 2]);
        assert_eq!(f.hull, vec![0, 2]);
        assert!(pareto_frontier(&[pt(f64::NAN, 0.0)]).is_err());
        assert_eq!(pareto_frontier(&[]).unwrap().hull, Vec::<usize>::new());
    }
}
